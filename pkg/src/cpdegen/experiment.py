"""Replicated simulation runs: fit every method on fresh synthetic data, classify
the magnitude curve of the winning start, and tabulate divergent counts.

Output layout under the output directory::

    summary.csv                       one row per (setting, method)
    replications.csv                  one row per (setting, method, replication)
    <setting>/<method>/rep_<k>/trace.csv
    <setting>/<method>/rep_<k>/verdict.json
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .degeneracy import DEFAULT_CUTOFFS, classify_divergence, default_window, eigen_diagnostics
from .regression import FitConfig, FitTrace, LeastSquares, Method, fit_multi_start, parse_method
from .synth import TRUE_RANK, SynthSpec, generate_case

log = logging.getLogger(__name__)

PROFILES = {
    "desk": {"max_iterations": 20000, "replications": 10},
    "paper": {"max_iterations": 100000, "replications": 50},
}

TRACE_HEADER = ["iteration", "objective", "magnitude", "lambda_min_D"]
SUMMARY_HEADER = ["case", "n", "p0", "R", "R0", "method", "tuning", "replications", "divergent_count"]
REPLICATION_HEADER = [
    "case", "n", "p0", "R", "R0", "method", "tuning", "replication", "seed", "status",
    "divergent", "shortcut", "a_hat", "b_hat", "c_hat", "sse",
    "final_objective", "final_magnitude", "winning_start",
]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    synth: SynthSpec
    methods: tuple[Method, ...]
    ranks: tuple[int, ...] = (2,)
    max_iterations: int = PROFILES["desk"]["max_iterations"]
    replications: int = PROFILES["desk"]["replications"]
    num_starts: int = 5
    trace_stride: int | None = None
    seed: int = 0
    cutoffs: tuple[float, float, float] = DEFAULT_CUTOFFS
    diagnostics: bool = True
    out: Path = Path("results")
    workers: int = 1
    write_traces: bool = True

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("fit.methods: at least one method is required")
        if self.replications < 1:
            raise ConfigError("experiment.replications: must be >= 1")
        if not self.ranks or min(self.ranks) < 1:
            raise ConfigError("fit.ranks: ranks must be positive")
        if self.max_iterations < 2:
            raise ConfigError("fit.max_iterations: need at least 2 iterations")
        object.__setattr__(self, "out", Path(self.out))

    @property
    def stride(self) -> int:
        if self.trace_stride is not None:
            return self.trace_stride
        return default_window(self.max_iterations)[2]

    def fit_config(self, method: Method, rank: int, seed: int) -> FitConfig:
        T = self.max_iterations
        snaps = (T // 10, T) if self.diagnostics else ()
        return FitConfig(
            rank=rank, method=method, max_iterations=T, num_starts=self.num_starts, seed=seed,
            trace_stride=self.stride, snapshot_iterations=snaps, diagnostics=self.diagnostics,
        )


def _section(cp, name):
    return cp[name] if cp.has_section(name) else {}


def _get(section, name, key, conv, default):
    if key not in section:
        return default
    raw = section[key]
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}.{key}: {exc}") from None


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    val = str(text).strip().lower()
    if val in {"1", "true", "yes", "on"}:
        return True
    if val in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_cutoffs(text) -> tuple[float, float, float]:
    vals = _floats(text) if isinstance(text, str) else tuple(float(v) for v in text)
    if len(vals) != 3:
        raise ValueError(f"cutoffs need three values gamma_b,eta_c,gamma_c; got {text!r}")
    return vals


def load_config(path=None, *, text: str | None = None, profile: str | None = None,
                seed: int | None = None, cutoffs=None, out=None, workers: int | None = None) -> ExperimentConfig:
    """Read an INI-style experiment file.

    Values come from, in increasing priority: the profile (``desk`` unless the
    file or ``profile`` says otherwise), keys in the file, and keyword overrides.
    An explicit ``profile`` argument beats the file's own iteration and
    replication counts.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        if text is not None:
            cp.read_string(text)
        elif path is not None:
            with open(path) as fh:
                cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    exp, syn, fit, clf = (_section(cp, s) for s in ("experiment", "synth", "fit", "classifier"))

    prof_name = profile or _get(exp, "experiment", "profile", str, "desk")
    if prof_name not in PROFILES:
        raise ConfigError(f"experiment.profile: unknown profile {prof_name!r}")
    prof = PROFILES[prof_name]
    forced = profile is not None

    try:
        synth = SynthSpec(
            case=_get(syn, "synth", "case", str, "1a"),
            n=_get(syn, "synth", "n", int, 200),
            p0=_get(syn, "synth", "p0", int, 5),
            snr=_get(syn, "synth", "snr", float, 4.0),
        )
    except ValueError as exc:
        raise ConfigError(f"synth: {exc}") from None

    method_text = fit.get("methods", "LS") if fit else "LS"
    try:
        methods = tuple(parse_method(m) for m in method_text.split(",") if m.strip())
    except ValueError as exc:
        raise ConfigError(f"fit.methods: {exc}") from None

    T = prof["max_iterations"] if forced else _get(fit, "fit", "max_iterations", int, prof["max_iterations"])
    reps = prof["replications"] if forced else _get(exp, "experiment", "replications", int, prof["replications"])
    cfg = ExperimentConfig(
        synth=synth,
        methods=methods,
        ranks=_get(fit, "fit", "ranks", _ints, (2,)),
        max_iterations=T,
        replications=reps,
        num_starts=_get(fit, "fit", "num_starts", int, 5),
        trace_stride=_get(fit, "fit", "trace_stride", int, None),
        seed=_get(exp, "experiment", "seed", int, 0),
        cutoffs=_get(clf, "classifier", "cutoffs", parse_cutoffs, DEFAULT_CUTOFFS),
        diagnostics=_get(exp, "experiment", "diagnostics", _bool, True),
        out=Path(_get(exp, "experiment", "out", str, "results")),
        workers=_get(exp, "experiment", "workers", int, 1),
        write_traces=_get(exp, "experiment", "write_traces", _bool, True),
    )
    stride = cfg.stride
    if stride < 1 or default_window(T)[2] % stride or (T // 2) % stride:
        raise ConfigError(f"fit.trace_stride: {stride} must divide T/2 and the slope spacing {default_window(T)[2]}")
    over = {}
    if seed is not None:
        over["seed"] = int(seed)
    if cutoffs is not None:
        try:
            over["cutoffs"] = parse_cutoffs(cutoffs)
        except ValueError as exc:
            raise ConfigError(f"classifier.cutoffs: {exc}") from None
    if out is not None:
        over["out"] = Path(out)
    if workers is not None:
        over["workers"] = int(workers)
    return replace(cfg, **over) if over else cfg


def method_columns(method: Method) -> tuple[str, str]:
    if isinstance(method, LeastSquares):
        return "LS", ""
    return method.name, repr(method.weight)


def method_dirname(method: Method) -> str:
    name, tuning = method_columns(method)
    return name if not tuning else f"{name}_{tuning}"


def setting_dirname(synth: SynthSpec, rank: int) -> str:
    return f"case{synth.case}_n{synth.n}_p{synth.p0}_R{rank}_R0{TRUE_RANK}"


# -- trace files -----------------------------------------------------------------

def emit_trace(trace: FitTrace, path) -> Path:
    """Write ``iteration,objective,magnitude,lambda_min_D``; floats use repr so they round-trip."""
    if len(trace) == 0:
        raise ValueError("cannot write an empty trace")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lam = trace.lambda_min_D
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for k, t in enumerate(trace.iterations):
            writer.writerow([
                int(t), repr(float(trace.objective[k])), repr(float(trace.magnitude[k])),
                "" if lam is None else repr(float(lam[k])),
            ])
    return path


@dataclass
class TraceRecord:
    iterations: np.ndarray
    objective: np.ndarray
    magnitude: np.ndarray
    lambda_min_D: np.ndarray | None

    def magnitudes(self) -> dict[int, float]:
        return dict(zip(self.iterations.tolist(), self.magnitude.tolist()))


def read_trace(path) -> TraceRecord:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(TRACE_HEADER)}, got {header}")
        its, obj, mag, lam = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                its.append(int(row[0]))
                obj.append(float(row[1]))
                mag.append(float(row[2]))
                lam.append(float(row[3]) if row[3] != "" else None)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not its:
        raise ValueError(f"{path}: trace has no rows")
    has_lam = all(x is not None for x in lam)
    return TraceRecord(np.array(its), np.array(obj), np.array(mag), np.array(lam, dtype=float) if has_lam else None)


# -- running -----------------------------------------------------------------------

def _nan_to_none(x):
    return None if isinstance(x, float) and math.isnan(x) else x


def _fit_and_classify(cfg: ExperimentConfig, data, method: Method, rank: int, seed: int, rep_dir: Path) -> dict:
    fit_cfg = cfg.fit_config(method, rank, seed)
    trace = fit_multi_start(data, fit_cfg)
    verdict = classify_divergence(trace.magnitudes(), cfg.max_iterations, cfg.cutoffs)
    rec = {
        "status": "ok",
        "divergent": verdict.divergent,
        "shortcut": verdict.shortcut_nondivergent,
        "branch": verdict.branch,
        "a_hat": _nan_to_none(verdict.a_hat),
        "b_hat": _nan_to_none(verdict.b_hat),
        "c_hat": _nan_to_none(verdict.c_hat),
        "sse": _nan_to_none(verdict.sse),
        "cutoffs": list(verdict.cutoffs),
        "final_objective": trace.final_objective,
        "initial_objective": trace.initial_objective,
        "final_magnitude": float(trace.magnitude[-1]),
        "winning_start": trace.start,
        "start_objectives": list(trace.start_objectives),
    }
    if cfg.diagnostics:
        eig = {}
        for t, f in sorted(trace.snapshots.items()):
            try:
                e = eigen_diagnostics(f)
                eig[str(t)] = {"lambda_min_D": e.lambda_min_D, "magnitude": e.magnitude,
                               "per_mode": e.per_mode.tolist()}
            except ValueError:
                eig[str(t)] = None
        rec["eigen"] = eig
    if cfg.write_traces:
        emit_trace(trace, rep_dir / "trace.csv")
    return rec


def run_replication(cfg: ExperimentConfig, k: int) -> list[dict]:
    """Fresh dataset for replication k, then every (rank, method) on it."""
    seed = cfg.seed + k
    records = []
    try:
        out = generate_case(replace(cfg.synth, seed=seed))
        data = out.dataset
        data_error = None
    except Exception as exc:  # noqa: BLE001 - recorded per replication
        data, data_error = None, exc
    for rank in cfg.ranks:
        for method in cfg.methods:
            name, tuning = method_columns(method)
            rep_dir = cfg.out / setting_dirname(cfg.synth, rank) / method_dirname(method) / f"rep_{k:03d}"
            rep_dir.mkdir(parents=True, exist_ok=True)
            base = {"case": cfg.synth.case, "n": cfg.synth.n, "p0": cfg.synth.p0, "R": rank,
                    "R0": TRUE_RANK, "method": name, "tuning": tuning, "replication": k, "seed": seed}
            try:
                if data_error is not None:
                    raise data_error
                rec = {**base, **_fit_and_classify(cfg, data, method, rank, seed, rep_dir)}
            except Exception as exc:  # noqa: BLE001
                log.exception("replication %d, %s failed", k, method_dirname(method))
                rec = {**base, "status": "failed", "error": f"{type(exc).__name__}: {exc}", "divergent": False}
            with (rep_dir / "verdict.json").open("w") as fh:
                json.dump(rec, fh, indent=1, sort_keys=True)
            records.append(rec)
    return records


@dataclass
class ReplicationSummary:
    rows: list[dict] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)

    def count(self, method: str, tuning: str = "", rank: int | None = None) -> int:
        for row in self.rows:
            if row["method"] == method and row["tuning"] == tuning and (rank is None or row["R"] == rank):
                return row["divergent_count"]
        raise KeyError((method, tuning, rank))

    def for_method(self, method: str, tuning: str = "", rank: int | None = None) -> list[dict]:
        return [r for r in self.records if r["method"] == method and r["tuning"] == tuning
                and (rank is None or r["R"] == rank)]


def summarize(records: Iterable[dict]) -> ReplicationSummary:
    groups: dict[tuple, list[dict]] = {}
    for rec in records:
        key = tuple(rec[c] for c in SUMMARY_HEADER[:7])
        groups.setdefault(key, []).append(rec)
    rows = []
    for key, recs in groups.items():
        row = dict(zip(SUMMARY_HEADER[:7], key))
        row["replications"] = len(recs)
        row["completed"] = sum(r["status"] == "ok" for r in recs)
        row["divergent_count"] = sum(bool(r.get("divergent")) for r in recs if r["status"] == "ok")
        rows.append(row)
    recs = sorted(records, key=lambda r: (r["R"], r["method"], r["tuning"], r["replication"]))
    return ReplicationSummary(rows, recs)


def write_summary(summary: ReplicationSummary, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with (out / "summary.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, SUMMARY_HEADER, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        writer.writerows(summary.rows)
    with (out / "replications.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, REPLICATION_HEADER, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        writer.writerows(summary.records)
    failed = [r for r in summary.records if r["status"] != "ok"]
    if failed:
        with (out / "failures.json").open("w") as fh:
            json.dump(failed, fh, indent=1)


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ReplicationSummary:
    workers = cfg.workers if workers is None else workers
    cfg.out.mkdir(parents=True, exist_ok=True)
    reps = range(cfg.replications)
    records: list[dict] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for recs in pool.map(run_replication, [cfg] * cfg.replications, reps):
                records.extend(recs)
    else:
        for k in reps:
            records.extend(run_replication(cfg, k))
            log.info("replication %d/%d done", k + 1, cfg.replications)
    summary = summarize(records)
    write_summary(summary, cfg.out)
    with (cfg.out / "config.json").open("w") as fh:
        json.dump(_config_dict(cfg), fh, indent=1, default=str)
    return summary


def _config_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["methods"] = [method_dirname(m) for m in cfg.methods]
    d["out"] = str(cfg.out)
    return d


# -- tables --------------------------------------------------------------------------

def read_summaries(root) -> list[dict]:
    root = Path(root)
    paths = [root] if root.is_file() else sorted(root.rglob("summary.csv"))
    rows = []
    for path in paths:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != SUMMARY_HEADER:
                raise ValueError(f"{path}: unexpected summary header {reader.fieldnames}")
            rows.extend(reader)
    return rows


def _column_key(row) -> tuple[str, str]:
    return row["method"], row["tuning"]


def _column_label(method: str, tuning: str) -> str:
    if method == "LS":
        return "LS"
    sym = "lambda" if method == "cp_ridge" else "alpha"
    return f"{sym}={float(tuning):g}"


def table_rows(rows: Sequence[dict]):
    """Return ``(column_labels, [(row_label, {label: count}), ...])``."""
    order = {"LS": 0, "cp_ridge": 1, "tensor_ridge": 2}
    cols = sorted({_column_key(r) for r in rows},
                  key=lambda c: (order.get(c[0], 9), float(c[1]) if c[1] else 0.0))
    labels = ["LS"] if not cols else [_column_label(*c) for c in cols]
    grid: dict[tuple, dict] = {}
    for r in rows:
        key = (r["case"], int(r["n"]), int(r["p0"]), int(r["R"]), int(r["R0"]))
        grid.setdefault(key, {})[_column_label(*_column_key(r))] = int(r["divergent_count"])
    body = [(f"Case {k[0]}", f"({k[1]}, {k[2]})", f"({k[3]}, {k[4]})", cells) for k, cells in sorted(grid.items())]
    return labels, body


def render_table(rows: Sequence[dict]) -> str:
    labels, body = table_rows(rows)
    header = ["case", "(n, p0)", "(R, R0)"] + labels
    lines = [[*b[:3], *(str(b[3].get(c, "-")) for c in labels)] for b in body]
    widths = [max(len(h), *(len(l[i]) for l in lines)) if lines else len(h) for i, h in enumerate(header)]
    fmt = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths))  # noqa: E731
    out = [fmt(header), "  ".join("-" * w for w in widths)]
    out += [fmt(l) for l in lines]
    return "\n".join(out)


def write_table_csv(rows: Sequence[dict], path) -> Path:
    labels, body = table_rows(rows)
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["case", "n_p0", "R_R0"] + labels)
        for b in body:
            writer.writerow([*b[:3], *(b[3].get(c, "") for c in labels)])
    return path
