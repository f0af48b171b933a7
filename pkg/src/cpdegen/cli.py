"""Command line entry point: ``cpdegen {run,table,diagnose,synth}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .degeneracy import DEFAULT_CUTOFFS, InsufficientTraceError, classify_divergence
from .experiment import (
    ConfigError,
    load_config,
    parse_cutoffs,
    read_summaries,
    read_trace,
    render_table,
    run_experiment,
    write_table_csv,
)
from .synth import SynthSpec, generate_case, write_dataset_csv


def _cutoffs(text):
    try:
        return parse_cutoffs(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cpdegen", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a replicated experiment from a config file")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--out", type=Path, help="output directory (overrides the config)")
    run.add_argument("--profile", choices=["desk", "paper"])
    run.add_argument("--seed", type=int)
    run.add_argument("--cutoffs", type=_cutoffs, metavar="GB,EC,GC")
    run.add_argument("--workers", type=int)

    table = sub.add_parser("table", help="render divergent counts from summary files")
    table.add_argument("--out", type=Path, required=True, help="directory searched for summary.csv files")
    table.add_argument("--csv", type=Path, help="where to write the machine-readable grid "
                       "(default: <out>/table.csv)")

    diag = sub.add_parser("diagnose", help="classify a stored trace file")
    diag.add_argument("trace", type=Path)
    diag.add_argument("--cutoffs", type=_cutoffs, default=DEFAULT_CUTOFFS, metavar="GB,EC,GC")

    syn = sub.add_parser("synth", help="write one synthetic dataset as CSV")
    syn.add_argument("--config", type=Path, help="read the [synth] section of an experiment config")
    syn.add_argument("--case", default=None)
    syn.add_argument("--n", type=int, default=None)
    syn.add_argument("--p0", type=int, default=None)
    syn.add_argument("--snr", type=float, default=None)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--out", type=Path, required=True, help="CSV file to write")
    return p


def cmd_run(args) -> int:
    cfg = load_config(args.config, profile=args.profile, seed=args.seed, cutoffs=args.cutoffs,
                      out=args.out, workers=args.workers)
    summary = run_experiment(cfg)
    print(render_table(summary.rows))
    failed = sum(r["status"] != "ok" for r in summary.records)
    print(f"\n{len(summary.records) - failed}/{len(summary.records)} fits completed; results in {cfg.out}")
    return 0


def cmd_table(args) -> int:
    if not args.out.exists():
        print(f"error: {args.out} does not exist", file=sys.stderr)
        return 2
    rows = read_summaries(args.out)
    print(render_table(rows))
    path = write_table_csv(rows, args.csv or (args.out / "table.csv" if args.out.is_dir() else Path("table.csv")))
    print(f"\nwrote {path}")
    return 0


def cmd_diagnose(args) -> int:
    trace = read_trace(args.trace)
    T = int(trace.iterations.max())
    verdict = classify_divergence(trace.magnitudes(), T, args.cutoffs)
    print(f"verdict: {verdict.describe()}")
    print(f"T = {T}; cutoffs (gamma_b, eta_c, gamma_c) = {verdict.cutoffs}")
    if not verdict.shortcut_nondivergent:
        print(f"a_hat = {verdict.a_hat!r}\nb_hat = {verdict.b_hat!r}\nc_hat = {verdict.c_hat!r}\nsse = {verdict.sse!r}")
    print(f"branch: {verdict.branch}")
    return 0


def cmd_synth(args) -> int:
    base = load_config(args.config).synth if args.config else SynthSpec(case="1a", n=200)
    spec = SynthSpec(
        case=args.case or base.case,
        n=args.n or base.n,
        p0=args.p0 or base.p0,
        snr=args.snr or base.snr,
        seed=args.seed,
    )
    out = generate_case(spec)
    write_dataset_csv(out.dataset, args.out)
    print(f"wrote {args.out}: case {spec.case}, n={spec.n}, p0={spec.p0}, sigma={out.sigma!r}")
    return 0


COMMANDS = {"run": cmd_run, "table": cmd_table, "diagnose": cmd_diagnose, "synth": cmd_synth}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InsufficientTraceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
