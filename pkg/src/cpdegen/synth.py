"""Synthetic tensor-regression datasets: degenerate (a) and regular (b) rank-3 truths.

Cases 1a/1b are noiseless, 2a/2b add Gaussian noise at a fixed signal-to-noise
ratio.  Covariates are ``p0 x p0 x p0`` with i.i.d. Uniform(0, 1) entries and
the generating vectors have i.i.d. Uniform(-5, 5) entries, redrawn per dataset.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .degeneracy import LinearDependenceError, check_independent
from .regression import RegressionDataset
from .tensor import CpFactors, DenseTensor, cp_reconstruct, inner_product

CASES = ("1a", "1b", "2a", "2b")
TRUE_RANK = 3


@dataclass(frozen=True)
class SynthSpec:
    case: str
    n: int
    p0: int = 5
    snr: float = 4.0
    seed: int = 0

    def __post_init__(self):
        case = str(self.case).lower().removeprefix("case").strip()
        if case not in CASES:
            raise ValueError(f"case must be one of {CASES}, got {self.case!r}")
        object.__setattr__(self, "case", case)
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.p0 < 2:
            raise ValueError("p0 must be >= 2")
        if not self.snr > 0:
            raise ValueError("snr must be positive")

    @property
    def noisy(self) -> bool:
        return self.case.startswith("2")

    @property
    def degenerate(self) -> bool:
        return self.case.endswith("a")


@dataclass(frozen=True)
class SynthOutput:
    dataset: RegressionDataset
    true_coefficient: DenseTensor
    true_factors: dict
    sigma: float


def coefficient_a_factors(w, v) -> CpFactors:
    """CP factors of ``w1 o v2 o v3 + v1 o w2 o v3 + v1 o v2 o w3``."""
    w = [np.asarray(x, dtype=float) for x in w]
    v = [np.asarray(x, dtype=float) for x in v]
    return CpFactors(tuple(
        np.column_stack([w[d] if r == d else v[d] for r in range(3)]) for d in range(3)
    ))


def make_coefficient_a(w, v) -> DenseTensor:
    check_independent(w, v)
    return cp_reconstruct(coefficient_a_factors(w, v))


def make_coefficient_b(u, v, w) -> DenseTensor:
    check_independent(u, v, w)
    return cp_reconstruct(CpFactors(tuple(np.column_stack([u[d], v[d], w[d]]) for d in range(3))))


def gen_predictors(n: int, p0: int, seed) -> np.ndarray:
    """``(n, p0, p0, p0)`` array of Uniform(0, 1) covariates."""
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=(n, p0, p0, p0))


def calibrate_noise(A0, predictors, snr: float = 4.0) -> float:
    """Noise sd giving ``sample_var(<A0, X_i>) / sigma^2 == snr`` on these predictors."""
    X = np.asarray(predictors, dtype=float)
    if X.shape[0] < 2:
        raise ValueError("need at least 2 predictors to estimate the signal variance")
    A = A0.data if isinstance(A0, DenseTensor) else np.asarray(A0, dtype=float)
    signal = X.reshape(X.shape[0], -1) @ A.ravel()
    var = signal.var(ddof=1)
    if not var > 0:
        raise ValueError("signal has zero variance; SNR is undefined")
    return float(np.sqrt(var / snr))


def _draw_vectors(rng, groups: int, p0: int, max_tries: int = 100):
    for _ in range(max_tries):
        vecs = [[rng.uniform(-5.0, 5.0, p0) for _ in range(3)] for _ in range(groups)]
        try:
            check_independent(*vecs)
        except LinearDependenceError:
            continue
        return vecs
    raise LinearDependenceError("could not draw independent generating vectors")


def generate_case(spec: SynthSpec) -> SynthOutput:
    rng = np.random.default_rng([spec.seed, 0])
    if spec.degenerate:
        w, v = _draw_vectors(rng, 2, spec.p0)
        A0 = make_coefficient_a(w, v)
        true = {"w": w, "v": v}
    else:
        u, v, w = _draw_vectors(rng, 3, spec.p0)
        A0 = make_coefficient_b(u, v, w)
        true = {"u": u, "v": v, "w": w}
    X = gen_predictors(spec.n, spec.p0, [spec.seed, 1])
    Z = X.reshape(spec.n, -1)
    y = Z @ A0.data.ravel()
    sigma = 0.0
    if spec.noisy:
        sigma = calibrate_noise(A0, X, spec.snr)
        y = y + np.random.default_rng([spec.seed, 2]).normal(0.0, sigma, spec.n)
    return SynthOutput(RegressionDataset(Z, y, (spec.p0,) * 3), A0, true, sigma)


def empirical_snr(out: SynthOutput) -> float:
    """Post-hoc SNR: sample variance of the signal over the residual-noise variance."""
    signal = out.dataset.Z @ out.true_coefficient.data.ravel()
    noise = out.dataset.y - signal
    return float(signal.var(ddof=1) / noise.var(ddof=1))


def write_dataset_csv(dataset: RegressionDataset, path) -> Path:
    """Header ``y,x_1,...,x_P`` then one sample per row (covariates row-major)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y"] + [f"x_{j + 1}" for j in range(dataset.Z.shape[1])])
        for yi, zi in zip(dataset.y, dataset.Z):
            writer.writerow([repr(float(yi))] + [repr(float(z)) for z in zi])
    return path


def read_dataset_csv(path, dims) -> RegressionDataset:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return RegressionDataset(data[:, 1:], data[:, 0], tuple(dims))


def signal_values(out: SynthOutput) -> np.ndarray:
    return np.array([inner_product(out.true_coefficient, out.dataset.covariate(i)) for i in range(out.dataset.n)])
