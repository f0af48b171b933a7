"""Low-CP-rank tensor linear regression fitted by cyclic block updates.

Three objectives are supported, all sharing the squared loss
``f(theta) = ||y - Z vec(A(theta))||^2``:

* :class:`LeastSquares` -- ``f`` alone;
* :class:`CpRidge` -- ``f + lam * sum_d ||B_d||_F^2``;
* :class:`TensorRidge` -- ``f + alpha * ||A(theta)||_F^2``.

Every block subproblem is a linear ridge least squares in ``B_d`` and is solved
exactly, so the objective never increases along a run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np

from . import _kernels
from .tensor import (
    CpFactors,
    DenseTensor,
    ShapeError,
    cp_reconstruct,
    frobenius_norm,
    khatri_rao,
    magnitude,
    vec_row_major,
)


@dataclass(frozen=True)
class RegressionDataset:
    """Responses ``y`` and the flattened design ``Z`` (row i is ``vec(X_i)``)."""

    Z: np.ndarray
    y: np.ndarray
    dims: tuple[int, ...]

    def __post_init__(self):
        Z = np.ascontiguousarray(self.Z, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.float64).ravel()
        dims = tuple(int(p) for p in self.dims)
        if Z.ndim != 2 or Z.shape[0] != y.shape[0]:
            raise ShapeError(f"Z {Z.shape} and y {y.shape} disagree on n")
        if Z.shape[1] != int(np.prod(dims)):
            raise ShapeError(f"Z has {Z.shape[1]} columns, prod{dims} expected")
        Z.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "dims", dims)

    @classmethod
    def from_tensors(cls, covariates: Sequence, y) -> "RegressionDataset":
        covs = [c if isinstance(c, DenseTensor) else DenseTensor(np.asarray(c)) for c in covariates]
        if not covs:
            raise ShapeError("need at least one sample")
        dims = covs[0].dims
        if any(c.dims != dims for c in covs):
            raise ShapeError("covariate tensors have differing shapes")
        return cls(np.stack([vec_row_major(c) for c in covs]), np.asarray(y), dims)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def covariate(self, i: int) -> DenseTensor:
        return DenseTensor(self.Z[i].reshape(self.dims))

    def unfolded(self, d: int) -> np.ndarray:
        """``(n, p_d, Q_d)`` stack of mode-d unfoldings of every covariate."""
        return self.zmodes[d].reshape(self.n, self.dims[d], -1)

    @cached_property
    def zmodes(self) -> np.ndarray:
        X = self.Z.reshape((self.n,) + self.dims)
        out = np.stack([np.moveaxis(X, d + 1, 1).reshape(self.n, -1) for d in range(len(self.dims))])
        out.setflags(write=False)
        return out


@dataclass(frozen=True)
class LeastSquares:
    name = "LS"
    code = _kernels.LS

    @property
    def weight(self) -> float:
        return 0.0


@dataclass(frozen=True)
class CpRidge:
    lam: float
    name = "cp_ridge"
    code = _kernels.CP_RIDGE

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"CpRidge needs lam > 0, got {self.lam}")

    @property
    def weight(self) -> float:
        return float(self.lam)


@dataclass(frozen=True)
class TensorRidge:
    alpha: float
    name = "tensor_ridge"
    code = _kernels.TENSOR_RIDGE

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"TensorRidge needs alpha > 0, got {self.alpha}")

    @property
    def weight(self) -> float:
        return float(self.alpha)


Method = Union[LeastSquares, CpRidge, TensorRidge]

_METHOD_ALIASES = {
    "ls": LeastSquares,
    "cp_ridge": CpRidge,
    "cpridge": CpRidge,
    "lambda": CpRidge,
    "tensor_ridge": TensorRidge,
    "tensorridge": TensorRidge,
    "alpha": TensorRidge,
}


def parse_method(text: str) -> Method:
    """``"LS"``, ``"cp_ridge:0.1"`` or ``"tensor_ridge:0.01"`` (``lambda=``/``alpha=`` also accepted)."""
    head, _, arg = text.strip().replace("=", ":").partition(":")
    try:
        cls = _METHOD_ALIASES[head.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown method {text!r}") from None
    if cls is LeastSquares:
        if arg.strip():
            raise ValueError(f"LS takes no tuning parameter: {text!r}")
        return LeastSquares()
    if not arg.strip():
        raise ValueError(f"method {text!r} needs a tuning parameter")
    return cls(float(arg))


def method_label(method: Method) -> str:
    return "LS" if isinstance(method, LeastSquares) else f"{method.name}:{method.weight:g}"


@dataclass(frozen=True)
class FitConfig:
    rank: int
    method: Method = field(default_factory=LeastSquares)
    max_iterations: int = 1000
    num_starts: int = 5
    seed: int = 0
    trace_stride: int = 1
    snapshot_iterations: tuple[int, ...] = ()
    diagnostics: bool = False

    def __post_init__(self):
        if isinstance(self.method, str):
            object.__setattr__(self, "method", parse_method(self.method))
        if self.rank < 1:
            raise ValueError("rank must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.num_starts < 1:
            raise ValueError("num_starts must be positive")
        if self.trace_stride < 1:
            raise ValueError("trace_stride must be positive")
        snaps = tuple(sorted({int(t) for t in self.snapshot_iterations}))
        if snaps and (snaps[0] < 0 or snaps[-1] > self.max_iterations):
            raise ValueError(f"snapshot iterations must lie in [0, {self.max_iterations}]")
        object.__setattr__(self, "snapshot_iterations", snaps)


@dataclass
class FitTrace:
    """Scalars recorded along one run of the block updating solver."""

    iterations: np.ndarray
    objective: np.ndarray
    magnitude: np.ndarray
    lambda_min_D: np.ndarray | None
    final: CpFactors
    initial: CpFactors
    initial_objective: float
    snapshots: dict[int, CpFactors] = field(default_factory=dict)
    start: int = 0
    start_objectives: tuple[float, ...] = ()

    @property
    def final_objective(self) -> float:
        return float(self.objective[-1]) if len(self.objective) else self.initial_objective

    def magnitudes(self) -> dict[int, float]:
        return dict(zip(self.iterations.tolist(), self.magnitude.tolist()))

    def __len__(self):
        return len(self.iterations)


def _check_dims(factors: CpFactors, data: RegressionDataset) -> None:
    if factors.dims != data.dims:
        raise ShapeError(f"factor dims {factors.dims} do not match data dims {data.dims}")


def loss_f(factors: CpFactors, data: RegressionDataset) -> float:
    _check_dims(factors, data)
    resid = data.y - data.Z @ vec_row_major(cp_reconstruct(factors))
    return float(resid @ resid)


def penalty(factors: CpFactors, method: Method) -> float:
    if isinstance(method, CpRidge):
        return method.lam * sum(float(np.sum(b * b)) for b in factors.factors)
    if isinstance(method, TensorRidge):
        return method.alpha * frobenius_norm(cp_reconstruct(factors)) ** 2
    return 0.0


def objective(factors: CpFactors, data: RegressionDataset, config: FitConfig | Method) -> float:
    method = config.method if isinstance(config, FitConfig) else config
    return loss_f(factors, data) + penalty(factors, method)


def block_design(d: int, factors: CpFactors, data: RegressionDataset, method: Method | FitConfig = None):
    """Linearize the objective in ``vec(B_d)`` (row-major flattening of ``B_d``).

    Returns ``(W, P)`` with predictions ``W @ vec(B_d)`` and penalty
    ``vec(B_d) @ P @ vec(B_d)`` (up to terms constant in ``B_d``).
    """
    _check_dims(factors, data)
    if isinstance(method, FitConfig):
        method = method.method
    method = method or LeastSquares()
    p, R = factors[d].shape
    K = khatri_rao([factors[e] for e in range(factors.order) if e != d])
    W = np.einsum("ijq,qr->ijr", data.unfolded(d), K).reshape(data.n, p * R)
    if isinstance(method, CpRidge):
        P = method.lam * np.eye(p * R)
    elif isinstance(method, TensorRidge):
        P = method.alpha * np.kron(np.eye(p), K.T @ K)
    else:
        P = np.zeros((p * R, p * R))
    return W, P


def block_update(d: int, factors: CpFactors, data: RegressionDataset, config: FitConfig | Method) -> CpFactors:
    """Replace ``B_d`` by a global minimizer of its block subproblem."""
    W, P = block_design(d, factors, data, config)
    H = W.T @ W + P
    b = _kernels.pinv_solve.py_func(H, W.T @ data.y)
    return factors.replace(d, b.reshape(factors[d].shape))


def initial_factors(dims: Sequence[int], rank: int, seed: int, start: int = 0) -> CpFactors:
    """Seeded i.i.d. N(0, 1) start; ``start`` selects an independent sub-stream."""
    return CpFactors.random(dims, rank, np.random.default_rng([seed, start]))


def _pack(factors: CpFactors):
    offs = np.concatenate([[0], np.cumsum(factors.dims)]).astype(np.int64)
    return np.ascontiguousarray(np.vstack(factors.factors)), offs


def _unpack(B: np.ndarray, offs: np.ndarray) -> CpFactors:
    return CpFactors(tuple(B[offs[d]:offs[d + 1]].copy() for d in range(len(offs) - 1)))


def fit_single(data: RegressionDataset, config: FitConfig, initial: CpFactors) -> FitTrace:
    """Run exactly ``config.max_iterations`` sweeps over modes 1..D from ``initial``."""
    _check_dims(initial, data)
    if initial.rank != config.rank:
        raise ShapeError(f"initial rank {initial.rank} != configured rank {config.rank}")
    B, offs = _pack(initial)
    dims = np.asarray(data.dims, dtype=np.int64)
    T, stride = config.max_iterations, config.trace_stride
    nrec = T // stride
    rec_obj, rec_mag = np.empty(nrec), np.empty(nrec)
    rec_lam = np.full(nrec, np.nan)
    snap_iters = np.asarray(config.snapshot_iterations, dtype=np.int64)
    snaps = np.empty((len(snap_iters),) + B.shape)
    _kernels.run_sweeps(
        data.zmodes, data.y, B, offs, dims, config.method.code, config.method.weight,
        T, stride, config.diagnostics, snap_iters, snaps, rec_obj, rec_mag, rec_lam,
    )
    return FitTrace(
        iterations=np.arange(1, nrec + 1) * stride,
        objective=rec_obj,
        magnitude=rec_mag,
        lambda_min_D=rec_lam if config.diagnostics else None,
        final=_unpack(B, offs),
        initial=initial,
        initial_objective=objective(initial, data, config),
        snapshots={int(t): _unpack(s, offs) for t, s in zip(snap_iters, snaps)},
    )


def fit_multi_start(data: RegressionDataset, config: FitConfig) -> FitTrace:
    """Best of ``num_starts`` seeded runs by final objective (ties go to the lower start)."""
    best = None
    finals = []
    for j in range(config.num_starts):
        trace = fit_single(data, config, initial_factors(data.dims, config.rank, config.seed, j))
        trace.start = j
        finals.append(trace.final_objective)
        if best is None or trace.final_objective < best.final_objective:
            best = trace
    best.start_objectives = tuple(finals)
    return best


__all__ = [
    "RegressionDataset", "FitConfig", "FitTrace", "LeastSquares", "CpRidge", "TensorRidge",
    "Method", "parse_method", "method_label", "loss_f", "penalty", "objective", "block_design",
    "block_update", "initial_factors", "fit_single", "fit_multi_start", "magnitude",
]
