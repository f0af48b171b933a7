"""Detecting and diagnosing CP degeneracy.

The divergence classifier looks at the magnitude curve ``t -> M(theta_t)`` over
the second half of a run.  Finite-difference slopes of the curve are fitted by
``h(t) = a * t**b + c``; the curve is called divergent when the fitted slope is
not integrable on ``[T/2, inf)`` by a safe margin.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .tensor import CpFactors, DenseTensor, ShapeError, column_norms, khatri_rao, magnitude, outer

DEFAULT_CUTOFFS = (-0.5, 0.0, 0.0015)
B_GRID = (-2.0, 1.0, 0.005)


class InsufficientTraceError(ValueError):
    """The magnitude curve does not cover the iterations the classifier needs."""


class DiagnosticsUndefined(ValueError):
    """Every rank-1 term is zero, so the normalized Kronecker columns do not exist."""


class LinearDependenceError(ValueError):
    """Generating vectors that must be linearly independent are not."""


@dataclass(frozen=True)
class DivergenceVerdict:
    divergent: bool
    shortcut_nondivergent: bool
    a_hat: float = float("nan")
    b_hat: float = float("nan")
    c_hat: float = float("nan")
    sse: float = float("nan")
    cutoffs: tuple[float, float, float] = DEFAULT_CUTOFFS
    branch: str = ""

    def describe(self) -> str:
        if self.shortcut_nondivergent:
            return "non-divergent (shortcut)"
        return f"{'divergent' if self.divergent else 'non-divergent'} ({self.branch})"


@dataclass(frozen=True)
class EigenDiagnostics:
    lambda_min_D: float
    per_mode: np.ndarray
    magnitude: float
    dropped_terms: tuple[int, ...] = ()


def eigen_diagnostics(factors: CpFactors) -> EigenDiagnostics:
    """Collinearity of the rank-1 terms.

    ``lambda_min_D`` is the smallest eigenvalue of ``D^T D`` where column r of
    ``D`` is the unit vector along ``beta_{1,r} (x) ... (x) beta_{D,r}``.
    ``per_mode[d]`` is ``lambda_min(B_d^T B_d) / prod_r ||beta_{d,r}||^2``.
    """
    norms = column_norms(factors)
    keep = np.all(norms > 0, axis=0)
    if not keep.any():
        raise DiagnosticsUndefined("all rank-1 terms are zero")
    mats = [b[:, keep] / n[keep] for b, n in zip(factors.factors, norms)]
    Dmat = khatri_rao(mats)
    lam = float(np.linalg.eigvalsh(Dmat.T @ Dmat)[0])
    per_mode = np.array([
        np.linalg.eigvalsh(b.T @ b)[0] / np.prod(n ** 2) if np.all(n > 0) else 0.0
        for b, n in zip(factors.factors, norms)
    ])
    return EigenDiagnostics(lam, per_mode, magnitude(factors), tuple(np.flatnonzero(~keep).tolist()))


def default_window(T: int) -> tuple[int, int, int]:
    """``(T/2, T, T/1000)``; the spacing is at least 1."""
    return T // 2, T, max(T // 1000, 1)


def gradient_proxies(magnitudes: Mapping[int, float], window: tuple[int, int] | None = None,
                     spacing: int | None = None, T: int | None = None) -> np.ndarray:
    """``(m, 2)`` array of ``(t, (M[t+s] - M[t]) / s)`` for ``t = lo, lo+s, ..., hi-s``."""
    if window is None or spacing is None:
        if T is None:
            T = max(magnitudes)
        lo, hi, s = default_window(T)
        window = window or (lo, hi)
        spacing = spacing or s
    lo, hi = window
    ts = np.arange(lo, hi, spacing)
    try:
        m_t = np.array([magnitudes[int(t)] for t in ts], dtype=float)
        m_next = np.array([magnitudes[int(t + spacing)] for t in ts], dtype=float)
    except KeyError as exc:
        raise InsufficientTraceError(f"no magnitude recorded at iteration {exc.args[0]}") from None
    return np.column_stack([ts.astype(float), (m_next - m_t) / spacing])


def b_grid(lo: float = B_GRID[0], hi: float = B_GRID[1], step: float = B_GRID[2]) -> np.ndarray:
    k = int(round((hi - lo) / step))
    return np.round(lo + step * np.arange(k + 1), 12)


def fit_power_law(proxies, grid: np.ndarray | None = None) -> tuple[float, float, float, float]:
    """Least-squares fit of ``a * t**b + c`` by a grid over b with exact (a, c) solves.

    Returns ``(a, b, c, sse)``; among equal SSE the smallest b wins.
    """
    proxies = np.asarray(proxies, dtype=float)
    if proxies.ndim != 2 or proxies.shape[0] < 3:
        raise ValueError("need at least 3 proxy points")
    t, g = proxies[:, 0], proxies[:, 1]
    grid = b_grid() if grid is None else np.asarray(grid, dtype=float)
    # scaling t keeps t**b in range; a is rescaled back below
    t0 = t.mean()
    x = (t / t0)[None, :] ** grid[:, None]
    xc = x - x.mean(axis=1, keepdims=True)
    gc = g - g.mean()
    sxx = np.einsum("ij,ij->i", xc, xc)
    ok = sxx > 1e-24 * np.einsum("ij,ij->i", x, x)
    slope = np.where(ok, xc @ gc / np.where(ok, sxx, 1.0), 0.0)
    icpt = g.mean() - slope * x.mean(axis=1)
    resid = g[None, :] - slope[:, None] * x - icpt[:, None]
    sse = np.where(ok, np.einsum("ij,ij->i", resid, resid), np.inf)
    if not np.isfinite(sse).any():
        raise ValueError("every grid value gave a degenerate regressor")
    k = int(np.argmin(sse))
    b = float(grid[k])
    return float(slope[k] * t0 ** (-b)), b, float(icpt[k]), float(sse[k])


def divergence_rule(a: float, b: float, c: float, cutoffs: Sequence[float] = DEFAULT_CUTOFFS) -> tuple[bool, str]:
    gamma_b, eta_c, gamma_c = cutoffs
    if a > 0 and c > gamma_c:
        return True, "a>0, c>gamma_c"
    if a > 0 and b >= gamma_b and eta_c <= c <= gamma_c:
        return True, "a>0, b>=gamma_b, eta_c<=c<=gamma_c"
    return False, "no clause fired"


def classify_divergence(magnitudes: Mapping[int, float], T: int | None = None,
                        cutoffs: Sequence[float] = DEFAULT_CUTOFFS,
                        window: tuple[int, int] | None = None, spacing: int | None = None) -> DivergenceVerdict:
    """Classify a magnitude curve ``{t: M(theta_t)}`` recorded up to iteration T."""
    if not magnitudes:
        raise InsufficientTraceError("empty magnitude curve")
    T = max(magnitudes) if T is None else int(T)
    lo, hi, s = default_window(T)
    if window is not None:
        lo, hi = window
    s = spacing or s
    cutoffs = tuple(float(c) for c in cutoffs)
    for t in (lo, hi):
        if t not in magnitudes:
            raise InsufficientTraceError(f"no magnitude recorded at iteration {t}")
    if magnitudes[hi] <= magnitudes[lo]:
        return DivergenceVerdict(False, True, cutoffs=cutoffs, branch="shortcut")
    a, b, c, sse = fit_power_law(gradient_proxies(magnitudes, (lo, hi), s))
    divergent, branch = divergence_rule(a, b, c, cutoffs)
    return DivergenceVerdict(divergent, False, a, b, c, sse, cutoffs, branch)


def border_sequence(gamma: float, w: Sequence, v: Sequence) -> DenseTensor:
    """Rank-2 tensors ``gamma*(w1+v1/gamma) o (w2+v2/gamma) o (w3+v3/gamma) - gamma*w1 o w2 o w3``."""
    w, v = _check_pairs(w, v)
    shifted = outer(*[wd + vd / gamma for wd, vd in zip(w, v)]).data
    return DenseTensor(gamma * shifted - gamma * outer(*w).data)


def degenerate_target(w: Sequence, v: Sequence) -> DenseTensor:
    """``v1 o w2 o w3 + w1 o v2 o w3 + w1 o w2 o v3``: rank 3 but a limit of rank-2 tensors."""
    w, v = _check_pairs(w, v)
    check_independent(w, v)
    return DenseTensor(
        outer(v[0], w[1], w[2]).data + outer(w[0], v[1], w[2]).data + outer(w[0], w[1], v[2]).data
    )


def check_independent(*groups, tol: float = 1e-10) -> None:
    """Raise unless, mode by mode, the vectors of all groups are linearly independent.

    For two vectors this is ``|cos angle| < 1 - tol``; for more, a relative
    singular-value test at the same tolerance.
    """
    for d, vecs in enumerate(zip(*groups)):
        M = np.column_stack(vecs)
        if M.shape[1] == 2:
            n0, n1 = np.linalg.norm(M, axis=0)
            ok = n0 > 0 and n1 > 0 and abs(M[:, 0] @ M[:, 1]) / (n0 * n1) < 1 - tol
        else:
            s = np.linalg.svd(M, compute_uv=False)
            ok = M.shape[0] >= M.shape[1] and s[0] > 0 and s[-1] / s[0] > tol
        if not ok:
            raise LinearDependenceError(f"generating vectors of mode {d + 1} are linearly dependent")


def _check_pairs(w, v):
    w = [np.asarray(x, dtype=float).ravel() for x in w]
    v = [np.asarray(x, dtype=float).ravel() for x in v]
    if len(w) != 3 or len(v) != 3:
        raise ShapeError("border-rank constructions are for order-3 tensors")
    if any(a.shape != b.shape for a, b in zip(w, v)):
        raise ShapeError("w_d and v_d must have the same length")
    return w, v


def min_eig_trace_value(factors: CpFactors) -> float:
    """Same quantity as ``eigen_diagnostics(...).lambda_min_D`` through the solver kernel."""
    B = np.ascontiguousarray(np.vstack(factors.factors))
    offs = np.concatenate([[0], np.cumsum(factors.dims)]).astype(np.int64)
    return float(_kernels.min_eig_normalized_gram(B, offs, np.asarray(factors.dims, dtype=np.int64)))
