"""Dense tensors, CP factor matrices and the multilinear algebra between them.

Conventions used throughout the package:

* Tensors are stored row-major (C order): the last index varies fastest, so
  ``vec_row_major(b1 o b2 o ... o bD) == kron(b1, b2, ..., bD)``.
* ``unfold_mode(a, d)`` has shape ``(p_d, prod_{e != d} p_e)`` with the remaining
  modes in increasing order, last one fastest.  With that ordering
  ``unfold_mode(cp_reconstruct(f), d) == B_d @ khatri_rao(others).T``.

Mode indices are 0-based in this API.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


@dataclass(frozen=True, eq=False)
class DenseTensor:
    """A D-mode real array.  ``data`` is always a float64 C-contiguous array."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim < 1 or 0 in arr.shape:
            raise ShapeError(f"tensor needs D >= 1 and positive dims, got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_flat(cls, dims: Sequence[int], flat) -> "DenseTensor":
        flat = np.asarray(flat, dtype=np.float64).ravel()
        dims = tuple(int(p) for p in dims)
        if flat.size != int(np.prod(dims)):
            raise ShapeError(f"data length {flat.size} != prod{dims}")
        return cls(flat.reshape(dims))

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "DenseTensor":
        return cls(np.zeros(tuple(dims)))

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def order(self) -> int:
        return self.data.ndim

    def __getitem__(self, idx):
        return self.data[idx]


def as_tensor(a) -> DenseTensor:
    return a if isinstance(a, DenseTensor) else DenseTensor(np.asarray(a))


@dataclass(frozen=True, eq=False)
class CpFactors:
    """CP parameters: ``factors[d]`` is the ``p_d x R`` matrix whose column r is beta_{d,r}."""

    factors: tuple[np.ndarray, ...]

    def __post_init__(self):
        mats = tuple(np.array(b, dtype=np.float64, ndmin=2) for b in self.factors)
        if not mats:
            raise ShapeError("need at least one factor matrix")
        for b in mats:
            if b.ndim != 2:
                raise ShapeError(f"factor matrices must be 2-D, got ndim={b.ndim}")
        ranks = {b.shape[1] for b in mats}
        if len(ranks) != 1:
            raise ShapeError(f"factor matrices disagree on rank: {sorted(ranks)}")
        if mats[0].shape[1] < 1:
            raise ShapeError("rank must be positive")
        for b in mats:
            b.setflags(write=False)
        object.__setattr__(self, "factors", mats)

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(b.shape[0] for b in self.factors)

    @property
    def order(self) -> int:
        return len(self.factors)

    def __len__(self):
        return len(self.factors)

    def __getitem__(self, d):
        return self.factors[d]

    def replace(self, d: int, mat) -> "CpFactors":
        mats = list(self.factors)
        mats[d] = mat
        return CpFactors(tuple(mats))

    @classmethod
    def random(cls, dims: Sequence[int], rank: int, rng=None) -> "CpFactors":
        """I.i.d. standard normal entries; the default initialization of the solver."""
        rng = np.random.default_rng(rng)
        return cls(tuple(rng.standard_normal((p, rank)) for p in dims))


def _check_mode(d: int, order: int) -> None:
    if not 0 <= d < order:
        raise IndexError(f"mode {d} out of range for an order-{order} tensor")


def khatri_rao(mats: Sequence[np.ndarray]) -> np.ndarray:
    """Column-wise Kronecker product, first matrix slowest.

    Column r of the result is ``kron(mats[0][:, r], mats[1][:, r], ...)``.
    """
    mats = [np.asarray(m, dtype=np.float64) for m in mats]
    if not mats:
        raise ShapeError("khatri_rao needs at least one matrix")
    ncols = {m.shape[1] for m in mats}
    if len(ncols) != 1:
        raise ShapeError(f"khatri_rao column counts differ: {sorted(ncols)}")
    rank = mats[0].shape[1]
    return reduce(lambda acc, m: (acc[:, None, :] * m[None, :, :]).reshape(-1, rank), mats)


def cp_reconstruct(factors: CpFactors) -> DenseTensor:
    mats = factors.factors
    full = mats[0] @ khatri_rao(mats[1:]).T if len(mats) > 1 else mats[0].sum(axis=1)
    return DenseTensor(full.reshape(factors.dims))


def inner_product(a, b) -> float:
    a, b = as_tensor(a), as_tensor(b)
    if a.dims != b.dims:
        raise ShapeError(f"inner product of shapes {a.dims} and {b.dims}")
    return float(np.dot(a.data.ravel(), b.data.ravel()))


def frobenius_norm(a) -> float:
    return float(np.linalg.norm(as_tensor(a).data.ravel()))


def vec_row_major(a) -> np.ndarray:
    return as_tensor(a).data.ravel().copy()


def unfold_mode(a, d: int) -> np.ndarray:
    a = as_tensor(a)
    _check_mode(d, a.order)
    return np.moveaxis(a.data, d, 0).reshape(a.dims[d], -1)


def refold(mat: np.ndarray, d: int, dims: Sequence[int]) -> DenseTensor:
    """Inverse of :func:`unfold_mode`."""
    dims = tuple(dims)
    _check_mode(d, len(dims))
    rest = dims[:d] + dims[d + 1:]
    return DenseTensor(np.moveaxis(np.asarray(mat).reshape((dims[d],) + rest), 0, d))


def outer(*vectors) -> DenseTensor:
    """Rank-1 tensor ``v1 o v2 o ... o vD``."""
    vecs = [np.asarray(v, dtype=np.float64).ravel() for v in vectors]
    return DenseTensor(reduce(np.multiply.outer, vecs))


def column_norms(factors: CpFactors) -> np.ndarray:
    """``(D, R)`` array of Euclidean norms of every beta_{d,r}."""
    return np.array([np.linalg.norm(b, axis=0) for b in factors.factors])


def magnitude(factors: CpFactors) -> float:
    """Sum over rank-1 terms of the product of the column norms."""
    return float(column_norms(factors).prod(axis=0).sum())


def rebalance(factors: CpFactors) -> CpFactors:
    """Unit-norm columns in modes 0..D-2 with the accumulated scale put in the last mode.

    Rank-1 terms with a zero column in one of the first D-1 modes are passed
    through untouched.
    """
    mats = [b.copy() for b in factors.factors]
    norms = column_norms(factors)[:-1]
    ok = np.all(norms > 0, axis=0)
    for d in range(len(mats) - 1):
        mats[d][:, ok] /= norms[d, ok]
    mats[-1][:, ok] *= norms[:, ok].prod(axis=0)
    return CpFactors(tuple(mats))
