"""Hot loop of the block updating solver.

Factor matrices are packed row-wise into one ``(sum p_d, R)`` array with row
offsets ``offs``.  ``zmodes[d]`` holds, for each sample, the mode-d unfolding
of the covariate flattened row-major, i.e. ``zmodes[d].reshape(n, p_d, Q_d)``.
Method codes: 0 least squares, 1 ridge on the CP parameters, 2 ridge on the
coefficient tensor.
"""

import numpy as np

from ._accel import maybe_njit

LS, CP_RIDGE, TENSOR_RIDGE = 0, 1, 2

# relative eigenvalue cutoff of the pseudo-inverse used in block solves
PINV_RTOL = 1e-12


@maybe_njit
def other_khatri_rao(B, offs, dims, d):
    """Khatri-Rao product of every factor except mode d, increasing mode order."""
    R = B.shape[1]
    K = np.ones((1, R))
    for e in range(dims.shape[0]):
        if e == d:
            continue
        Be = B[offs[e]:offs[e + 1]]
        K = (np.expand_dims(K, 1) * np.expand_dims(Be, 0)).reshape(K.shape[0] * dims[e], R)
    return K


@maybe_njit
def block_system(zmodes, y, B, offs, dims, d, method, weight):
    """Design ``W`` (n x p_d R), Hessian ``H`` and right-hand side for mode d.

    ``vec(B_d)`` is the row-major flattening of ``B_d``.
    """
    n = y.shape[0]
    R = B.shape[1]
    pd = dims[d]
    K = other_khatri_rao(B, offs, dims, d)
    Q = K.shape[0]
    W = np.dot(zmodes[d].reshape(n * pd, Q), K).reshape(n, pd * R)
    H = np.dot(W.T, W)
    g = np.dot(W.T, y)
    if method == CP_RIDGE:
        for k in range(pd * R):
            H[k, k] += weight
    elif method == TENSOR_RIDGE:
        KtK = np.dot(K.T, K)
        for j in range(pd):
            H[j * R:(j + 1) * R, j * R:(j + 1) * R] += weight * KtK
    return W, H, g, K


@maybe_njit
def pinv_solve(H, g):
    """Minimum-norm solution of ``H x = g`` for symmetric PSD ``H``."""
    Hs = 0.5 * (H + H.T)
    w, V = np.linalg.eigh(Hs)
    cutoff = PINV_RTOL * max(w.max(), 0.0)
    coef = np.dot(V.T, g)
    for k in range(w.shape[0]):
        if w[k] > cutoff:
            coef[k] /= w[k]
        else:
            coef[k] = 0.0
    return np.dot(V, coef)


@maybe_njit
def min_eig_normalized_gram(B, offs, dims):
    """lambda_min of the Gram of the unit-norm Kronecker columns (zero terms dropped)."""
    D = dims.shape[0]
    R = B.shape[1]
    G = np.ones((R, R))
    keep = np.ones(R, dtype=np.bool_)
    for d in range(D):
        Bd = B[offs[d]:offs[d + 1]]
        C = np.dot(Bd.T, Bd)
        nrm = np.sqrt(np.diag(C).copy())
        for r in range(R):
            if nrm[r] == 0.0:
                keep[r] = False
        for r in range(R):
            for s in range(R):
                if keep[r] and keep[s]:
                    G[r, s] *= C[r, s] / (nrm[r] * nrm[s])
    m = int(keep.sum())
    if m == 0:
        return np.nan
    idx = np.nonzero(keep)[0]
    Gk = np.empty((m, m))
    for a in range(m):
        for b in range(m):
            Gk[a, b] = G[idx[a], idx[b]]
    return np.linalg.eigvalsh(Gk).min()


@maybe_njit
def magnitude_packed(B, offs, dims):
    R = B.shape[1]
    prod = np.ones(R)
    for d in range(dims.shape[0]):
        Bd = B[offs[d]:offs[d + 1]]
        prod *= np.sqrt((Bd * Bd).sum(axis=0))
    return prod.sum()


@maybe_njit
def run_sweeps(zmodes, y, B, offs, dims, method, weight, T, stride, diagnostics,
               snap_iters, snaps, rec_obj, rec_mag, rec_lam):
    """Run T full sweeps in place on ``B``.

    Records objective, magnitude (and lambda_min when ``diagnostics``) at every
    iteration divisible by ``stride``; copies ``B`` into ``snaps[k]`` after
    iteration ``snap_iters[k]`` (0 meaning the initial value).
    """
    D = dims.shape[0]
    R = B.shape[1]
    ns = snap_iters.shape[0]
    for k in range(ns):
        if snap_iters[k] == 0:
            snaps[k] = B
    rec = 0
    for t in range(1, T + 1):
        for d in range(D):
            W, H, g, K = block_system(zmodes, y, B, offs, dims, d, method, weight)
            b = pinv_solve(H, g)
            B[offs[d]:offs[d + 1]] = b.reshape(dims[d], R)
        if t % stride == 0:
            resid = y - np.dot(W, b)
            obj = np.dot(resid, resid)
            if method == CP_RIDGE:
                obj += weight * (B * B).sum()
            elif method == TENSOR_RIDGE:
                Bd = B[offs[D - 1]:offs[D]]
                obj += weight * (np.dot(Bd, np.dot(K.T, K)) * Bd).sum()
            rec_obj[rec] = obj
            rec_mag[rec] = magnitude_packed(B, offs, dims)
            if diagnostics:
                rec_lam[rec] = min_eig_normalized_gram(B, offs, dims)
            rec += 1
        for k in range(ns):
            if snap_iters[k] == t:
                snaps[k] = B
    return rec
