"""Hot numeric kernels with numba and pure-numpy implementations.

Three operations dominate runtime at desk scale:

* pointwise eigendecomposition of a symmetric tensor with respect to a
  metric (every residual and every linearization touches it),
* assembly of the operator derivative from the eigenframe,
* the exhaustive supporting-plane test behind lower contact sets.

Each kernel has a ``*_numba`` and a ``*_numpy`` variant; the public wrappers
dispatch on :data:`hessian_lab.backend.USE_NUMBA`. Both lanes agree to
rounding on the returned eigenvalues and on frame-free contractions.
"""

from __future__ import annotations

import numpy as np

from .backend import USE_NUMBA

__all__ = [
    "spectra_wrt_metric",
    "eigenframe_contraction",
    "supporting_plane_mask",
]


# ---------------------------------------------------------------------------
# numpy lane
# ---------------------------------------------------------------------------


def _spectra_numpy(A: np.ndarray, G: np.ndarray):
    sg, Ug = np.linalg.eigh(G)
    ginv_sqrt = Ug @ (Ug.transpose(0, 2, 1) / np.sqrt(sg)[:, :, None])
    B = ginv_sqrt @ A @ ginv_sqrt
    mu, W = np.linalg.eigh(B)
    lam = mu[:, ::-1]
    frames = (ginv_sqrt @ W)[:, :, ::-1]
    return np.ascontiguousarray(lam), np.ascontiguousarray(frames)


def _contraction_numpy(frames: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return np.einsum("pik,pk,pjk->pij", frames, weights, frames, optimize=True)


def _plane_mask_numpy(cand_pts, cand_vals, cand_grads, pts, vals, tol):
    n_cand = cand_pts.shape[0]
    ok = np.ones(n_cand, dtype=bool)
    if n_cand == 0:
        return ok
    # v(y) >= v(x) + Dv(x).(y - x) for every ball node y, tested in chunks
    # to bound the (candidates x nodes) broadcast memory.
    chunk = max(1, int(2**24 // max(pts.shape[0], 1)))
    for lo in range(0, n_cand, chunk):
        hi = min(lo + chunk, n_cand)
        base = cand_vals[lo:hi] - np.einsum(
            "ck,ck->c", cand_grads[lo:hi], cand_pts[lo:hi]
        )
        planes = base[:, None] + cand_grads[lo:hi] @ pts.T
        ok[lo:hi] = np.all(vals[None, :] - planes >= -tol, axis=1)
    return ok


# ---------------------------------------------------------------------------
# numba lane
# ---------------------------------------------------------------------------

if USE_NUMBA:
    from numba import njit, prange

    @njit(cache=True)
    def _jacobi_eigh(S):
        # Cyclic Jacobi rotations; adequate for the n <= 3 matrices used here
        # and free of per-point LAPACK call overhead.
        n = S.shape[0]
        A = S.copy()
        V = np.eye(n)
        scale = 0.0
        for i in range(n):
            for j in range(n):
                scale += A[i, j] * A[i, j]
        thresh = 1e-32 * (scale + 1e-300)
        for _ in range(64):
            off = 0.0
            for i in range(n - 1):
                for j in range(i + 1, n):
                    off += A[i, j] * A[i, j]
            if off <= thresh:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = A[p, q]
                    if apq == 0.0:
                        continue
                    theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                    if theta >= 0.0:
                        t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                    else:
                        t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                    c = 1.0 / np.sqrt(t * t + 1.0)
                    s = t * c
                    for k in range(n):
                        akp = A[k, p]
                        akq = A[k, q]
                        A[k, p] = c * akp - s * akq
                        A[k, q] = s * akp + c * akq
                    for k in range(n):
                        apk = A[p, k]
                        aqk = A[q, k]
                        A[p, k] = c * apk - s * aqk
                        A[q, k] = s * apk + c * aqk
                    for k in range(n):
                        vkp = V[k, p]
                        vkq = V[k, q]
                        V[k, p] = c * vkp - s * vkq
                        V[k, q] = s * vkp + c * vkq
        w = np.empty(n)
        for i in range(n):
            w[i] = A[i, i]
        order = np.argsort(w)
        return w[order], V[:, order]

    @njit(cache=True, parallel=True)
    def _spectra2_numba(A, G):
        # closed forms: no per-point allocation on the dominant n = 2 path
        npts = A.shape[0]
        lam = np.empty((npts, 2))
        frames = np.empty((npts, 2, 2))
        for p in prange(npts):
            ga, gb, gc = G[p, 0, 0], G[p, 0, 1], G[p, 1, 1]
            s = np.sqrt(ga * gc - gb * gb)
            t = np.sqrt(ga + gc + 2.0 * s)
            st = s * t
            # inverse square root of the metric
            m11 = (gc + s) / st
            m12 = -gb / st
            m22 = (ga + s) / st
            a11, a12, a22 = A[p, 0, 0], A[p, 0, 1], A[p, 1, 1]
            # B = m A m, symmetric
            c11 = m11 * a11 + m12 * a12
            c12 = m11 * a12 + m12 * a22
            c21 = m12 * a11 + m22 * a12
            c22 = m12 * a12 + m22 * a22
            b11 = c11 * m11 + c12 * m12
            b12 = c11 * m12 + c12 * m22
            b22 = c21 * m12 + c22 * m22
            half = 0.5 * (b11 + b22)
            d = 0.5 * (b11 - b22)
            r = np.sqrt(d * d + b12 * b12)
            l1 = half + r
            l2 = half - r
            # eigenvector of the larger eigenvalue, stable branch
            if d >= 0.0:
                w1x = d + r
                w1y = b12
            else:
                w1x = b12
                w1y = r - d
            norm = np.sqrt(w1x * w1x + w1y * w1y)
            if norm < 1e-300:
                w1x, w1y, norm = 1.0, 0.0, 1.0
            w1x /= norm
            w1y /= norm
            lam[p, 0] = l1
            lam[p, 1] = l2
            frames[p, 0, 0] = m11 * w1x + m12 * w1y
            frames[p, 1, 0] = m12 * w1x + m22 * w1y
            frames[p, 0, 1] = m11 * (-w1y) + m12 * w1x
            frames[p, 1, 1] = m12 * (-w1y) + m22 * w1x
        return lam, frames

    @njit(cache=True, parallel=True)
    def _spectra_general_numba(A, G):
        npts = A.shape[0]
        n = A.shape[1]
        lam = np.empty((npts, n))
        frames = np.empty((npts, n, n))
        for p in prange(npts):
            sg, Ug = _jacobi_eigh(G[p])
            gis = np.empty((n, n))
            for i in range(n):
                for j in range(n):
                    acc = 0.0
                    for k in range(n):
                        acc += Ug[i, k] * Ug[j, k] / np.sqrt(sg[k])
                    gis[i, j] = acc
            B = gis @ A[p] @ gis
            mu, W = _jacobi_eigh(B)
            EW = gis @ W
            for i in range(n):
                lam[p, i] = mu[n - 1 - i]
                for j in range(n):
                    frames[p, j, i] = EW[j, n - 1 - i]
        return lam, frames

    def _spectra_numba(A, G):
        if A.shape[1] == 2:
            return _spectra2_numba(A, G)
        return _spectra_general_numba(A, G)

    @njit(cache=True, parallel=True)
    def _contraction_numba(frames, weights):
        npts = frames.shape[0]
        n = frames.shape[1]
        out = np.empty((npts, n, n))
        for p in prange(npts):
            for i in range(n):
                for j in range(n):
                    acc = 0.0
                    for k in range(n):
                        acc += frames[p, i, k] * weights[p, k] * frames[p, j, k]
                    out[p, i, j] = acc
        return out

    @njit(cache=True, parallel=True)
    def _plane_mask_numba(cand_pts, cand_vals, cand_grads, pts, vals, tol):
        n_cand = cand_pts.shape[0]
        npts = pts.shape[0]
        n = pts.shape[1]
        ok = np.empty(n_cand, dtype=np.bool_)
        for c in prange(n_cand):
            base = cand_vals[c]
            for k in range(n):
                base -= cand_grads[c, k] * cand_pts[c, k]
            good = True
            for y in range(npts):
                plane = base
                for k in range(n):
                    plane += cand_grads[c, k] * pts[y, k]
                if vals[y] - plane < -tol:
                    good = False
                    break
            ok[c] = good
        return ok


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def spectra_wrt_metric(A: np.ndarray, G: np.ndarray):
    """Eigenvalues and g-orthonormal frames of symmetric A against SPD G.

    Parameters
    ----------
    A, G : (N, n, n) float arrays, symmetric per point, G positive definite.

    Returns
    -------
    lam : (N, n) eigenvalues sorted descending.
    frames : (N, n, n) columns E[:, i] with ``A E = G E diag(lam)`` and
        ``E^T G E = I``.
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    G = np.ascontiguousarray(G, dtype=np.float64)
    if USE_NUMBA:
        return _spectra_numba(A, G)
    return _spectra_numpy(A, G)


def eigenframe_contraction(frames: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per-point ``E diag(w) E^T`` for an (N, n, n) frame stack."""
    frames = np.ascontiguousarray(frames, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if USE_NUMBA:
        return _contraction_numba(frames, weights)
    return _contraction_numpy(frames, weights)


def supporting_plane_mask(
    cand_pts: np.ndarray,
    cand_vals: np.ndarray,
    cand_grads: np.ndarray,
    pts: np.ndarray,
    vals: np.ndarray,
    tol: float,
) -> np.ndarray:
    """Exhaustive lower-supporting-plane test.

    Entry c is True iff ``vals[y] >= cand_vals[c] + cand_grads[c].(pts[y] -
    cand_pts[c]) - tol`` for every node y.
    """
    cand_pts = np.ascontiguousarray(cand_pts, dtype=np.float64)
    cand_vals = np.ascontiguousarray(cand_vals, dtype=np.float64)
    cand_grads = np.ascontiguousarray(cand_grads, dtype=np.float64)
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    vals = np.ascontiguousarray(vals, dtype=np.float64)
    if USE_NUMBA:
        return _plane_mask_numba(cand_pts, cand_vals, cand_grads, pts, vals, tol)
    return _plane_mask_numpy(cand_pts, cand_vals, cand_grads, pts, vals, tol)
