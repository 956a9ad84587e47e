"""Hot loops of the online stage, in a numba flavour and a numpy flavour.

The numba kernels are used when numba imports and ``PDRB_DISABLE_NUMBA``
is unset (or ``0``).  Setting ``PDRB_DISABLE_NUMBA=1`` selects the pure
numpy implementations, which return identical results.

Reduced data layout shared by every kernel (Q coefficient regions):

``ggrad``  (Q, Nu, Nu)  region gradient Gramians over [snapshots, primal liftings]
``gflux``  (Q, Ns, Ns)  region flux Gramians over [snapshots, flux liftings]
``gcross`` (Nu, Ns)     (grad u_i, sigma_j) over the whole domain
``w_u``    (Nu - N,)    weights of the primal liftings
``w_s``    (Ns - N,)    weights of the flux liftings
``load``   (N,)         data part of the primal right-hand side
``dual_bc``(Nd,)        Dirichlet-data part of the dual right-hand side

``n`` is the primal basis size N and ``nd`` the dual one (Nd <= N, zero
snapshots are left out of the dual basis).
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("PDRB_DISABLE_NUMBA", "0").lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError
    import numba
    from numba import njit, prange
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # skip probing for an outdated TBB; workqueue is always available
        numba.config.THREADING_LAYER = "workqueue"
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# --- numpy implementations -------------------------------------------------


def _point_np(mu, ggrad, gflux, gcross, w_u, w_s, load, dual_bc, n, nd):
    ta = 10.0 ** mu
    tb = 1.0 / ta
    A = np.tensordot(ta, ggrad, axes=1)
    B = np.tensordot(tb, gflux, axes=1)
    rhs_u = load - A[:n, n:] @ w_u
    rhs_s = -dual_bc - B[:nd, nd:] @ w_s
    c = np.linalg.solve(A[:n, :n], rhs_u)
    d = np.linalg.solve(B[:nd, :nd], rhs_s) if nd else np.zeros(0)
    xu = np.concatenate([c, w_u])
    xs = np.concatenate([d, w_s])
    eta2 = xu @ A @ xu + xs @ B @ xs + 2.0 * (xu @ gcross @ xs)
    return c, d, eta2


def sweep_numpy(mus, cache, use_cache, ggrad, gflux, gcross, w_u, w_s, load, dual_bc, n, nd):
    best = -1
    best_val = -1.0
    skipped = 0
    evaluated = np.zeros(len(mus), dtype=np.bool_)
    for i in range(len(mus)):
        if use_cache and (cache[i] < best_val or (cache[i] == best_val and best >= 0)):
            skipped += 1
            continue
        _, _, e2 = _point_np(mus[i], ggrad, gflux, gcross, w_u, w_s, load, dual_bc, n, nd)
        v = np.sqrt(max(e2, 0.0))
        cache[i] = v
        evaluated[i] = True
        if v > best_val:
            best_val = v
            best = i
    return best, best_val, skipped, evaluated


def batch_numpy(mus, ggrad, gflux, gcross, w_u, w_s, load, dual_bc, n, nd):
    mus = np.asarray(mus, dtype=float).reshape(-1, 2)
    ta = 10.0 ** mus
    tb = 1.0 / ta
    A = np.einsum("mq,qij->mij", ta, ggrad)
    B = np.einsum("mq,qij->mij", tb, gflux)
    rhs_u = load[None, :] - A[:, :n, n:] @ w_u
    rhs_s = -dual_bc[None, :] - B[:, :nd, nd:] @ w_s
    c = np.linalg.solve(A[:, :n, :n], rhs_u[..., None])[..., 0]
    m = len(mus)
    if nd:
        d = np.linalg.solve(B[:, :nd, :nd], rhs_s[..., None])[..., 0]
    else:
        d = np.zeros((m, 0))
    xu = np.concatenate([c, np.broadcast_to(w_u, (m, len(w_u)))], axis=1)
    xs = np.concatenate([d, np.broadcast_to(w_s, (m, len(w_s)))], axis=1)
    eta2 = (np.einsum("mi,mij,mj->m", xu, A, xu)
            + np.einsum("mi,mij,mj->m", xs, B, xs)
            + 2.0 * np.einsum("mi,ij,mj->m", xu, gcross, xs))
    return np.sqrt(np.maximum(eta2, 0.0))


# --- numba implementations -------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _gesv(M, b, m):
        """Solve the leading m x m block in place (partial pivoting); result in b."""
        for k in range(m):
            p = k
            big = abs(M[k, k])
            for i in range(k + 1, m):
                if abs(M[i, k]) > big:
                    big = abs(M[i, k])
                    p = i
            if p != k:
                for j in range(m):
                    M[k, j], M[p, j] = M[p, j], M[k, j]
                b[k], b[p] = b[p], b[k]
            piv = M[k, k]
            for i in range(k + 1, m):
                f = M[i, k] / piv
                if f != 0.0:
                    for j in range(k + 1, m):
                        M[i, j] -= f * M[k, j]
                    b[i] -= f * b[k]
        for k in range(m - 1, -1, -1):
            acc = b[k]
            for j in range(k + 1, m):
                acc -= M[k, j] * b[j]
            b[k] = acc / M[k, k]

    @njit(cache=True)
    def _quad(x, M):
        acc = 0.0
        for i in range(x.shape[0]):
            row = 0.0
            for j in range(x.shape[0]):
                row += M[i, j] * x[j]
            acc += x[i] * row
        return acc

    @njit(cache=True)
    def _point_nb(mu, ggrad, gflux, gcross, w_u, w_s, load, dual_bc, n, nd):
        q = ggrad.shape[0]
        nu = ggrad.shape[1]
        ns = gflux.shape[1]
        A = np.zeros((nu, nu))
        B = np.zeros((ns, ns))
        for r in range(q):
            ta = 10.0 ** mu[r]
            tb = 1.0 / ta
            for i in range(nu):
                for j in range(nu):
                    A[i, j] += ta * ggrad[r, i, j]
            for i in range(ns):
                for j in range(ns):
                    B[i, j] += tb * gflux[r, i, j]
        xu = np.empty(nu)
        xs = np.empty(ns)
        for k in range(nu - n):
            xu[n + k] = w_u[k]
        for k in range(ns - nd):
            xs[nd + k] = w_s[k]
        for i in range(n):
            acc = load[i]
            for j in range(n, nu):
                acc -= A[i, j] * xu[j]
            xu[i] = acc
        for i in range(nd):
            acc = -dual_bc[i]
            for j in range(nd, ns):
                acc -= B[i, j] * xs[j]
            xs[i] = acc
        # factorize copies so A and B stay intact for the estimator
        _gesv(A[:n, :n].copy(), xu, n)
        if nd > 0:
            _gesv(B[:nd, :nd].copy(), xs, nd)
        cross = 0.0
        for i in range(nu):
            for j in range(ns):
                cross += xu[i] * gcross[i, j] * xs[j]
        eta2 = _quad(xu, A) + _quad(xs, B) + 2.0 * cross
        return xu[:n].copy(), xs[:nd].copy(), eta2

    @njit(cache=True)
    def sweep_numba(mus, cache, use_cache, ggrad, gflux, gcross, w_u, w_s, load, dual_bc, n, nd):
        best = -1
        best_val = -1.0
        skipped = 0
        evaluated = np.zeros(mus.shape[0], dtype=np.bool_)
        for i in range(mus.shape[0]):
            if use_cache and (cache[i] < best_val or (cache[i] == best_val and best >= 0)):
                skipped += 1
                continue
            _, _, e2 = _point_nb(mus[i], ggrad, gflux, gcross, w_u, w_s, load, dual_bc, n, nd)
            v = np.sqrt(max(e2, 0.0))
            cache[i] = v
            evaluated[i] = True
            if v > best_val:
                best_val = v
                best = i
        return best, best_val, skipped, evaluated

    @njit(cache=True, parallel=True)
    def batch_numba(mus, ggrad, gflux, gcross, w_u, w_s, load, dual_bc, n, nd):
        out = np.empty(mus.shape[0])
        for i in prange(mus.shape[0]):
            _, _, e2 = _point_nb(mus[i], ggrad, gflux, gcross, w_u, w_s, load, dual_bc, n, nd)
            out[i] = np.sqrt(max(e2, 0.0))
        return out


def _args(data):
    return tuple(np.ascontiguousarray(a, dtype=float) for a in data)


def sweep(mus, cache, use_cache, data, n, nd, backend=None):
    """Training-set argmax with optional saturation skipping.

    ``cache`` holds the last known estimator per point (``inf`` when
    unknown) and is updated in place for every evaluated point.  Returns
    ``(index, value, skipped, evaluated_mask)``.
    """
    backend = backend or BACKEND
    mus = np.ascontiguousarray(mus, dtype=float)
    fn = sweep_numba if backend == "numba" else sweep_numpy
    best, val, skipped, evaluated = fn(mus, cache, bool(use_cache), *_args(data), int(n), int(nd))
    return int(best), float(val), int(skipped), evaluated


def batch(mus, data, n, nd, backend=None):
    """Estimator values for many parameters, no skipping."""
    backend = backend or BACKEND
    mus = np.ascontiguousarray(np.asarray(mus, dtype=float).reshape(-1, 2))
    if len(mus) == 0:
        return np.zeros(0)
    if backend == "numba":
        return batch_numba(mus, *_args(data), int(n), int(nd))
    return batch_numpy(mus, *_args(data), int(n), int(nd))


def set_threads(n: int | None) -> None:
    if HAVE_NUMBA and n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
