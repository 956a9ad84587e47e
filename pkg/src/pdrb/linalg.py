"""Sparse storage and the two solve kernels used by every FE operation.

Matrices are plain ``scipy.sparse.csr_matrix`` objects with summed
duplicates and sorted column indices.  Two solvers are exposed:

* :func:`spd_solve` for symmetric positive definite systems,
* :func:`saddle_solve` for ``[[M, B^T], [B, 0]]`` block systems.

Both default to a sparse LU factorization (SuperLU) followed by a
residual check; Jacobi-preconditioned CG and a Schur-complement CG are
available through ``method=`` and are what the tests compare against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DEFAULT_TOL = 1e-12
DENSE_LIMIT = 500


class SolverError(RuntimeError):
    """Iterative solve did not reach the requested tolerance."""


class InfSupError(SolverError):
    """The constraint block of a saddle-point system is rank deficient."""


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    final_relative_residual: float
    method_tag: str


def csr_from_coo(rows, cols, vals, shape) -> sp.csr_matrix:
    """Vectorized assembly: duplicates summed, indices sorted."""
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    vals = np.asarray(vals, dtype=float).ravel()
    n_rows, n_cols = shape
    if rows.size and (rows.min() < 0 or rows.max() >= n_rows
                      or cols.min() < 0 or cols.max() >= n_cols):
        raise IndexError("triplet index out of range for shape %s" % (shape,))
    mat = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def assemble_from_triplets(triplets: Iterable[Sequence], shape) -> sp.csr_matrix:
    """Build a CSR matrix from ``(row, col, value)`` triplets.

    ``shape`` may be an int for square matrices.
    """
    if np.isscalar(shape):
        shape = (int(shape), int(shape))
    trip = list(triplets)
    if not trip:
        return sp.csr_matrix(shape, dtype=float)
    rows, cols, vals = zip(*trip)
    return csr_from_coo(rows, cols, vals, shape)


def _relres(A, x, b, bnorm):
    return float(np.linalg.norm(A @ x - b) / bnorm)


def pcg(A, b, tol=DEFAULT_TOL, maxiter=None, x0=None):
    """Conjugate gradients with a diagonal (Jacobi) preconditioner.

    Returns ``(x, iterations, relative_residual)``; raises
    :class:`SolverError` when the cap of ``10 n`` iterations is hit.
    """
    n = b.shape[0]
    maxiter = 10 * n if maxiter is None else maxiter
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("matrix has non-positive diagonal entries")
    dinv = 1.0 / diag
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise SolverError("matrix is not positive definite (p'Ap=%g)" % pAp)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        # the recursive residual drifts; confirm against the true one
        if np.linalg.norm(r) <= tol * bnorm:
            res = _relres(A, x, b, bnorm)
            if res <= tol:
                return x, it, res
            r = b - A @ x
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError("PCG did not converge in %d iterations (relres %.3e)"
                      % (maxiter, _relres(A, x, b, bnorm)))


def _equilibrate(A, sweeps=5):
    """Symmetric Ruiz scaling: d such that diag(d) A diag(d) has unit row maxima."""
    A = sp.csr_matrix(A)
    d = np.ones(A.shape[0])
    for _ in range(sweeps):
        S = sp.diags(d) @ A @ sp.diags(d)
        rmax = abs(S).max(axis=1).toarray().ravel()
        rmax[rmax == 0] = 1.0
        d /= np.sqrt(rmax)
    return d


def _lu_solve(A, b, tol, tag):
    bnorm = np.linalg.norm(b)
    # without scaling the pivot ratio mixes tiny elements with large
    # contrasts and stops meaning anything
    d = _equilibrate(A)
    D = sp.diags(d)
    try:
        lu = spla.splu(sp.csc_matrix(D @ A @ D))
    except RuntimeError as exc:  # "Factor is exactly singular"
        raise InfSupError(str(exc)) from exc
    udiag = np.abs(lu.U.diagonal())
    if udiag.min() <= 1e-13 * udiag.max():
        raise InfSupError("numerically singular factor (pivot ratio %.2e)"
                          % (udiag.min() / udiag.max()))

    def solve(r):
        return d * lu.solve(d * r)

    x = solve(b)
    res = _relres(A, x, b, bnorm)
    steps = 0
    # refine well past the tolerance so derived quantities keep a margin
    while res > 1e-3 * tol and steps < 3:
        x += solve(b - A @ x)
        res = _relres(A, x, b, bnorm)
        steps += 1
    if res > tol:
        raise SolverError("%s residual %.3e above tolerance %.1e" % (tag, res, tol))
    return x, steps + 1, res


def spd_solve(A, b, tol: float = DEFAULT_TOL, method: str = "direct"):
    """Solve ``A x = b`` for SPD ``A``.

    ``method`` is ``"direct"`` (sparse LU plus refinement) or ``"pcg"``.
    """
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError("shape mismatch: A %s, b %s" % (A.shape, b.shape))
    if not np.any(b):
        return np.zeros_like(b), SolveReport(0, 0.0, method)
    if method == "pcg":
        x, it, res = pcg(sp.csr_matrix(A), b, tol=tol)
        return x, SolveReport(it, res, "pcg-jacobi")
    if method == "direct":
        x, it, res = _lu_solve(A, b, tol, "spd LU")
        return x, SolveReport(it, res, "splu")
    raise ValueError("unknown method %r" % method)


def _block(M, B):
    return sp.bmat([[M, B.T], [B, None]], format="csc")


def saddle_solve(M, B, f, g, tol: float = DEFAULT_TOL, method: str = "auto"):
    """Solve ``[[M, B^T], [B, 0]] (x, y) = (f, g)``.

    ``method``: ``"auto"`` (dense below 500 unknowns, else sparse LU),
    ``"direct"``, ``"dense"`` or ``"schur"`` (CG on ``B M^-1 B^T``).
    Raises :class:`InfSupError` when ``B`` lacks full row rank.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    n, m = M.shape[0], B.shape[0]
    if B.shape[1] != n or f.shape[0] != n or g.shape[0] != m:
        raise ValueError("inconsistent block shapes")
    if method == "auto":
        method = "dense" if n + m < DENSE_LIMIT else "direct"
    rhs = np.concatenate([f, g])
    rnorm = np.linalg.norm(rhs)
    if rnorm == 0.0:
        return np.zeros(n), np.zeros(m), SolveReport(0, 0.0, method)

    if method == "dense":
        Bd = B.toarray() if sp.issparse(B) else np.asarray(B)
        if m and np.linalg.matrix_rank(Bd) < m:
            raise InfSupError("constraint block has rank < %d" % m)
        K = _block(sp.csr_matrix(M), sp.csr_matrix(Bd)).toarray()
        sol = np.linalg.solve(K, rhs)
        res = float(np.linalg.norm(K @ sol - rhs) / rnorm)
        if res > tol:
            sol += np.linalg.solve(K, rhs - K @ sol)
            res = float(np.linalg.norm(K @ sol - rhs) / rnorm)
        if res > tol:
            raise SolverError("dense saddle residual %.3e" % res)
        return sol[:n], sol[n:], SolveReport(1, res, "dense")

    if method == "direct":
        K = _block(sp.csr_matrix(M), sp.csr_matrix(B))
        sol, it, res = _lu_solve(K, rhs, tol, "saddle LU")
        return sol[:n], sol[n:], SolveReport(it, res, "splu-block")

    if method == "schur":
        return _schur_cg(sp.csr_matrix(M), sp.csr_matrix(B), f, g, tol)
    raise ValueError("unknown method %r" % method)


def _schur_cg(M, B, f, g, tol):
    n, m = M.shape[0], B.shape[0]
    lu = spla.splu(sp.csc_matrix(M))
    Minv = lu.solve
    # S y = B M^-1 f - g ,  x = M^-1 (f - B^T y)
    rhs = B @ Minv(f) - g
    y = np.zeros(m)
    rnorm = np.linalg.norm(np.concatenate([f, g]))
    maxiter = 10 * m
    r = rhs.copy()
    p = r.copy()
    rr = r @ r
    it = 0
    scale = max(np.linalg.norm(rhs), rnorm)
    s_scale = None
    while np.sqrt(rr) > 1e-2 * tol * scale and it < maxiter:
        Sp = B @ Minv(B.T @ p)
        pSp = p @ Sp
        ray = pSp / (p @ p)
        s_scale = ray if s_scale is None else max(s_scale, ray)
        if ray <= 1e-13 * s_scale:
            raise InfSupError("Schur complement is singular (Rayleigh %.2e)" % ray)
        alpha = rr / pSp
        y += alpha * p
        r -= alpha * Sp
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
    x = Minv(f - B.T @ y)
    res = np.sqrt(np.linalg.norm(M @ x + B.T @ y - f) ** 2
                  + np.linalg.norm(B @ x - g) ** 2) / rnorm
    if res > tol:
        raise SolverError("Schur CG stalled after %d iterations (relres %.3e)"
                          % (it, res))
    return x, y, SolveReport(it, float(res), "schur-cg")
