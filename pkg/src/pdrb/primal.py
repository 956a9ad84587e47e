"""Conforming P1 solve for -div(alpha grad u) = f with Dirichlet elimination."""

from __future__ import annotations

import numpy as np

from . import fe
from .linalg import DEFAULT_TOL, spd_solve
from .problem import MU_REF, Discretization, as_mu


def _free_solve(disc: Discretization, A, rhs, fixed, tol, method):
    sp_ = disc.spaces
    free = sp_.free_vertices
    u = np.array(fixed, dtype=float)
    r = rhs - A @ u
    if len(free):
        Aff = A[free][:, free]
        du, _ = spd_solve(Aff, r[free], tol=tol, method=method)
        u[free] += du
    return u


def build_primal_lifting(disc: Discretization, g_vertex) -> fe.PrimalField:
    """Discrete harmonic extension of Dirichlet values at the reference parameter.

    ``g_vertex`` holds P1 nodal values; only the Dirichlet vertices are read.
    """
    sp_ = disc.spaces
    g = np.asarray(g_vertex, dtype=float)
    if g.shape != (sp_.n_p1,):
        raise ValueError("Dirichlet data must be given at all %d vertices" % sp_.n_p1)
    fixed = np.zeros(sp_.n_p1)
    fixed[sp_.dirichlet_vertices] = g[sp_.dirichlet_vertices]
    if not np.any(fixed):
        return fe.PrimalField(fixed, disc.stamp)
    u = _free_solve(disc, disc.stiffness(MU_REF), np.zeros(sp_.n_p1), fixed, DEFAULT_TOL, "direct")
    return fe.PrimalField(u, disc.stamp)


def solve_primal(disc: Discretization, mu, lifting: fe.PrimalField | None = None,
                 tol: float = DEFAULT_TOL, method: str = "direct") -> fe.PrimalField:
    """u_h = u_0 + u_g with u_0 zero on the Dirichlet boundary."""
    ug = disc.primal_lifting() if lifting is None else lifting
    fe.check_stamp(disc.spaces, ug)
    A = disc.stiffness(mu)
    u = _free_solve(disc, A, disc.load, ug.values, tol, method)
    return fe.PrimalField(u, disc.stamp)


def primal_energy(disc: Discretization, v: fe.PrimalField, mu) -> float:
    """1/2 a(v, v) - (f_h, v) + (g_N, v)_N."""
    fe.check_stamp(disc.spaces, v)
    x = v.values
    return float(0.5 * x @ (disc.stiffness(mu) @ x) - disc.load @ x)


def galerkin_residual(disc: Discretization, u: fe.PrimalField, mu) -> float:
    """Relative residual of the Galerkin equations on the free vertices."""
    free = disc.spaces.free_vertices
    r = (disc.stiffness(mu) @ u.values - disc.load)[free]
    scale = np.linalg.norm(disc.load[free]) + np.linalg.norm((disc.stiffness(mu) @ u.values)[free])
    return float(np.linalg.norm(r) / scale) if scale > 0 else float(np.linalg.norm(r))


def energy_norm_sq(disc: Discretization, v, mu) -> float:
    x = v.values if isinstance(v, fe.PrimalField) else np.asarray(v)
    return float(x @ (disc.stiffness(as_mu(mu)) @ x))
