"""Mixed RT0/P0 solve of the complementary energy problem.

The flux is split as ``sigma_h = sigma_00 + sigma_fg`` where the lifting
``sigma_fg`` carries the source (``div = f_h``) and the Neumann trace,
and ``sigma_00`` is divergence free with zero Neumann trace.  The P0
multiplier enforcing ``div sigma_00 = 0`` is discarded.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fe
from .linalg import saddle_solve
from .mesh import NEUMANN
from .problem import MU_REF, Discretization

SADDLE_TOL = 1e-10


class InfeasibleLiftingError(ValueError):
    pass


def _blocks(disc: Discretization, M):
    sp_ = disc.spaces
    fr = sp_.free_edges
    Mf = M[fr][:, fr]
    Bf = disc.B[:, fr]
    return fr, Mf, Bf


def _polish(Bf, x, g, sweeps=2):
    """Minimum-norm correction so that ``Bf x = g`` row by row.

    The saddle solve controls a global residual, which leaves rows of tiny
    elements loose.  The correction is of residual size, so it is computed
    to full relative accuracy and does not move the energy.
    """
    BBt = sp.csc_matrix(Bf @ Bf.T)
    lu = spla.splu(BBt)
    for _ in range(sweeps):
        r = g - Bf @ x
        if not np.any(r):
            break
        x = x + Bf.T @ lu.solve(r)
    return x


def roundoff_floor(disc: Discretization, flux) -> np.ndarray:
    """Per-element rounding level of the elementwise divergence.

    The divergence is a sum of ``|E| x_E`` divided by ``|T|``, and solved
    fluxes are formed as lifting plus correction.  On tiny elements the
    result cannot be more accurate than a few ulps of those summands,
    whatever the solver does.
    """
    sp_ = disc.spaces
    mag = np.abs(flux)
    if disc.data.sources or disc.data.neumann:
        mag = mag + np.abs(disc.dual_lifting().flux)
    s = np.sum(mag[sp_.t2e] * sp_.edge_len[sp_.t2e], axis=1)
    return 4.0 * np.finfo(float).eps * s / sp_.areas


def feasibility_defect(disc: Discretization, tau: fe.DualField, f_h=None,
                       roundoff: bool = False) -> float:
    """max |div tau - f_h| scaled by 1 + max|f_h|, plus the Neumann trace mismatch.

    With ``roundoff=True`` the per-element rounding floor is discounted first.
    """
    f_h = disc.f_h if f_h is None else f_h
    err = np.abs(fe.divergence(disc.spaces, tau) - f_h)
    if roundoff:
        err = np.maximum(err - roundoff_floor(disc, tau.flux), 0.0)
    d = np.max(err, initial=0.0) / (1.0 + np.max(np.abs(f_h), initial=0.0))
    return float(d + _neumann_defect(disc, tau.flux))


def _neumann_target(disc: Discretization, gn_total=None):
    sp_ = disc.spaces
    ids, _ = fe.boundary_edge_vertices(sp_, NEUMANN)
    if gn_total is None:
        gn_total = sum(disc.gn_terms, np.zeros(len(ids)))
    sgn = sp_.boundary_sign[sp_.boundary_markers == NEUMANN]
    return ids, sgn * gn_total


def _neumann_defect(disc, flux) -> float:
    ids, target = _neumann_target(disc)
    if len(ids) == 0:
        return 0.0
    return float(np.max(np.abs(flux[ids] - target)) / (1.0 + np.max(np.abs(target))))


def build_dual_lifting(disc: Discretization, f_h=None, g_edge=None):
    """(sigma_f0, sigma_0g) at the reference parameter.

    ``f_h`` is P0 data (None for zero); ``g_edge`` holds normal flux values
    on the Neumann edges in boundary order (None for zero).
    """
    sp_ = disc.spaces
    fr, Mf, Bf = _blocks(disc, disc.mass(MU_REF))
    ids, ev = fe.boundary_edge_vertices(sp_, NEUMANN)
    # sigma_f0
    flux0 = np.zeros(sp_.n_rt0)
    if f_h is not None:
        f_h = np.asarray(f_h, dtype=float)
        if f_h.shape != (sp_.n_p0,):
            raise ValueError("source must be piecewise constant with %d values" % sp_.n_p0)
        x, _, _ = saddle_solve(Mf, Bf, np.zeros(len(fr)), f_h * sp_.areas, tol=SADDLE_TOL)
        flux0[fr] = _polish(Bf, x, f_h * sp_.areas)
    # sigma_0g
    flux1 = np.zeros(sp_.n_rt0)
    if g_edge is not None:
        g_edge = np.asarray(g_edge, dtype=float)
        if g_edge.shape != (len(ids),):
            raise ValueError("Neumann data must have one value per Neumann edge (%d)" % len(ids))
        sgn = sp_.boundary_sign[sp_.boundary_markers == NEUMANN]
        flux1[ids] = sgn * g_edge
        M0 = disc.mass(MU_REF)
        x, _, _ = saddle_solve(Mf, Bf, -(M0 @ flux1)[fr], -(disc.B @ flux1), tol=SADDLE_TOL)
        flux1[fr] = _polish(Bf, x, -(disc.B @ flux1))
    return fe.DualField.from_flux(sp_, flux0), fe.DualField.from_flux(sp_, flux1)


def solve_dual(disc: Discretization, mu, lifting: fe.DualField | None = None,
               tol: float = SADDLE_TOL, method: str = "auto") -> fe.DualField:
    """sigma_h maximizing the complementary energy over feasible fluxes."""
    lift = disc.dual_lifting() if lifting is None else lifting
    fe.check_stamp(disc.spaces, lift)
    defect = feasibility_defect(disc, lift, roundoff=True)
    if defect > 1e-10:
        raise InfeasibleLiftingError("lifting violates the constraints (defect %.2e)" % defect)
    M = disc.mass(mu)
    fr, Mf, Bf = _blocks(disc, M)
    rhs = -(M @ lift.flux + disc.dirichlet_functional)[fr]
    x, _, _ = saddle_solve(Mf, Bf, rhs, np.zeros(Bf.shape[0]), tol=tol, method=method)
    flux = lift.flux.copy()
    flux[fr] += _polish(Bf, x, np.zeros(Bf.shape[0]))
    return fe.DualField.from_flux(disc.spaces, flux)


def dual_energy(disc: Discretization, tau: fe.DualField, mu) -> float:
    """-1/2 b(tau, tau) - (tau . n, g_D)_D."""
    fe.check_stamp(disc.spaces, tau)
    t = tau.flux
    return float(-0.5 * t @ (disc.mass(mu) @ t) - disc.dirichlet_functional @ t)


def energy_norm_sq(disc: Discretization, tau, mu) -> float:
    t = tau.flux if isinstance(tau, fe.DualField) else np.asarray(tau)
    return float(t @ (disc.mass(mu) @ t))
