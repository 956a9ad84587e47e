"""Uniform-refinement study against a known exact solution."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fe
from .dual import feasibility_defect, dual_energy, solve_dual
from .estimator import local_gap, oscillation
from .mesh import make_unit_square, uniform_refine
from .primal import primal_energy, solve_primal
from .problem import Discretization, manufactured_problem


@dataclass
class LevelResult:
    n_triangles: int
    h: float
    err_primal: float
    err_dual: float
    eta: float
    identity: float      # |2(Jp - Jd) - eta^2| / eta^2
    oscillation: float
    feasibility: float   # max |div sigma_h - f_h| / (1 + max |f_h|)


@dataclass
class ConvergenceStudy:
    levels: list = field(default_factory=list)

    def rates(self, attr: str) -> np.ndarray:
        e = np.array([getattr(l, attr) for l in self.levels])
        h = np.array([l.h for l in self.levels])
        return np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])

    def table(self) -> str:
        head = "%8s %10s %12s %12s %12s %10s %12s" % (
            "elems", "h", "err_p", "err_d", "eta", "identity", "osc")
        lines = [head]
        for l in self.levels:
            lines.append("%8d %10.4g %12.6g %12.6g %12.6g %10.2e %12.4g" % (
                l.n_triangles, l.h, l.err_primal, l.err_dual, l.eta, l.identity,
                l.oscillation))
        if len(self.levels) > 1:
            lines.append("rates primal: " + " ".join("%.3f" % r for r in self.rates("err_primal")))
            lines.append("rates dual:   " + " ".join("%.3f" % r for r in self.rates("err_dual")))
        return "\n".join(lines)


def energy_errors(disc: Discretization, u: fe.PrimalField, sigma: fe.DualField, exact,
                  alpha: float = 1.0, degree: int = 7):
    """(||alpha^1/2 grad(u - u_h)||, ||alpha^-1/2 (sigma - sigma_h)||), sigma = -alpha grad u."""
    sp_ = disc.spaces
    bary, w = fe.quadrature(degree)
    x = np.einsum("qk,tkd->tqd", bary, sp_.points)
    _, g = exact(x[..., 0], x[..., 1])
    gh = fe.p1_gradients(sp_, u.values)[:, None, :]
    sh = fe.flux_at(sp_, sigma.flux, bary)
    ep = alpha * np.sum((g - gh) ** 2, axis=-1) @ w
    ed = np.sum((-alpha * g - sh) ** 2, axis=-1) @ w / alpha
    return float(np.sqrt(ep @ sp_.areas)), float(np.sqrt(ed @ sp_.areas))


def manufactured_study(n0: int = 4, levels: int = 5, data=None) -> ConvergenceStudy:
    """Unit square, alpha = 1 (mu = 0), h halved between levels."""
    data = data or manufactured_problem()
    mu = (0.0, 0.0)
    base = make_unit_square(n0)
    study = ConvergenceStudy()
    for k in range(levels):
        mesh = uniform_refine(base, 2 * k)
        disc = Discretization(mesh, data)
        u = solve_primal(disc, mu)
        s = solve_dual(disc, mu)
        ind = local_gap(disc, u, s, mu)
        eta = ind.total
        gap2 = 2.0 * (primal_energy(disc, u, mu) - dual_energy(disc, s, mu))
        ep, ed = energy_errors(disc, u, s, data.exact)
        h = float(disc.spaces.edge_len.max())
        osc = float(np.sqrt(np.sum(oscillation(disc) ** 2)))
        study.levels.append(LevelResult(mesh.n_triangles, h, ep, ed, eta,
                                        abs(gap2 - eta ** 2) / eta ** 2, osc,
                                        feasibility_defect(disc, s)))
    return study
