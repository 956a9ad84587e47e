"""Primal-dual gap indicators.

For a primal field u and a feasible flux sigma the local indicator is
``||alpha^{1/2} grad u + alpha^{-1/2} sigma||_{0,T}``.  The integrand is
quadratic on each element, so the edge-midpoint rule is exact and no
cancellation between large energies is involved.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import fe
from .dual import feasibility_defect
from .problem import Discretization, as_mu


@dataclass(frozen=True)
class IndicatorField:
    local: np.ndarray
    stamp: int

    @property
    def total(self) -> float:
        return float(np.sqrt(np.sum(self.local ** 2)))


def local_gap(disc: Discretization, u: fe.PrimalField, sigma: fe.DualField, mu,
              check: bool = True) -> IndicatorField:
    sp_ = disc.spaces
    fe.check_stamp(sp_, u, sigma)
    if check:
        defect = feasibility_defect(disc, sigma, roundoff=True)
        if defect > 1e-8:
            raise ValueError("flux is not dual feasible (defect %.2e)" % defect)
    alpha = disc.alpha(as_mu(mu))
    g = fe.p1_gradients(sp_, u.values)
    s = fe.flux_at(sp_, sigma.flux, fe.MIDPOINT_BARY)
    w = np.sqrt(alpha)[:, None, None] * g[:, None, :] + s / np.sqrt(alpha)[:, None, None]
    eta2 = np.einsum("tqd,tqd->t", w, w) * sp_.areas / 3.0
    return IndicatorField(np.sqrt(eta2), sp_.stamp)


def sum_indicator(fields: Sequence[IndicatorField]) -> IndicatorField:
    """Elementwise root-sum-square over several parameters."""
    fields = list(fields)
    if not fields:
        raise ValueError("need at least one indicator field")
    stamps = {f.stamp for f in fields}
    if len(stamps) != 1:
        raise fe.StaleFieldError("indicator fields come from different meshes")
    loc = np.sqrt(np.sum([f.local ** 2 for f in fields], axis=0))
    return IndicatorField(loc, fields[0].stamp)


def gap_pairs(disc: Discretization, pairs) -> IndicatorField:
    """sum_indicator over ``(u, sigma, mu)`` triples."""
    return sum_indicator([local_gap(disc, u, s, mu) for u, s, mu in pairs])


def oscillation(disc: Discretization, f=None, degree: int = 7) -> np.ndarray:
    """Per-element ``h_T / pi * ||f - f_h||_{0,T}`` (alpha = 1 scaling).

    Reported next to the estimator, never added to it.
    """
    sp_ = disc.spaces
    srcs = disc.data.sources if f is None else [f]
    bary, w = fe.quadrature(degree)
    x = np.einsum("qk,tkd->tqd", bary, sp_.points)
    total = np.zeros(x.shape[:2])
    for s in srcs:
        if np.isscalar(s):
            total += s
        else:
            total += np.broadcast_to(s(x[..., 0], x[..., 1]), x.shape[:2])
    fh = total @ w
    l2 = np.sqrt(((total - fh[:, None]) ** 2) @ w * sp_.areas)
    h = sp_.edge_len[sp_.t2e].max(axis=1)
    return h / np.pi * l2
