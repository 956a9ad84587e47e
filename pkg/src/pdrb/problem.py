"""Parameters, affine coefficients and the assembled discretization.

The diffusion coefficient is ``10**mu[q-1]`` on region q, so the forms
split as ``a = sum_q theta_a[q] a^q`` and ``b = sum_q theta_b[q] b^q``
with ``theta_b = 1/theta_a``.  Data terms (sources, Dirichlet and
Neumann values) are parameter independent and simply summed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from . import fe
from .mesh import NEUMANN, Mesh

MU_REF = (0.0, 0.0)
BOX = (-2.0, 2.0)

Data = Union[float, Callable]


@dataclass(frozen=True)
class Parameter:
    mu1: float
    mu2: float

    def __post_init__(self):
        if not (np.isfinite(self.mu1) and np.isfinite(self.mu2)):
            raise ValueError("parameter components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.mu1, self.mu2], dtype=float)

    def in_box(self, box=BOX) -> bool:
        return bool(box[0] <= self.mu1 <= box[1] and box[0] <= self.mu2 <= box[1])


def as_mu(mu) -> np.ndarray:
    if isinstance(mu, Parameter):
        return mu.as_array()
    a = np.asarray(mu, dtype=float).reshape(-1)
    if a.shape != (2,):
        raise ValueError("parameter must have two components, got %r" % (mu,))
    return a


@dataclass(frozen=True)
class AffineThetas:
    theta_a: np.ndarray
    theta_b: np.ndarray


def thetas(mu) -> AffineThetas:
    m = as_mu(mu)
    ta = 10.0 ** m
    return AffineThetas(ta, 10.0 ** (-m))


@dataclass(frozen=True)
class ProblemData:
    """Right-hand side data as lists of terms.

    ``sources`` are f^q, ``dirichlet`` are g_D^q and ``neumann`` are the
    prescribed normal fluxes ``sigma . n`` with ``sigma = -A grad u``.
    Each entry is a constant or a vectorized ``f(x, y)``.
    """
    sources: Sequence[Data] = (1.0,)
    dirichlet: Sequence[Data] = ()
    neumann: Sequence[Data] = ()
    exact: Callable | None = None  # optional (u, grad_u) for convergence studies


class Discretization:
    """Everything assembled once per mesh: spaces, affine operators and data.

    Liftings are built on first use and cached, so one object per mesh
    generation is the intended lifetime.
    """

    def __init__(self, mesh: Mesh, data: ProblemData | None = None):
        self.mesh = mesh
        self.data = data or ProblemData()
        self.spaces = sp_ = fe.build_spaces(mesh)
        self.K = fe.stiffness_by_region(sp_)
        self.M = fe.rt0_mass_by_region(sp_)
        self.B = fe.div_matrix(sp_)
        self.C = fe.coupling_matrix(sp_)
        d = self.data
        self.f_terms = [fe.p0_project(sp_, f) for f in d.sources]
        self.load_terms = [fe.p1_load(sp_, fh) for fh in self.f_terms]
        self.gd_terms = [fe.p1_interpolate(sp_, g) for g in d.dirichlet]
        self.ld_terms = [fe.dirichlet_functional(sp_, g) for g in self.gd_terms]
        has_n = np.any(sp_.boundary_markers == NEUMANN)
        if d.neumann and not has_n:
            warnings.warn("Neumann data given but the mesh has no Neumann edges")
        self.gn_terms = [fe.neumann_edge_values(sp_, g) for g in d.neumann]
        self.nload_terms = [fe.neumann_load(sp_, g) for g in self.gn_terms]
        self._primal_lift = None
        self._dual_lift = None

    # totals -------------------------------------------------------------

    @property
    def stamp(self) -> int:
        return self.spaces.stamp

    @property
    def f_h(self) -> np.ndarray:
        return sum(self.f_terms, np.zeros(self.spaces.n_p0))

    @property
    def load(self) -> np.ndarray:
        """(f_h, v) - (g_N, v)_N as a P1 vector."""
        out = sum(self.load_terms, np.zeros(self.spaces.n_p1))
        return out - sum(self.nload_terms, np.zeros(self.spaces.n_p1))

    @property
    def dirichlet_functional(self) -> np.ndarray:
        return sum(self.ld_terms, np.zeros(self.spaces.n_rt0))

    def stiffness(self, mu):
        ta = thetas(mu).theta_a
        return ta[0] * self.K[0] + ta[1] * self.K[1]

    def mass(self, mu):
        tb = thetas(mu).theta_b
        return tb[0] * self.M[0] + tb[1] * self.M[1]

    def alpha(self, mu) -> np.ndarray:
        ta = thetas(mu).theta_a
        return np.where(self.mesh.region == 1, ta[0], ta[1])

    def operators(self):
        return self.K, self.M, self.C

    # liftings -----------------------------------------------------------

    def primal_liftings(self) -> list:
        if self._primal_lift is None:
            from .primal import build_primal_lifting
            self._primal_lift = [build_primal_lifting(self, g) for g in self.gd_terms]
        return self._primal_lift

    def dual_liftings(self) -> list:
        """[sigma_f0^q for each source] + [sigma_0g^q for each Neumann term]."""
        if self._dual_lift is None:
            from .dual import build_dual_lifting
            out = [build_dual_lifting(self, fh, None)[0] for fh in self.f_terms]
            out += [build_dual_lifting(self, None, g)[1] for g in self.gn_terms]
            self._dual_lift = out
        return self._dual_lift

    def primal_lifting(self) -> fe.PrimalField:
        lifts = self.primal_liftings()
        vals = sum((l.values for l in lifts), np.zeros(self.spaces.n_p1))
        return fe.PrimalField(vals, self.stamp)

    def dual_lifting(self) -> fe.DualField:
        lifts = self.dual_liftings()
        flux = sum((l.flux for l in lifts), np.zeros(self.spaces.n_rt0))
        return fe.DualField.from_flux(self.spaces, flux)


def lshape_problem() -> ProblemData:
    """Unit source, homogeneous Dirichlet data on the whole boundary."""
    return ProblemData(sources=(1.0,))


def manufactured_problem() -> ProblemData:
    """u = sin(pi x) sin(pi y) on the unit square with alpha = 1."""
    pi = np.pi

    def f(x, y):
        return 2 * pi ** 2 * np.sin(pi * x) * np.sin(pi * y)

    def exact(x, y):
        u = np.sin(pi * x) * np.sin(pi * y)
        gx = pi * np.cos(pi * x) * np.sin(pi * y)
        gy = pi * np.sin(pi * x) * np.cos(pi * y)
        return u, np.stack([gx, gy], axis=-1)

    return ProblemData(sources=(f,), exact=exact)
