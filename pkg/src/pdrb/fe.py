"""P1, RT0 and P0 spaces on a triangle mesh.

Conventions
-----------
* P1 DOFs are vertices, P0 DOFs are triangles, RT0 DOFs are edges.
* Each edge runs from its lower to its higher vertex index.  Its global
  unit normal is the tangent turned clockwise, ``n = (t_y, -t_x)/|t|``.
* The RT0 DOF is the (constant) normal component ``tau . n`` on the edge,
  so the flux through an edge is ``DOF * |E|``.
* On triangle T with CCW vertices P0, P1, P2, local edge k is opposite
  P_k and the restricted basis function is
  ``s_k |E_k| / (2|T|) (x - P_k)``, with ``s_k = +1`` when the global
  normal points out of T.  Its divergence is ``s_k |E_k| / |T|``.

All products of P1 gradients, RT0 fluxes and P0 constants are at most
quadratic per element, so the three edge-midpoint rule integrates them
exactly.  Analytic data uses a collapsed Gauss-Legendre rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .linalg import csr_from_coo
from .mesh import DIRICHLET, NEUMANN, Mesh

REGIONS = (1, 2)


class StaleFieldError(ValueError):
    """A field was built on a different mesh than the spaces it is used with."""


# --- quadrature ------------------------------------------------------------

# barycentric coordinates of the edge midpoints, weight 1/3 each
MIDPOINT_BARY = np.array([[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]])
MIDPOINT_W = np.full(3, 1.0 / 3.0)


def quadrature(degree: int):
    """Barycentric points and weights (summing to 1) exact to ``degree``.

    Degree <= 2 returns the edge-midpoint rule; higher degrees use a
    collapsed (Duffy) tensor Gauss-Legendre rule.
    """
    if degree <= 2:
        return MIDPOINT_BARY.copy(), MIDPOINT_W.copy()
    n = (degree + 3) // 2
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    xi, eta = np.meshgrid(x, x, indexing="ij")
    wi, we = np.meshgrid(w, w, indexing="ij")
    l1 = xi.ravel()
    l2 = (eta * (1.0 - xi)).ravel()
    ww = (wi * we * (1.0 - xi)).ravel() * 2.0
    bary = np.stack([1.0 - l1 - l2, l1, l2], axis=1)
    return bary, ww


# --- local element matrices -----------------------------------------------


def _geom(P):
    P = np.asarray(P, dtype=float)
    d1 = P[..., 1, :] - P[..., 0, :]
    d2 = P[..., 2, :] - P[..., 0, :]
    area = 0.5 * (d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0])
    if np.any(np.abs(area) <= 1e-300) or np.any(~np.isfinite(area)):
        raise ValueError("degenerate triangle")
    return P, area


def bary_gradients(P):
    """Gradients of the barycentric functions, shape (..., 3, 2)."""
    P, area = _geom(P)
    e = np.roll(P, -2, axis=-2) - np.roll(P, -1, axis=-2)  # P_{k+2} - P_{k+1}
    g = np.stack([-e[..., 1], e[..., 0]], axis=-1)
    return g / (2.0 * area[..., None, None])


def local_p1_stiffness(P, alpha=1.0):
    """alpha * |T| * grad(l_i) . grad(l_j) for one or many triangles."""
    P, area = _geom(P)
    g = bary_gradients(P)
    k = np.einsum("...id,...jd->...ij", g, g) * np.abs(area)[..., None, None]
    return np.asarray(alpha)[..., None, None] * k


def _edge_lengths(P):
    e = np.roll(P, -2, axis=-2) - np.roll(P, -1, axis=-2)
    return np.linalg.norm(e, axis=-1)


def local_rt0_mass(P, alpha_inv=1.0, signs=None):
    """alpha_inv * integral of phi_i . phi_j with the basis described above.

    ``signs`` (default all +1) flips the orientation of individual edges.
    """
    P, area = _geom(P)
    a = np.abs(area)
    c = _edge_lengths(P) / (2.0 * a[..., None])
    if signs is not None:
        c = c * np.asarray(signs, dtype=float)
    mids = np.einsum("qk,...kd->...qd", MIDPOINT_BARY, P)
    diff = mids[..., :, None, :] - P[..., None, :, :]  # (..., q, k, d)
    m = np.einsum("...qid,...qjd->...ij", diff, diff) * (a / 3.0)[..., None, None]
    m = m * c[..., :, None] * c[..., None, :]
    return np.asarray(alpha_inv)[..., None, None] * m


def local_div(P, signs=None):
    """Elementwise divergence of each RT0 basis function."""
    P, area = _geom(P)
    d = _edge_lengths(P) / np.abs(area)[..., None]
    if signs is not None:
        d = d * np.asarray(signs, dtype=float)
    return d


# --- spaces ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FESpaces:
    mesh: Mesh
    edges: np.ndarray
    t2e: np.ndarray
    signs: np.ndarray
    edge_len: np.ndarray
    areas: np.ndarray
    grads: np.ndarray
    boundary_edge_ids: np.ndarray
    boundary_markers: np.ndarray
    boundary_sign: np.ndarray  # +1 where the global normal points outward
    dirichlet_vertices: np.ndarray
    free_vertices: np.ndarray
    neumann_edges: np.ndarray
    free_edges: np.ndarray

    @property
    def stamp(self) -> int:
        return self.mesh.uid

    @property
    def n_p1(self) -> int:
        return self.mesh.n_vertices

    @property
    def n_rt0(self) -> int:
        return len(self.edges)

    @property
    def n_p0(self) -> int:
        return self.mesh.n_triangles

    @property
    def ndof_primal(self) -> int:
        return self.n_p1

    @property
    def ndof_dual(self) -> int:
        return self.n_rt0 + self.n_p0

    @cached_property
    def points(self) -> np.ndarray:
        return self.mesh.vertices[self.mesh.triangles]

    def region_mask(self, q: int) -> np.ndarray:
        return self.mesh.region == q

    def edge_normals(self) -> np.ndarray:
        v = self.mesh.vertices
        t = v[self.edges[:, 1]] - v[self.edges[:, 0]]
        return np.stack([t[:, 1], -t[:, 0]], axis=1) / self.edge_len[:, None]


def build_spaces(mesh: Mesh) -> FESpaces:
    edges, t2e = mesh.edge_topology()
    le = mesh.local_edges()
    signs = np.where(le[..., 0] < le[..., 1], 1.0, -1.0)
    v = mesh.vertices
    edge_len = np.linalg.norm(v[edges[:, 1]] - v[edges[:, 0]], axis=1)
    P = v[mesh.triangles]
    areas = mesh.areas()
    grads = bary_gradients(P)

    nv = mesh.n_vertices
    key = edges[:, 0] * nv + edges[:, 1]
    be = np.sort(mesh.boundary_edges, axis=1)
    bkey = be[:, 0] * nv + be[:, 1]
    bid = np.searchsorted(key, bkey)
    if len(bid) and (np.any(bid >= len(key)) or np.any(key[np.minimum(bid, len(key) - 1)] != bkey)):
        raise ValueError("boundary edge not present in the triangulation")
    # outward sign from the single adjacent triangle
    owner = np.full(len(edges), -1, dtype=np.int64)
    local = np.full(len(edges), -1, dtype=np.int64)
    owner[t2e.ravel()] = np.repeat(np.arange(len(t2e)), 3)
    local[t2e.ravel()] = np.tile(np.arange(3), len(t2e))
    bsign = signs[owner[bid], local[bid]]

    markers = np.asarray(mesh.boundary_markers)
    dir_edges = be[markers == DIRICHLET]
    dvert = np.unique(dir_edges.ravel())
    fvert = np.setdiff1d(np.arange(nv), dvert)
    nedges = np.sort(bid[markers == NEUMANN])
    fedges = np.setdiff1d(np.arange(len(edges)), nedges)
    return FESpaces(mesh, edges, t2e, signs, edge_len, areas, grads,
                    bid, markers, bsign, dvert, fvert, nedges, fedges)


# --- fields ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PrimalField:
    values: np.ndarray
    stamp: int


@dataclass(frozen=True, eq=False)
class DualField:
    flux: np.ndarray
    div: np.ndarray
    stamp: int

    @classmethod
    def from_flux(cls, spaces: FESpaces, flux) -> "DualField":
        flux = np.asarray(flux, dtype=float)
        return cls(flux, divergence_of(spaces, flux), spaces.stamp)


def check_stamp(spaces: FESpaces, *fields) -> None:
    for f in fields:
        if f.stamp != spaces.stamp:
            raise StaleFieldError("field from mesh %d used on mesh %d" % (f.stamp, spaces.stamp))


# --- global assembly ------------------------------------------------------


def _assemble(spaces, local, rows_map, cols_map, shape, mask=None):
    r = np.broadcast_to(rows_map[:, :, None], local.shape)
    c = np.broadcast_to(cols_map[:, None, :], local.shape)
    if mask is not None:
        local = local * mask[:, None, None]
    return csr_from_coo(r, c, local, shape)


def stiffness(spaces: FESpaces, alpha=None) -> sp.csr_matrix:
    """P1 stiffness with elementwise coefficient ``alpha`` (default 1)."""
    a = np.ones(spaces.n_p0) if alpha is None else np.broadcast_to(alpha, (spaces.n_p0,))
    loc = np.einsum("tid,tjd->tij", spaces.grads, spaces.grads) * (spaces.areas * a)[:, None, None]
    t = spaces.mesh.triangles
    return _assemble(spaces, loc, t, t, (spaces.n_p1, spaces.n_p1))


def stiffness_by_region(spaces: FESpaces):
    return tuple(stiffness(spaces, spaces.region_mask(q).astype(float)) for q in REGIONS)


def rt0_mass(spaces: FESpaces, alpha_inv=None) -> sp.csr_matrix:
    a = np.ones(spaces.n_p0) if alpha_inv is None else np.broadcast_to(alpha_inv, (spaces.n_p0,))
    loc = local_rt0_mass(spaces.points, 1.0, spaces.signs) * a[:, None, None]
    return _assemble(spaces, loc, spaces.t2e, spaces.t2e, (spaces.n_rt0, spaces.n_rt0))


def rt0_mass_by_region(spaces: FESpaces):
    return tuple(rt0_mass(spaces, spaces.region_mask(q).astype(float)) for q in REGIONS)


def div_matrix(spaces: FESpaces) -> sp.csr_matrix:
    """(nt, ne) matrix of integrated divergences, entry s_k |E_k|."""
    nt = spaces.n_p0
    vals = spaces.signs * spaces.edge_len[spaces.t2e]
    rows = np.repeat(np.arange(nt), 3)
    return csr_from_coo(rows, spaces.t2e.ravel(), vals.ravel(), (nt, spaces.n_rt0))


def divergence_of(spaces: FESpaces, flux) -> np.ndarray:
    flux = np.asarray(flux, dtype=float)
    vals = spaces.signs * spaces.edge_len[spaces.t2e] * flux[spaces.t2e]
    return vals.sum(axis=1) / spaces.areas


def divergence(spaces: FESpaces, field: DualField) -> np.ndarray:
    """Elementwise divergence recomputed from the flux coefficients."""
    check_stamp(spaces, field)
    return divergence_of(spaces, field.flux)


def _coupling_local(spaces: FESpaces) -> np.ndarray:
    P = spaces.points
    c = P.mean(axis=1)
    lvec = (c[:, None, :] - P) * (spaces.signs * spaces.edge_len[spaces.t2e] / 2.0)[..., None]
    return np.einsum("tad,tkd->tak", spaces.grads, lvec)


def coupling_matrix(spaces: FESpaces, mask=None) -> sp.csr_matrix:
    """(nv, ne) matrix with entries (grad l_a, phi_e)."""
    loc = _coupling_local(spaces)
    return _assemble(spaces, loc, spaces.mesh.triangles, spaces.t2e,
                     (spaces.n_p1, spaces.n_rt0), mask)


def p1_load(spaces: FESpaces, f_h) -> np.ndarray:
    """(f_h, l_a) for piecewise constant f_h."""
    w = np.asarray(f_h, dtype=float) * spaces.areas / 3.0
    return np.bincount(spaces.mesh.triangles.ravel(), np.repeat(w, 3), minlength=spaces.n_p1)


def p0_project(spaces_or_mesh, f, degree: int = 7) -> np.ndarray:
    """Element averages of the analytic function ``f(x, y)``."""
    mesh = spaces_or_mesh.mesh if isinstance(spaces_or_mesh, FESpaces) else spaces_or_mesh
    if np.isscalar(f):
        return np.full(mesh.n_triangles, float(f))
    bary, w = quadrature(degree)
    P = mesh.vertices[mesh.triangles]
    x = np.einsum("qk,tkd->tqd", bary, P)
    vals = np.asarray(f(x[..., 0], x[..., 1]), dtype=float)
    vals = np.broadcast_to(vals, x.shape[:2])
    return vals @ w


def p1_interpolate(spaces: FESpaces, g) -> np.ndarray:
    v = spaces.mesh.vertices
    if np.isscalar(g):
        return np.full(len(v), float(g))
    return np.broadcast_to(np.asarray(g(v[:, 0], v[:, 1]), dtype=float), (len(v),)).copy()


def boundary_edge_vertices(spaces: FESpaces, marker: int):
    ids = spaces.boundary_edge_ids[spaces.boundary_markers == marker]
    return ids, spaces.edges[ids]


def dirichlet_functional(spaces: FESpaces, g_vertex) -> np.ndarray:
    """Vector l with l . tau = integral over the Dirichlet edges of (tau . n) g."""
    out = np.zeros(spaces.n_rt0)
    sel = spaces.boundary_markers == DIRICHLET
    ids = spaces.boundary_edge_ids[sel]
    ev = spaces.edges[ids]
    g = np.asarray(g_vertex, dtype=float)
    out[ids] = spaces.boundary_sign[sel] * spaces.edge_len[ids] * 0.5 * (g[ev[:, 0]] + g[ev[:, 1]])
    return out


def neumann_load(spaces: FESpaces, g_edge) -> np.ndarray:
    """P1 vector of (g_N, l_a) over the Neumann edges; ``g_edge`` per Neumann edge."""
    ids, ev = boundary_edge_vertices(spaces, NEUMANN)
    w = np.asarray(g_edge, dtype=float) * spaces.edge_len[ids] * 0.5
    return np.bincount(ev.ravel(), np.repeat(w, 2), minlength=spaces.n_p1)


def neumann_edge_values(spaces: FESpaces, g) -> np.ndarray:
    """Edge-mean of ``g`` on every Neumann edge (Gauss rule, 4 points)."""
    ids, ev = boundary_edge_vertices(spaces, NEUMANN)
    if np.isscalar(g):
        return np.full(len(ids), float(g))
    v = spaces.mesh.vertices
    x, w = np.polynomial.legendre.leggauss(4)
    s = 0.5 * (x + 1.0)
    pts = v[ev[:, 0]][:, None, :] * (1 - s)[None, :, None] + v[ev[:, 1]][:, None, :] * s[None, :, None]
    vals = np.asarray(g(pts[..., 0], pts[..., 1]), dtype=float)
    return np.broadcast_to(vals, pts.shape[:2]) @ (0.5 * w)


# --- evaluation and Gramians ----------------------------------------------


def p1_gradients(spaces: FESpaces, u) -> np.ndarray:
    """Elementwise constant gradient of a P1 field, (nt, 2)."""
    u = np.asarray(u, dtype=float)
    return np.einsum("tk,tkd->td", u[spaces.mesh.triangles], spaces.grads)


def flux_at(spaces: FESpaces, flux, bary) -> np.ndarray:
    """RT0 field at barycentric points ``bary`` (q, 3) on every triangle, (nt, q, 2)."""
    P = spaces.points
    x = np.einsum("qk,tkd->tqd", np.asarray(bary, dtype=float), P)
    coef = np.asarray(flux, dtype=float)[spaces.t2e] * spaces.signs \
        * spaces.edge_len[spaces.t2e] / (2.0 * spaces.areas[:, None])
    return np.einsum("tk,tqkd->tqd", coef, x[:, :, None, :] - P[:, None, :, :])


def flux_cell_average(spaces: FESpaces, flux) -> np.ndarray:
    return flux_at(spaces, flux, np.full((1, 3), 1.0 / 3.0))[:, 0, :]


def _matrix(fields, n):
    if isinstance(fields, np.ndarray):
        return fields.reshape(n, -1) if fields.ndim == 1 else fields
    cols = [f.values if isinstance(f, PrimalField) else f.flux for f in fields]
    return np.stack(cols, axis=1) if cols else np.zeros((n, 0))


@dataclass(frozen=True)
class Gramians:
    ggrad: np.ndarray  # (Q, nu, nu)
    gflux: np.ndarray  # (Q, ns, ns)
    gcross: np.ndarray  # (nu, ns)


def regionwise_gramians(spaces: FESpaces, U, S, operators=None) -> Gramians:
    """Region gradient and flux Gramians and the whole-domain cross Gramian.

    ``U`` and ``S`` are sequences of fields or coefficient matrices with
    one column per field.  ``operators`` may pass precomputed
    ``(K_by_region, M_by_region, C)`` to avoid reassembly.
    """
    for f in list(U if not isinstance(U, np.ndarray) else []) + list(S if not isinstance(S, np.ndarray) else []):
        check_stamp(spaces, f)
    Um = _matrix(U, spaces.n_p1)
    Sm = _matrix(S, spaces.n_rt0)
    if operators is None:
        operators = (stiffness_by_region(spaces), rt0_mass_by_region(spaces), coupling_matrix(spaces))
    K, M, C = operators
    gg = np.stack([Um.T @ (k @ Um) for k in K])
    gf = np.stack([Sm.T @ (m @ Sm) for m in M])
    gg = 0.5 * (gg + gg.transpose(0, 2, 1))
    gf = 0.5 * (gf + gf.transpose(0, 2, 1))
    return Gramians(gg, gf, Um.T @ (C @ Sm))
