"""Conforming triangulations, newest-vertex bisection and Dörfler marking.

Conventions
-----------
* ``triangles[t]`` lists three vertex indices counter-clockwise.
* Local edge ``k`` of a triangle is the edge opposite local vertex ``k``.
* ``ref_edge[t]`` is the local index of the refinement edge; the vertex
  opposite it is the newest vertex of the triangle.
* Region tags: 1 where ``x*y > 0``, 2 where ``x*y <= 0`` (evaluated at the
  barycenter).  Children inherit the tag of their parent.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DIRICHLET = 1
NEUMANN = 2

_uid = itertools.count()


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def region_of(points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    return np.where(points[:, 0] * points[:, 1] > 0, 1, 2).astype(np.int64)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangulation snapshot.

    ``parent`` maps each triangle to its parent in the mesh this one was
    refined from (``None`` for an initial mesh).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    ref_edge: np.ndarray
    boundary_edges: np.ndarray
    boundary_markers: np.ndarray
    region: np.ndarray
    generation: int = 0
    parent: np.ndarray | None = None
    uid: int = field(default_factory=lambda: next(_uid))

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "vertices", _frozen(self.vertices, float).reshape(-1, 2))
        set_(self, "triangles", _frozen(self.triangles, np.int64).reshape(-1, 3))
        set_(self, "ref_edge", _frozen(self.ref_edge, np.int64))
        set_(self, "boundary_edges", _frozen(self.boundary_edges, np.int64).reshape(-1, 2))
        set_(self, "boundary_markers", _frozen(self.boundary_markers, np.int64))
        set_(self, "region", _frozen(self.region, np.int64))
        if self.parent is not None:
            set_(self, "parent", _frozen(self.parent, np.int64))
        nt = len(self.triangles)
        if len(self.ref_edge) != nt or len(self.region) != nt:
            raise ValueError("per-triangle arrays must have length %d" % nt)
        if len(self.boundary_markers) != len(self.boundary_edges):
            raise ValueError("one marker per boundary edge required")
        if nt and np.any(self.signed_areas() <= 0):
            raise ValueError("triangles must be counter-clockwise with positive area")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas())

    def barycenters(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def local_edges(self) -> np.ndarray:
        """(nt, 3, 2) vertex pairs; local edge k runs from vertex k+1 to k+2."""
        t = self.triangles
        return np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1)

    def edge_topology(self):
        """Unique edges sorted low-to-high, and the (nt, 3) triangle-to-edge map."""
        le = self.local_edges().reshape(-1, 2)
        lo = le.min(axis=1)
        hi = le.max(axis=1)
        key = lo * self.n_vertices + hi
        ukey, inv = np.unique(key, return_inverse=True)
        edges = np.stack([ukey // self.n_vertices, ukey % self.n_vertices], axis=1)
        return edges, inv.reshape(-1, 3)

    def min_angle(self) -> float:
        p = self.vertices[self.triangles]
        angles = []
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            cosv = np.einsum("ij,ij->i", a, b) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.arccos(np.clip(cosv, -1.0, 1.0)))
        return float(np.min(angles))


def _boundary_from_topology(mesh_like_tris, nv, marker=DIRICHLET):
    t = np.asarray(mesh_like_tris)
    le = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1).reshape(-1, 2)
    key = le.min(axis=1) * nv + le.max(axis=1)
    _, idx, counts = np.unique(key, return_index=True, return_counts=True)
    bnd = le[np.sort(idx[counts == 1])]
    return bnd, np.full(len(bnd), marker, dtype=np.int64)


def make_lshape_initial() -> Mesh:
    """Six right triangles covering (-1,1)^2 minus (-1,0]^2.

    Every square is cut by its diagonal through the re-entrant corner and
    that diagonal is the refinement edge of both halves.
    """
    vertices = np.array([
        [0.0, 0.0],    # 0 re-entrant corner
        [1.0, 0.0],    # 1
        [1.0, 1.0],    # 2
        [0.0, 1.0],    # 3
        [-1.0, 1.0],   # 4
        [-1.0, 0.0],   # 5
        [0.0, -1.0],   # 6
        [1.0, -1.0],   # 7
    ])
    # newest vertex first: the diagonal is local edge 0 of every triangle
    triangles = np.array([
        [1, 2, 0], [3, 0, 2],      # upper right, diagonal 0-2
        [3, 4, 0], [5, 0, 4],      # upper left, diagonal 0-4
        [6, 7, 0], [1, 0, 7],      # lower right, diagonal 0-7
    ])
    ref = np.zeros(6, dtype=np.int64)
    bnd, markers = _boundary_from_topology(triangles, len(vertices))
    region = region_of(vertices[triangles].mean(axis=1))
    return Mesh(vertices, triangles, ref, bnd, markers, region)


def make_unit_square(n: int, marker: int = DIRICHLET) -> Mesh:
    """Uniform ``n x n`` triangulation of the unit square.

    Each cell is cut by its ``(i,j)-(i+1,j+1)`` diagonal, which is the
    refinement edge of both halves.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    i = i.ravel()
    j = j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.stack([v10, v11, v00], axis=1)   # diagonal v11-v00 opposite v10
    upper = np.stack([v01, v00, v11], axis=1)   # diagonal v00-v11 opposite v01
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    ref = np.zeros(len(triangles), dtype=np.int64)
    bnd, markers = _boundary_from_topology(triangles, len(vertices), marker)
    region = region_of(vertices[triangles].mean(axis=1))
    return Mesh(vertices, triangles, ref, bnd, markers, region)


def with_boundary_markers(mesh: Mesh, marker_fn) -> Mesh:
    """Copy of ``mesh`` with markers set by ``marker_fn(midpoints) -> markers``."""
    mids = mesh.vertices[mesh.boundary_edges].mean(axis=1)
    markers = np.asarray(marker_fn(mids), dtype=np.int64)
    return Mesh(mesh.vertices, mesh.triangles, mesh.ref_edge, mesh.boundary_edges,
                markers, mesh.region, mesh.generation, mesh.parent)


def _bisect(tris, ref, mid):
    """Bisect each triangle at the midpoint ``mid`` of its refinement edge.

    Returns the two children (apex, a, m) and (apex, m, b) with their new
    refinement-edge indices, where apex is the newest vertex.
    """
    r = np.arange(len(tris))
    apex = tris[r, ref]
    a = tris[r, (ref + 1) % 3]
    b = tris[r, (ref + 2) % 3]
    c1 = np.stack([apex, a, mid], axis=1)
    c2 = np.stack([apex, mid, b], axis=1)
    return c1, np.full(len(r), 2), c2, np.full(len(r), 1)


def refine_nvb(mesh: Mesh, marked) -> Mesh:
    """Newest-vertex bisection of the marked triangles plus closure.

    Every marked triangle is bisected at least once; additional bisections
    are added until the mesh is conforming.  Children of triangle ``t`` are
    stored consecutively and ``parent`` records ``t`` for each of them.
    """
    marked = np.unique(np.asarray(marked, dtype=np.int64))
    if marked.size == 0:
        return mesh
    nt = mesh.n_triangles
    if marked.min() < 0 or marked.max() >= nt:
        raise IndexError("marked element index out of range")
    edges, t2e = mesh.edge_topology()
    rows = np.arange(nt)
    ref_e = t2e[rows, mesh.ref_edge]
    emark = np.zeros(len(edges), dtype=bool)
    emark[ref_e[marked]] = True
    # closure: a triangle with any marked edge must split its refinement edge
    while True:
        touched = emark[t2e].any(axis=1)
        need = touched & ~emark[ref_e]
        if not need.any():
            break
        emark[ref_e[need]] = True

    new_ids = np.full(len(edges), -1, dtype=np.int64)
    idx = np.flatnonzero(emark)
    new_ids[idx] = mesh.n_vertices + np.arange(len(idx))
    mids = mesh.vertices[edges[idx]].mean(axis=1)
    vertices = np.vstack([mesh.vertices, mids])

    split = emark[ref_e]
    keep_t = np.flatnonzero(~split)
    sp_t = np.flatnonzero(split)
    tri = mesh.triangles
    c1, r1, c2, r2 = _bisect(tri[sp_t], mesh.ref_edge[sp_t], new_ids[ref_e[sp_t]])
    # child 1 refines along parent local edge ref+2, child 2 along ref+1
    pref = mesh.ref_edge[sp_t]
    m1 = new_ids[t2e[sp_t, (pref + 2) % 3]]
    m2 = new_ids[t2e[sp_t, (pref + 1) % 3]]

    out_tris = [tri[keep_t]]
    out_ref = [mesh.ref_edge[keep_t]]
    out_par = [keep_t]
    out_order = [keep_t * 4]
    for child, cref, m, slot in ((c1, r1, m1, 0), (c2, r2, m2, 2)):
        again = m >= 0
        g1, gr1, g2, gr2 = _bisect(child[again], cref[again], m[again])
        once = ~again
        out_tris += [child[once], g1, g2]
        out_ref += [cref[once], gr1, gr2]
        out_par += [sp_t[once], sp_t[again], sp_t[again]]
        out_order += [sp_t[once] * 4 + slot, sp_t[again] * 4 + slot,
                      sp_t[again] * 4 + slot + 1]
    tris = np.vstack(out_tris)
    refs = np.concatenate(out_ref)
    parent = np.concatenate(out_par)
    order = np.argsort(np.concatenate(out_order), kind="stable")
    tris, refs, parent = tris[order], refs[order], parent[order]

    # split marked boundary edges
    be = mesh.boundary_edges
    bkey = be.min(axis=1) * mesh.n_vertices + be.max(axis=1)
    ekey = edges[:, 0] * mesh.n_vertices + edges[:, 1]
    beid = np.searchsorted(ekey, bkey)
    bm = new_ids[beid]
    split_b = bm >= 0
    bnd = []
    mk = []
    for i in range(len(be)):
        if split_b[i]:
            bnd += [(be[i, 0], bm[i]), (bm[i], be[i, 1])]
            mk += [mesh.boundary_markers[i]] * 2
        else:
            bnd.append(tuple(be[i]))
            mk.append(mesh.boundary_markers[i])
    return Mesh(vertices, tris, refs, np.array(bnd, dtype=np.int64).reshape(-1, 2),
                np.array(mk, dtype=np.int64), mesh.region[parent],
                mesh.generation + 1, parent)


def uniform_refine(mesh: Mesh, rounds: int = 1) -> Mesh:
    """``rounds`` sweeps of bisecting every triangle (two sweeps = one red step)."""
    for _ in range(rounds):
        mesh = refine_nvb(mesh, np.arange(mesh.n_triangles))
    return mesh


def dorfler_mark(indicators, theta: float = 0.5) -> np.ndarray:
    """Smallest set with ``sum_marked eta^2 >= theta^2 * sum_all eta^2``.

    Elements are taken by descending indicator, ties by lower index.
    """
    eta = np.asarray(indicators, dtype=float)
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    if eta.size == 0 or not np.any(eta > 0):
        raise ValueError("at least one positive indicator is required")
    if np.any(eta < 0):
        raise ValueError("indicators must be non-negative")
    order = np.lexsort((np.arange(eta.size), -eta))
    cum = np.cumsum(eta[order] ** 2)
    k = int(np.searchsorted(cum, theta ** 2 * cum[-1], side="left")) + 1
    return np.sort(order[:min(k, eta.size)])


def check_conforming(mesh: Mesh) -> bool:
    """Every edge is shared by at most two triangles, boundary edges by one,
    and no vertex lies in the interior of another triangle's edge."""
    edges, t2e = mesh.edge_topology()
    counts = np.bincount(t2e.ravel(), minlength=len(edges))
    if np.any(counts > 2):
        return False
    bkey = set(map(tuple, np.sort(mesh.boundary_edges, axis=1)))
    single = {tuple(e) for e in edges[counts == 1]}
    if single != bkey:
        return False
    # hanging node check: a vertex at the midpoint of an edge it is not an endpoint of
    mids = mesh.vertices[edges].mean(axis=1)
    vkey = {tuple(np.round(v, 12)) for v in mesh.vertices}
    return not any(tuple(np.round(m, 12)) in vkey for m in mids)


# --- ASCII mesh format -----------------------------------------------------


def write_mesh(mesh: Mesh, path) -> None:
    """Header ``nv nt nbe``; vertices; ``v0 v1 v2 region ref_edge``; ``v0 v1 marker``."""
    lines = ["%d %d %d" % (mesh.n_vertices, mesh.n_triangles, len(mesh.boundary_edges))]
    lines += ["%r %r" % (float(x), float(y)) for x, y in mesh.vertices]
    lines += ["%d %d %d %d %d" % (t[0], t[1], t[2], r, e)
              for t, r, e in zip(mesh.triangles, mesh.region, mesh.ref_edge)]
    lines += ["%d %d %d" % (b[0], b[1], m)
              for b, m in zip(mesh.boundary_edges, mesh.boundary_markers)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    tokens = Path(path).read_text().split("\n")
    rows = [ln.split() for ln in tokens if ln.strip()]
    try:
        nv, nt, nbe = (int(x) for x in rows[0])
        v = np.array([[float(a), float(b)] for a, b in rows[1:1 + nv]])
        t = np.array([[int(x) for x in r] for r in rows[1 + nv:1 + nv + nt]],
                     dtype=np.int64).reshape(-1, 5)
        b = np.array([[int(x) for x in r] for r in rows[1 + nv + nt:1 + nv + nt + nbe]],
                     dtype=np.int64).reshape(-1, 3)
    except (ValueError, IndexError) as exc:
        raise ValueError("malformed mesh file %s: %s" % (path, exc)) from exc
    if len(v) != nv or len(t) != nt or len(b) != nbe:
        raise ValueError("mesh file %s is truncated" % path)
    return Mesh(v, t[:, :3], t[:, 4], b[:, :2], b[:, 2], t[:, 3])


def dof_counts(mesh: Mesh) -> tuple:
    """(P1 DOFs, RT0 + P0 DOFs) of the spaces on ``mesh``."""
    edges, _ = mesh.edge_topology()
    return mesh.n_vertices, len(edges) + mesh.n_triangles


def is_refinement(coarse: Mesh, fine: Mesh, ancestry) -> bool:
    """True when ``fine`` is nested in ``coarse``.

    ``ancestry`` maps every fine triangle to the coarse triangle it came
    from.  Coarse vertices must be kept with their indices, each fine
    triangle must lie inside its ancestor and the areas must add up.
    """
    ancestry = np.asarray(ancestry)
    if len(ancestry) != fine.n_triangles or fine.n_vertices < coarse.n_vertices:
        return False
    if not np.array_equal(fine.vertices[:coarse.n_vertices], coarse.vertices):
        return False
    P = coarse.vertices[coarse.triangles[ancestry]]
    T = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)
    X = fine.vertices[fine.triangles] - P[:, :1, :]
    lam = np.linalg.solve(T[:, None], X[..., None])[..., 0]
    inside = (lam >= -1e-12).all(axis=2) & (lam.sum(axis=2) <= 1 + 1e-12)
    if not inside.all():
        return False
    a = np.bincount(ancestry, fine.areas(), minlength=coarse.n_triangles)
    return bool(np.allclose(a, coarse.areas(), rtol=1e-12, atol=0))
