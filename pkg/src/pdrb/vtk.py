"""Legacy ASCII VTK export (UNSTRUCTURED_GRID, VTK_TRIANGLE cells)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import fe

VTK_TRIANGLE = 5


def _fmt(a) -> str:
    return "\n".join(" ".join("%.17g" % v for v in row) for row in np.atleast_2d(a))


def write_vtk(path, spaces: fe.FESpaces, primal=None, dual=None, cell_scalars=None,
              title="pdrb fields") -> Path:
    """Write the mesh with optional fields.

    ``primal``: dict name -> PrimalField (point scalars).
    ``dual``: dict name -> DualField (cell vectors of the flux average plus
    the cell scalar ``<name>_div``).
    ``cell_scalars``: dict name -> per-element array, e.g. indicators.
    """
    primal = primal or {}
    dual = dual or {}
    cell_scalars = dict(cell_scalars or {})
    mesh = spaces.mesh
    fe.check_stamp(spaces, *primal.values(), *dual.values())
    nv, nt = mesh.n_vertices, mesh.n_triangles
    pts = np.column_stack([mesh.vertices, np.zeros(nv)])
    cells = np.column_stack([np.full(nt, 3), mesh.triangles])

    out = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
           "POINTS %d double" % nv, _fmt(pts),
           "CELLS %d %d" % (nt, 4 * nt), "\n".join(" ".join(map(str, c)) for c in cells),
           "CELL_TYPES %d" % nt, "\n".join([str(VTK_TRIANGLE)] * nt)]

    if primal:
        out.append("POINT_DATA %d" % nv)
        for name, f in primal.items():
            out += ["SCALARS %s double 1" % name, "LOOKUP_TABLE default",
                    "\n".join("%.17g" % v for v in f.values)]

    vectors = {}
    for name, f in dual.items():
        avg = fe.flux_cell_average(spaces, f.flux)
        vectors[name] = np.column_stack([avg, np.zeros(nt)])
        cell_scalars[name + "_div"] = f.div
    cell_scalars.update({"region": mesh.region})
    out.append("CELL_DATA %d" % nt)
    for name, v in vectors.items():
        out += ["VECTORS %s double" % name, _fmt(v)]
    for name, v in cell_scalars.items():
        v = np.asarray(v, dtype=float)
        if v.shape != (nt,):
            raise ValueError("cell field %r has shape %s, expected (%d,)" % (name, v.shape, nt))
        out += ["SCALARS %s double 1" % name, "LOOKUP_TABLE default",
                "\n".join("%.17g" % x for x in v)]

    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path


def read_vtk_arrays(path) -> dict:
    """Minimal reader for files written above; used by the tests."""
    toks = Path(path).read_text().split()
    out = {}
    i = 0
    n_pt = n_cell = 0
    section = None
    while i < len(toks):
        t = toks[i]
        if t == "POINTS":
            n_pt = int(toks[i + 1])
            out["points"] = np.array(toks[i + 3:i + 3 + 3 * n_pt], float).reshape(-1, 3)
            i += 3 + 3 * n_pt
        elif t == "CELLS":
            n = int(toks[i + 1])
            out["cells"] = np.array(toks[i + 3:i + 3 + 4 * n], int).reshape(-1, 4)[:, 1:]
            n_cell = n
            i += 3 + 4 * n
        elif t == "POINT_DATA":
            section = n_pt
            i += 2
        elif t == "CELL_DATA":
            section = n_cell
            i += 2
        elif t == "SCALARS":
            name = toks[i + 1]
            out[name] = np.array(toks[i + 6:i + 6 + section], float)
            i += 6 + section
        elif t == "VECTORS":
            name = toks[i + 1]
            out[name] = np.array(toks[i + 3:i + 3 + 3 * section], float).reshape(-1, 3)
            i += 3 + 3 * section
        else:
            i += 1
    return out
