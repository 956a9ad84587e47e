"""Reduced basis model with exact primal-dual gap certification.

The primal space is spanned by homogeneous snapshots ``u_0(mu_i)`` and
the dual space by divergence free snapshots ``sigma_00(mu_i)``.  No
orthonormalization is applied; the condition number of the reduced
systems is reported instead.

Everything the online stage needs is a set of Gramians over the
extended families ``[u_0(mu_1..N), u_D^q]`` and
``[sigma_00(mu_1..N), sigma_f0^q, sigma_0g^q]``:

    eta^2 = sum_q theta_a^q xu' Ggrad^q xu + theta_b^q xs' Gflux^q xs + 2 xu' Gcross xs

with ``xu = [c; w_u]`` and ``xs = [d; w_s]``.  The cross term carries no
parameter since ``alpha^{1/2} alpha^{-1/2} = 1``.

A flux snapshot taken at the lifting's own reference parameter is the
zero field.  Such snapshots stay in the model but are left out of the
dual basis (``dual_active``); the spanned space is unchanged.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels, fe
from .dual import feasibility_defect
from .mesh import Mesh
from .problem import Discretization, as_mu, thetas

FORMAT_VERSION = 1
MAGIC = "pdrb-model"
COND_LIMIT = 1e13
ZERO_SNAPSHOT = 1e-10


class ModelFormatError(ValueError):
    pass


class SingularReducedSystem(np.linalg.LinAlgError):
    pass


def mesh_fingerprint(mesh: Mesh) -> str:
    h = hashlib.sha1()
    h.update(np.ascontiguousarray(mesh.vertices).tobytes())
    h.update(np.ascontiguousarray(mesh.triangles).tobytes())
    return h.hexdigest()


@dataclass(frozen=True, eq=False)
class RBModel:
    mus: np.ndarray          # (N, 2)
    ggrad: np.ndarray        # (Q, N + nD, N + nD)
    gflux: np.ndarray        # (Q, N + nF, N + nF)
    gcross: np.ndarray       # (N + nD, N + nF)
    w_u: np.ndarray          # (nD,)
    w_s: np.ndarray          # (nF,)
    load: np.ndarray         # (N,)  (f_h, u_i) - (g_N, u_i)_N
    dual_bc: np.ndarray      # (N,)  (sigma_i . n, g_D)_D
    dual_active: np.ndarray | None = None  # (N,) bool
    fingerprint: str = ""
    snap_u: np.ndarray | None = None   # (nv, N) homogeneous primal snapshots
    snap_s: np.ndarray | None = None   # (ne, N) divergence free flux snapshots
    lift_u: np.ndarray | None = None   # (nv, nD)
    lift_s: np.ndarray | None = None   # (ne, nF)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dual_active is None:
            object.__setattr__(self, "dual_active", np.ones(len(self.mus), dtype=bool))

    @property
    def N(self) -> int:
        return len(self.mus)

    @property
    def Nd(self) -> int:
        return int(np.count_nonzero(self.dual_active))

    def _dual_index(self):
        return np.r_[np.flatnonzero(self.dual_active), np.arange(self.N, self.gflux.shape[1])]

    def A_rb(self, q: int) -> np.ndarray:
        return self.ggrad[q, :self.N, :self.N]

    def B_rb(self, q: int) -> np.ndarray:
        return self.gflux[q, :self.N, :self.N]

    def kernel_data(self):
        """Arrays in the layout of :mod:`pdrb._kernels`, dual basis restricted to active snapshots."""
        cached = self.__dict__.get("_kd")
        if cached is None:
            idx = self._dual_index()
            cached = (self.ggrad, self.gflux[:, idx][:, :, idx], self.gcross[:, idx],
                      self.w_u, self.w_s, self.load, self.dual_bc[self.dual_active])
            cached = tuple(np.ascontiguousarray(a, dtype=float) for a in cached)
            object.__setattr__(self, "_kd", cached)
        return cached

    def truncate(self, n: int) -> "RBModel":
        """Model using only the first ``n`` snapshots."""
        N = self.N
        if not 1 <= n <= N:
            raise ValueError("n must be in 1..%d" % N)
        iu = np.r_[np.arange(n), np.arange(N, self.ggrad.shape[1])]
        is_ = np.r_[np.arange(n), np.arange(N, self.gflux.shape[1])]
        return replace(
            self, mus=self.mus[:n],
            ggrad=self.ggrad[:, iu][:, :, iu], gflux=self.gflux[:, is_][:, :, is_],
            gcross=self.gcross[iu][:, is_], load=self.load[:n], dual_bc=self.dual_bc[:n],
            dual_active=self.dual_active[:n],
            snap_u=None if self.snap_u is None else self.snap_u[:, :n],
            snap_s=None if self.snap_s is None else self.snap_s[:, :n])

    def stripped(self) -> "RBModel":
        """Copy without any mesh-sized array."""
        return replace(self, snap_u=None, snap_s=None, lift_u=None, lift_s=None)


@dataclass(frozen=True)
class OnlineSolution:
    c: np.ndarray
    d: np.ndarray
    mu: np.ndarray
    eta_rb: float


def build_offline(disc: Discretization, snapshots) -> RBModel:
    """Compress full snapshots ``[(mu, u_h, sigma_h), ...]`` into an RBModel."""
    sp_ = disc.spaces
    if not snapshots:
        raise ValueError("need at least one snapshot")
    ug = disc.primal_lifting()
    sfg = disc.dual_lifting()
    mus = np.array([as_mu(m) for m, _, _ in snapshots])
    U = np.empty((sp_.n_p1, len(snapshots)))
    S = np.empty((sp_.n_rt0, len(snapshots)))
    for i, (_, u, s) in enumerate(snapshots):
        fe.check_stamp(sp_, u, s)
        U[:, i] = u.values - ug.values
        S[:, i] = s.flux - sfg.flux
        d00 = fe.DualField.from_flux(sp_, S[:, i])
        defect = feasibility_defect(disc, d00, f_h=np.zeros(sp_.n_p0), roundoff=True)
        if defect > 1e-9:
            raise ValueError("dual snapshot %d is not feasible (defect %.2e)" % (i, defect))
    lu = [l.values for l in disc.primal_liftings()]
    ls = [l.flux for l in disc.dual_liftings()]
    LU = np.stack(lu, axis=1) if lu else np.zeros((sp_.n_p1, 0))
    LS = np.stack(ls, axis=1) if ls else np.zeros((sp_.n_rt0, 0))
    g = fe.regionwise_gramians(sp_, np.hstack([U, LU]), np.hstack([S, LS]), disc.operators())
    N = len(snapshots)
    snorm = np.sqrt(np.diagonal(g.gflux.sum(axis=0))[:N])
    scale = max(np.sqrt(max(np.trace(g.gflux.sum(axis=0)[N:, N:]), 0.0)), snorm.max(initial=0.0))
    active = snorm > ZERO_SNAPSHOT * scale if scale > 0 else np.zeros(N, dtype=bool)
    return RBModel(
        mus=mus, ggrad=g.ggrad, gflux=g.gflux, gcross=g.gcross,
        w_u=np.ones(LU.shape[1]), w_s=np.ones(LS.shape[1]),
        load=U.T @ disc.load, dual_bc=S.T @ disc.dirichlet_functional,
        dual_active=active, fingerprint=mesh_fingerprint(disc.mesh),
        snap_u=U, snap_s=S, lift_u=LU, lift_s=LS,
        meta={"n_triangles": int(sp_.n_p0), "ndof_p": int(sp_.ndof_primal),
              "ndof_d": int(sp_.ndof_dual)})


def reduced_systems(model: RBModel, mu):
    """(A(mu), rhs_u, B(mu), rhs_s): N x N primal and Nd x Nd dual problems."""
    t = thetas(mu)
    gg, gf, _, w_u, w_s, load, dual_bc = model.kernel_data()
    n, nd = model.N, model.Nd
    A = np.tensordot(t.theta_a, gg, axes=1)
    B = np.tensordot(t.theta_b, gf, axes=1)
    rhs_u = load - A[:n, n:] @ w_u
    rhs_s = -dual_bc - B[:nd, nd:] @ w_s
    return A[:n, :n], rhs_u, B[:nd, :nd], rhs_s


def online_solve(model: RBModel, mu) -> OnlineSolution:
    m = as_mu(mu)
    if model.N < 1:
        raise ValueError("empty model")
    A, _, B, _ = reduced_systems(model, m)
    for name, mat in (("primal", A), ("dual", B)):
        if mat.size == 0:
            continue
        cond = np.linalg.cond(mat)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise SingularReducedSystem("%s reduced matrix is singular (cond %.2e)" % (name, cond))
    c, d_act, e2 = _kernels._point_np(m, *model.kernel_data(), model.N, model.Nd)
    d = np.zeros(model.N)
    d[model.dual_active] = d_act
    return OnlineSolution(c, d, m, float(np.sqrt(max(e2, 0.0))))


def condition_numbers(model: RBModel, mu) -> tuple:
    A, _, B, _ = reduced_systems(model, mu)
    return float(np.linalg.cond(A)), float(np.linalg.cond(B)) if B.size else 1.0


def online_cost(model: RBModel) -> dict:
    """Multiply-add counts of one online evaluation; depend on N and Q only."""
    gg, gf = model.kernel_data()[:2]
    q, nu, _ = gg.shape
    ns = gf.shape[1]
    n, nd = model.N, model.Nd
    return {"assemble": q * (nu * nu + ns * ns),
            "solve": n ** 3 // 3 + n * n + nd ** 3 // 3 + nd * nd,
            "estimate": nu * nu + ns * ns + nu * ns}


def evaluate(model: RBModel, mus, backend=None) -> np.ndarray:
    """eta_rb for many parameters at once."""
    return _kernels.batch(mus, model.kernel_data(), model.N, model.Nd, backend=backend)


def reconstruct(model: RBModel, sol: OnlineSolution, disc: Discretization):
    """Full fields ``u_rb`` and ``sigma_rb`` on the model's mesh."""
    if model.snap_u is None or model.lift_u is None:
        raise ValueError("model was stripped of its snapshot arrays")
    if model.fingerprint and model.fingerprint != mesh_fingerprint(disc.mesh):
        raise fe.StaleFieldError("model was built on a different mesh")
    u = model.snap_u @ sol.c + model.lift_u @ model.w_u
    s = model.snap_s @ sol.d + model.lift_s @ model.w_s
    return fe.PrimalField(u, disc.stamp), fe.DualField.from_flux(disc.spaces, s)


# --- model file ------------------------------------------------------------

_ARRAYS = ("mus", "ggrad", "gflux", "gcross", "w_u", "w_s", "load", "dual_bc",
           "dual_active", "snap_u", "snap_s", "lift_u", "lift_s")
_MESH = ("vertices", "triangles", "ref_edge", "boundary_edges", "boundary_markers", "region")


def serialize(model: RBModel, mesh: Mesh | None = None) -> bytes:
    """npz container with a JSON header; ``mesh`` is embedded when given."""
    arrays = {k: getattr(model, k) for k in _ARRAYS if getattr(model, k) is not None}
    if mesh is not None:
        for k in _MESH:
            arrays["mesh_" + k] = np.asarray(getattr(mesh, k))
    header = {"magic": MAGIC, "format_version": FORMAT_VERSION,
              "fingerprint": model.fingerprint, "meta": model.meta}
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    return buf.getvalue()


def deserialize(blob: bytes):
    """Inverse of :func:`serialize`; returns ``(model, mesh_or_None)``."""
    try:
        with np.load(io.BytesIO(blob), allow_pickle=False) as z:
            data = {k: z[k] for k in z.files}
    except (zipfile.BadZipFile, ValueError, OSError, EOFError, KeyError) as exc:
        raise ModelFormatError("cannot parse model stream: %s" % exc) from exc
    if "header" not in data:
        raise ModelFormatError("missing header")
    try:
        header = json.loads(data.pop("header").tobytes().decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError("corrupt header") from exc
    if header.get("magic") != MAGIC:
        raise ModelFormatError("not a model file")
    if header.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError("unsupported format version %r (expected %d)"
                               % (header.get("format_version"), FORMAT_VERSION))
    missing = [k for k in _ARRAYS[:9] if k not in data]
    if missing:
        raise ModelFormatError("missing arrays: %s" % ", ".join(missing))
    kw = {k: data.get(k) for k in _ARRAYS}
    model = RBModel(fingerprint=header.get("fingerprint", ""), meta=header.get("meta", {}), **kw)
    mesh = None
    if "mesh_vertices" in data:
        mesh = Mesh(**{k: data["mesh_" + k] for k in _MESH})
    return model, mesh


def save_model(path, model: RBModel, mesh: Mesh | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(model, mesh))


def load_model(path):
    with open(path, "rb") as fh:
        return deserialize(fh.read())
