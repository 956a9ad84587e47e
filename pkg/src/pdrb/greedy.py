"""Greedy construction of the reduced basis on fixed and adaptive meshes.

Three drivers share one loop shape (snapshot, compress, sweep the
training set, stop or continue):

* ``greedy_fixed``     one mesh, RB tolerance raised with each snapshot's estimator,
* ``greedy_adaptive``  each new snapshot refines the common mesh to a fixed FE
  tolerance and all earlier snapshots are recomputed on it,
* ``greedy_balanced``  like the adaptive driver but under a DOF budget; when
  the budget runs out the mesh is rebuilt from the initial one using the
  root-sum-square indicator over all selected parameters.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels, estimator, mesh as meshmod, rb
from .dual import solve_dual
from .primal import solve_primal
from .problem import BOX, Discretization, ProblemData, as_mu, lshape_problem

log = logging.getLogger(__name__)

ALGORITHMS = ("fixed", "adaptive_mesh", "balanced")
CSV_COLUMNS = ("n", "mu1", "mu2", "eps_h", "eps_rb", "maxerror", "ndof_p", "ndof_d",
               "skipped", "refined", "enough", "test_error")
GENERATOR = "PCG64"
DOF_MEASURES = {"max": max, "primal": lambda c: c[0], "dual": lambda c: c[1], "total": sum}


@dataclass
class GreedyConfig:
    algorithm: str = "fixed"
    train_size: int = 100_000
    train_seed: int = 0
    eps_h0: float = 0.08
    eps_rb0: float = 1e-3
    r_rbfe: float = 2.0
    n_max: int = 20
    dof_max: int | None = None
    dof_measure: str = "max"   # which count dof_max caps: max, primal, dual or total
    theta: float = 0.5
    mu_1: tuple = (0.0, 0.0)
    domain: str = "lshape"
    uniform_levels: int = 12   # bisection sweeps for the fixed mesh
    initial_levels: int = 6    # bisection sweeps for T_0 of the adaptive drivers
    saturation: bool = True
    max_afem_steps: int = 80
    validate_samples: int = 0
    validate_seed: int = 12345
    box: tuple = BOX
    backend: str | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError("algorithm must be one of %s" % (ALGORITHMS,))
        if not self.r_rbfe > 1:
            raise ValueError("r_rbfe must be > 1")
        if self.train_size < 1 or self.n_max < 1:
            raise ValueError("train_size and n_max must be positive")
        if self.eps_rb0 < 0 or self.eps_h0 <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")
        if self.dof_measure not in DOF_MEASURES:
            raise ValueError("dof_measure must be one of %s" % (tuple(DOF_MEASURES),))
        if self.algorithm == "balanced" and not self.dof_max:
            raise ValueError("the balanced driver needs dof_max")
        self.mu_1 = tuple(float(x) for x in as_mu(self.mu_1))
        self.box = (float(self.box[0]), float(self.box[1]))


@dataclass
class IterationRecord:
    n: int
    mu1: float
    mu2: float
    eps_h: float
    eps_rb: float
    maxerror: float
    ndof_p: int
    ndof_d: int
    skipped: int
    refined: int
    enough: int
    test_error: float = float("nan")
    eta_h: float = float("nan")  # estimator of the new snapshot


@dataclass
class GreedyHistory:
    rows: list = field(default_factory=list)
    reason: str = ""
    seed: int = 0
    generator: str = GENERATOR
    meshes: list = field(default_factory=list)      # mesh used at each iteration
    ancestry: list = field(default_factory=list)    # fine-to-previous triangle maps (None if rebuilt)
    timings: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                d = asdict(r)
                w.writerow([_fmt(d[c]) for c in CSV_COLUMNS])


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    return "%.6g" % v


@dataclass
class GreedyResult:
    model: rb.RBModel
    history: GreedyHistory
    mesh: meshmod.Mesh
    disc: Discretization
    snapshots: list   # [(mu, u_h, sigma_h)] on the final mesh


class SaturationCache:
    """Last known eta_rb per training point and the basis size it was computed with."""

    def __init__(self, n: int):
        self.values = np.full(n, np.inf)
        self.basis_size = np.zeros(n, dtype=np.int64)
        self.stamp = None  # mesh the values belong to

    def reset(self) -> None:
        self.values[:] = np.inf
        self.basis_size[:] = 0
        self.stamp = None


def make_training_set(n: int, seed: int, box=BOX) -> np.ndarray:
    """``n`` points uniform on box x box from a seeded PCG64 stream."""
    if n < 1:
        raise ValueError("training set needs at least one point")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(box[0], box[1], size=(int(n), 2))


@dataclass(frozen=True)
class ArgmaxResult:
    index: int
    mu: np.ndarray
    eta: float
    skipped: int
    corrected: bool = False  # verification found a larger value among skipped points


def argmax_train(model: rb.RBModel, train, cache: SaturationCache | None = None,
                 exact: bool = True, backend=None) -> ArgmaxResult:
    """Largest eta_rb over the training set, first occurrence on ties.

    With a cache, points whose cached value does not exceed the running
    maximum are skipped.  On a fixed mesh cached values are upper bounds
    and the skip is exact; with ``exact=False`` the skipped points are
    re-evaluated afterwards and the true maximum is returned.
    """
    train = np.ascontiguousarray(train, dtype=float)
    if len(train) == 0:
        raise ValueError("empty training set")
    data = model.kernel_data()
    if cache is None:
        tmp = np.full(len(train), np.inf)
        i, v, skipped, _ = _kernels.sweep(train, tmp, False, data, model.N, model.Nd, backend)
        return ArgmaxResult(i, train[i].copy(), v, skipped)
    i, v, skipped, ev = _kernels.sweep(train, cache.values, True, data, model.N, model.Nd, backend)
    cache.basis_size[ev] = model.N
    corrected = False
    if not exact and skipped:
        rest = np.flatnonzero(~ev)
        vals = _kernels.batch(train[rest], data, model.N, model.Nd, backend)
        cache.values[rest] = vals
        cache.basis_size[rest] = model.N
        # every cache entry is current now
        j = int(np.argmax(cache.values))
        corrected = j != i
        i, v = j, float(cache.values[j])
    return ArgmaxResult(i, train[i].copy(), v, skipped, corrected)


def update_tolerances(eps_h_prev, eps_rb_prev, new_eta_h_values, r_rbfe):
    if not r_rbfe > 1:
        raise ValueError("r_rbfe must be > 1")
    eps_h = max([float(eps_h_prev)] + [float(x) for x in new_eta_h_values])
    return eps_h, max(r_rbfe * eps_h, float(eps_rb_prev))


# --- adaptive FE solve ------------------------------------------------------


@dataclass
class AdaptiveResult:
    mesh: meshmod.Mesh
    disc: Discretization
    fields: list      # [(u_h, sigma_h)] per parameter
    etas: np.ndarray
    indicator: estimator.IndicatorField
    enough: bool
    refined: bool
    ancestry: np.ndarray  # output triangle -> input triangle
    steps: int

    @property
    def u(self):
        return self.fields[0][0]

    @property
    def sigma(self):
        return self.fields[0][1]

    @property
    def eta(self) -> float:
        return float(self.etas[0])


def solve_pair(disc: Discretization, mu):
    u = solve_primal(disc, mu)
    s = solve_dual(disc, mu)
    return u, s, estimator.local_gap(disc, u, s, mu)


def _budget(mesh, cap, measure="max"):
    return cap is None or DOF_MEASURES[measure](meshmod.dof_counts(mesh)) <= cap


def adaptive_fe_solve(mesh_in: meshmod.Mesh, mus, eps_h: float, dof_cap: int | None = None,
                      data: ProblemData | None = None, theta: float = 0.5,
                      max_steps: int = 80, disc: Discretization | None = None,
                      dof_measure: str = "max") -> AdaptiveResult:
    """Solve, estimate, mark, refine until every eta_h(mu) <= eps_h.

    ``mus`` is one parameter or a sequence of them; several parameters
    are driven by the root-sum-square indicator.  With ``dof_cap`` the
    loop stops before a refinement that would exceed the budget (the
    marked set is halved first) and reports ``enough=False``.
    """
    if not eps_h > 0:
        raise ValueError("eps_h must be positive")
    mus = np.atleast_2d(np.asarray(mus, dtype=float))
    data = data or lshape_problem()
    cur = mesh_in
    ancestry = np.arange(mesh_in.n_triangles)
    if disc is None or disc.mesh is not mesh_in:
        disc = Discretization(cur, data)
    steps = 0
    while True:
        res = [solve_pair(disc, mu) for mu in mus]
        inds = [r[2] for r in res]
        etas = np.array([i.total for i in inds])
        total = estimator.sum_indicator(inds)
        if np.all(etas <= eps_h):
            enough = True
            break
        if not _budget(cur, dof_cap, dof_measure) or steps >= max_steps:
            enough = False
            break
        marked = meshmod.dorfler_mark(total.local, theta)
        new = meshmod.refine_nvb(cur, marked)
        while not _budget(new, dof_cap, dof_measure) and len(marked) > 1:
            marked = marked[:len(marked) // 2]
            new = meshmod.refine_nvb(cur, marked)
        if not _budget(new, dof_cap, dof_measure):
            enough = False
            break
        ancestry = ancestry[new.parent]
        cur = new
        disc = Discretization(cur, data)
        steps += 1
    if steps >= max_steps and not enough:
        log.warning("adaptive loop stopped after %d steps (eta %s > %g)", steps, etas, eps_h)
    return AdaptiveResult(cur, disc, [(r[0], r[1]) for r in res], etas, total, enough,
                          steps > 0, ancestry, steps)


# --- drivers ------------------------------------------------------------------


def build_mesh(domain: str, levels: int) -> meshmod.Mesh:
    if domain == "lshape":
        m = meshmod.make_lshape_initial()
    elif domain == "unit_square":
        m = meshmod.make_unit_square(1)
    else:
        raise ValueError("unknown domain %r" % domain)
    return meshmod.uniform_refine(m, levels)


class _Run:
    """Shared bookkeeping of the three drivers."""

    def __init__(self, config: GreedyConfig, data):
        self.cfg = config
        self.data = data or lshape_problem()
        self.train = make_training_set(config.train_size, config.train_seed, config.box)
        self.cache = SaturationCache(len(self.train)) if config.saturation else None
        self.history = GreedyHistory(seed=config.train_seed)
        self.t0 = time.perf_counter()
        self.t_sweep = 0.0
        self.t_fe = 0.0

    def sweep(self, model, disc):
        t = time.perf_counter()
        exact = True
        if self.cache is not None:
            exact = self.cache.stamp == disc.stamp
            self.cache.stamp = disc.stamp
        am = argmax_train(model, self.train, self.cache, exact=exact, backend=self.cfg.backend)
        self.t_sweep += time.perf_counter() - t
        return am

    def record(self, n, mu, eps_h, eps_rb, am, disc, refined, enough, eta, ancestry):
        nd = disc.spaces
        row = IterationRecord(n, float(mu[0]), float(mu[1]), eps_h, eps_rb, am.eta,
                              nd.ndof_primal, nd.ndof_dual, am.skipped, int(refined),
                              int(enough), eta_h=float(eta))
        self.history.rows.append(row)
        self.history.meshes.append(disc.mesh)
        self.history.ancestry.append(ancestry)
        log.info("n=%d mu=(%.4f, %.4f) eps_h=%.4g eps_rb=%.4g maxerror=%.4g dofs=%d/%d "
                 "skipped=%d refined=%d enough=%d", n, mu[0], mu[1], eps_h, eps_rb, am.eta,
                 row.ndof_p, row.ndof_d, am.skipped, refined, enough)

    def finish(self, model, disc, snaps, reason):
        h = self.history
        h.reason = reason
        if self.cfg.validate_samples:
            mx, _, _ = validate_random(model, self.cfg.validate_samples, self.cfg.validate_seed,
                                       self.cfg.box, self.cfg.backend)
            h.rows[-1].test_error = mx
        h.timings = {"total": time.perf_counter() - self.t0, "sweep": self.t_sweep,
                     "fe": self.t_fe}
        return GreedyResult(model, h, disc.mesh, disc, snaps)


def greedy_fixed(config: GreedyConfig, mesh: meshmod.Mesh | None = None,
                 data: ProblemData | None = None) -> GreedyResult:
    run = _Run(config, data)
    mesh = mesh or build_mesh(config.domain, config.uniform_levels)
    disc = Discretization(mesh, run.data)
    eps_h, eps_rb = 0.0, config.eps_rb0
    mu = np.array(config.mu_1)
    snaps = []
    reason = "N_max_reached"
    for n in range(1, config.n_max + 1):
        t = time.perf_counter()
        u, s, ind = solve_pair(disc, mu)
        run.t_fe += time.perf_counter() - t
        snaps.append((mu, u, s))
        eps_h, eps_rb = update_tolerances(eps_h, eps_rb, [ind.total], config.r_rbfe)
        model = rb.build_offline(disc, snaps)
        am = run.sweep(model, disc)
        run.record(n, mu, eps_h, eps_rb, am, disc, 0, 1, ind.total, None)
        if am.eta <= eps_rb:
            reason = "tolerance_met"
            break
        mu = am.mu
    return run.finish(model, disc, snaps, reason)


def _recompute(disc, mus):
    return [(mu,) + solve_pair(disc, mu)[:2] for mu in mus]


def greedy_adaptive(config: GreedyConfig, mesh0: meshmod.Mesh | None = None,
                    data: ProblemData | None = None) -> GreedyResult:
    run = _Run(config, data)
    mesh = mesh0 or build_mesh(config.domain, config.initial_levels)
    disc = Discretization(mesh, run.data)
    eps_h = config.eps_h0
    eps_rb = config.r_rbfe * eps_h
    mu = np.array(config.mu_1)
    mus = []
    snaps = []
    reason = "N_max_reached"
    for n in range(1, config.n_max + 1):
        t = time.perf_counter()
        res = adaptive_fe_solve(disc.mesh, mu, eps_h, None, run.data, config.theta,
                                config.max_afem_steps, disc)
        mus.append(mu)
        if res.refined:
            disc = res.disc
            snaps = _recompute(disc, mus[:-1])
        snaps.append((mu, res.u, res.sigma))
        run.t_fe += time.perf_counter() - t
        model = rb.build_offline(disc, snaps)
        am = run.sweep(model, disc)
        run.record(n, mu, eps_h, eps_rb, am, disc, res.refined, res.enough, res.eta,
                   res.ancestry)
        if am.eta <= eps_rb:
            reason = "tolerance_met"
            break
        mu = am.mu
    return run.finish(model, disc, snaps, reason)


def greedy_balanced(config: GreedyConfig, mesh0: meshmod.Mesh | None = None,
                    data: ProblemData | None = None) -> GreedyResult:
    run = _Run(config, data)
    t0_mesh = mesh0 or build_mesh(config.domain, config.initial_levels)
    cap = int(config.dof_max)
    disc = Discretization(t0_mesh, run.data)
    eps_h = config.eps_h0
    eps_rb = config.r_rbfe * eps_h
    mu = np.array(config.mu_1)
    mus = []
    snaps = []
    reason = "N_max_reached"
    for n in range(1, config.n_max + 1):
        t = time.perf_counter()
        res = adaptive_fe_solve(disc.mesh, mu, eps_h, cap, run.data, config.theta,
                                config.max_afem_steps, disc, config.dof_measure)
        mus.append(mu)
        if res.enough:
            refined = res.refined
            ancestry = res.ancestry
            if refined:
                disc = res.disc
                snaps = _recompute(disc, mus[:-1])
            snaps.append((mu, res.u, res.sigma))
            eta_new = res.eta
            eps_rb = config.r_rbfe * eps_h
        else:
            # budget exhausted: balanced mesh for all selected parameters from T_0
            reb = adaptive_fe_solve(t0_mesh, np.array(mus), eps_h, cap, run.data,
                                    config.theta, config.max_afem_steps,
                                    dof_measure=config.dof_measure)
            refined = False
            ancestry = None
            disc = reb.disc
            snaps = [(m, u, s) for m, (u, s) in zip(mus, reb.fields)]
            eta_new = float(reb.etas[-1])
            eps_h = max([eps_h] + [float(e) for e in reb.etas])
            eps_rb = config.r_rbfe * eps_h
        run.t_fe += time.perf_counter() - t
        model = rb.build_offline(disc, snaps)
        am = run.sweep(model, disc)
        run.record(n, mu, eps_h, eps_rb, am, disc, refined, res.enough, eta_new, ancestry)
        if am.eta <= eps_rb:
            reason = "tolerance_met"
            break
        mu = am.mu
    return run.finish(model, disc, snaps, reason)


def run_greedy(config: GreedyConfig, mesh=None, data=None) -> GreedyResult:
    fn = {"fixed": greedy_fixed, "adaptive_mesh": greedy_adaptive,
          "balanced": greedy_balanced}[config.algorithm]
    return fn(config, mesh, data)


def validate_random(model: rb.RBModel, n_samples: int, seed: int, box=BOX, backend=None):
    """(max, mean, values) of eta_rb over ``n_samples`` random parameters."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    mus = make_training_set(n_samples, seed, box)
    vals = rb.evaluate(model, mus, backend=backend)
    return float(vals.max()), float(vals.mean()), vals


def validate_points(model: rb.RBModel, mus: Sequence, backend=None) -> np.ndarray:
    return rb.evaluate(model, np.asarray(mus, dtype=float), backend=backend)
