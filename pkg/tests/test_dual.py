import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st

from pdrb import fe
from pdrb.dual import (InfeasibleLiftingError, build_dual_lifting, dual_energy,
                       feasibility_defect, solve_dual)
from pdrb.estimator import local_gap
from pdrb.mesh import (DIRICHLET, NEUMANN, make_lshape_initial, make_unit_square,
                       uniform_refine, with_boundary_markers)
from pdrb.primal import galerkin_residual, primal_energy, solve_primal
from pdrb.problem import Discretization, ProblemData

mus = st.tuples(st.floats(-2, 2), st.floats(-2, 2))


def test_zero_data_zero_flux():
    disc = Discretization(uniform_refine(make_lshape_initial(), 3), ProblemData(sources=(0.0,)))
    s = solve_dual(disc, (1, -1))
    assert not np.any(s.flux)
    assert dual_energy(disc, s, (0, 0)) == 0.0


def test_lshape_dense_oracle():
    """Whole mixed system by dense elimination, no liftings, no elimination."""
    disc = Discretization(make_lshape_initial())
    sp_ = disc.spaces
    mu = (0.0, 0.0)
    M = disc.mass(mu).toarray()
    B = disc.B.toarray()
    K = np.block([[M, B.T], [B, np.zeros((sp_.n_p0, sp_.n_p0))]])
    rhs = np.concatenate([-disc.dirichlet_functional, disc.f_h * sp_.areas])
    ref = sla.solve(K, rhs)[:sp_.n_rt0]
    s = solve_dual(disc, mu)
    assert np.allclose(s.flux, ref, rtol=1e-10, atol=1e-12)


def test_lifting_divergence_one(lshape0):
    disc = Discretization(lshape0)
    s_f0, s_0g = build_dual_lifting(disc, np.ones(6), None)
    assert np.allclose(fe.divergence(disc.spaces, s_f0), 1.0, atol=1e-13)
    assert not np.any(s_0g.flux)
    z0, z1 = build_dual_lifting(disc, np.zeros(6), None)
    assert not np.any(z0.flux) and not np.any(z1.flux)


def test_neumann_lifting():
    m = with_boundary_markers(make_unit_square(4),
                              lambda p: np.where(np.isclose(p[:, 0], 1.0), NEUMANN, DIRICHLET))
    disc = Discretization(m, ProblemData(sources=(0.0,), neumann=(1.0,)))
    sp_ = disc.spaces
    _, s0g = build_dual_lifting(disc, None, np.ones(len(sp_.neumann_edges)))
    assert np.allclose(fe.divergence(sp_, s0g), 0.0, atol=1e-12)
    # outward flux through each Neumann edge, by edge quadrature of tau . n
    ids = sp_.boundary_edge_ids[sp_.boundary_markers == NEUMANN]
    owner = np.array([np.flatnonzero((sp_.t2e == e).any(axis=1))[0] for e in ids])
    v = m.vertices
    gx, gw = np.polynomial.legendre.leggauss(2)
    for e, t in zip(ids, owner):
        a, b = v[sp_.edges[e]]
        pts = a + 0.5 * (gx[:, None] + 1) * (b - a)
        P = sp_.points[t]
        lam = np.linalg.solve(np.vstack([P.T, np.ones(3)]), np.vstack([pts.T, np.ones(2)])).T
        vals = fe.flux_at(sp_, s0g.flux, lam)[t]
        n = np.array([1.0, 0.0])
        flux = 0.5 * gw @ (vals @ n) * sp_.edge_len[e]
        assert np.isclose(flux, sp_.edge_len[e] * 1.0, rtol=1e-12)


@given(mus)
def test_feasibility_after_solve(disc_small, mu):
    s = solve_dual(disc_small, mu)
    f_h = disc_small.f_h
    err = np.abs(fe.divergence(disc_small.spaces, s) - f_h).max()
    assert err <= 1e-10 * (1 + np.abs(f_h).max())
    assert np.allclose(s.div, fe.divergence(disc_small.spaces, s), atol=1e-12)


def test_infeasible_lifting_rejected(disc_small):
    bad = fe.DualField.from_flux(disc_small.spaces, np.zeros(disc_small.spaces.n_rt0))
    with pytest.raises(InfeasibleLiftingError):
        solve_dual(disc_small, (0, 0), lifting=bad)


@given(mus, st.sampled_from([-1.0, 1.0, 0.25]))
def test_parameter_shift_invariance(disc_small, mu, s):
    a = solve_dual(disc_small, mu).flux
    b = solve_dual(disc_small, (mu[0] + s, mu[1] + s)).flux
    assert np.allclose(a, b, rtol=1e-9, atol=1e-9 * np.abs(a).max())


def test_affine_mass(disc_small):
    mu = (-1.2, 0.8)
    ref = fe.rt0_mass(disc_small.spaces, 1.0 / disc_small.alpha(mu))
    assert abs(disc_small.mass(mu) - ref).max() <= 1e-13 * abs(ref).max()


def test_dual_energy_increases_under_refinement():
    base = make_lshape_initial()
    vals = []
    for k in range(2, 9, 2):
        disc = Discretization(uniform_refine(base, k))
        vals.append(dual_energy(disc, solve_dual(disc, (0.5, 0)), (0.5, 0)))
    assert all(a < b for a, b in zip(vals, vals[1:]))


@given(mus)
def test_duality_gap_nonnegative(disc_small, mu):
    u = solve_primal(disc_small, mu)
    s = solve_dual(disc_small, mu)
    assert dual_energy(disc_small, s, mu) <= primal_energy(disc_small, u, mu)


def test_dual_is_maximizer(disc_small):
    """J^d(sigma_h) >= J^d(sigma_h + tau) for divergence-free tau."""
    mu = (1.0, -1.0)
    s = solve_dual(disc_small, mu)
    j0 = dual_energy(disc_small, s, mu)
    # divergence-free RT0 fields: rotated gradients of P1 functions vanishing on dT
    sp_ = disc_small.spaces
    rng = np.random.default_rng(2)
    psi = np.zeros(sp_.n_p1)
    psi[sp_.free_vertices] = rng.standard_normal(len(sp_.free_vertices))
    g = fe.p1_gradients(sp_, psi)
    curl = np.stack([g[:, 1], -g[:, 0]], axis=1)
    # normal components agree across edges, so either neighbour may write
    tau = np.zeros(sp_.n_rt0)
    tau[sp_.t2e.ravel()] = np.einsum("tkd,td->tk", sp_.edge_normals()[sp_.t2e], curl).ravel()
    assert np.allclose(fe.divergence_of(sp_, tau), 0, atol=1e-9)
    t2 = fe.DualField.from_flux(sp_, s.flux + 1e-3 * tau)
    assert dual_energy(disc_small, t2, mu) < j0


def test_general_data_identity():
    """Sources, Dirichlet and Neumann data together: Prager-Synge holds exactly."""
    m = with_boundary_markers(uniform_refine(make_lshape_initial(), 5),
                              lambda p: np.where(np.isclose(p[:, 1], 1.0), NEUMANN, DIRICHLET))
    data = ProblemData(sources=(1.0, lambda x, y: np.cos(x + 2 * y)),
                       dirichlet=(lambda x, y: x * y + 0.5,),
                       neumann=(lambda x, y: np.sin(3 * x),))
    disc = Discretization(m, data)
    for mu in [(0, 0), (1.5, -2), (-0.7, 1.1)]:
        u = solve_primal(disc, mu)
        s = solve_dual(disc, mu)
        assert galerkin_residual(disc, u, mu) <= 1e-12
        assert feasibility_defect(disc, s) <= 1e-10
        gap2 = 2 * (primal_energy(disc, u, mu) - dual_energy(disc, s, mu))
        eta = local_gap(disc, u, s, mu).total
        assert abs(gap2 - eta ** 2) <= 1e-10 * eta ** 2
