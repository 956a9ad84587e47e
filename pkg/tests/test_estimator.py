import numpy as np
import pytest
from hypothesis import given, strategies as st

from pdrb import fe
from pdrb.dual import dual_energy, solve_dual
from pdrb.estimator import gap_pairs, local_gap, oscillation, sum_indicator
from pdrb.mesh import make_lshape_initial, make_unit_square, uniform_refine, refine_nvb
from pdrb.primal import primal_energy, solve_primal
from pdrb.problem import Discretization, ProblemData

mus = st.tuples(st.floats(-2, 2), st.floats(-2, 2))


def _pair(disc, mu):
    return solve_primal(disc, mu), solve_dual(disc, mu)


def test_linear_solution_zero_indicator():
    disc = Discretization(uniform_refine(make_unit_square(2), 2),
                          ProblemData(sources=(0.0,), dirichlet=(lambda x, y: x + 2 * y,)))
    u, s = _pair(disc, (0, 0))
    assert np.allclose(u.values, disc.mesh.vertices @ [1, 2], atol=1e-13)
    assert np.allclose(fe.flux_cell_average(disc.spaces, s.flux), [-1, -2], atol=1e-12)
    assert local_gap(disc, u, s, (0, 0)).local.max() <= 1e-12


@given(mus)
def test_prager_synge_identity(disc_mid, mu):
    u, s = _pair(disc_mid, mu)
    ind = local_gap(disc_mid, u, s, mu)
    gap2 = 2 * (primal_energy(disc_mid, u, mu) - dual_energy(disc_mid, s, mu))
    assert abs(gap2 - ind.total ** 2) <= 1e-10 * ind.total ** 2
    assert np.isclose(ind.total ** 2, np.sum(ind.local ** 2), rtol=1e-12)
    assert np.all(ind.local >= 0)


def test_indicator_vs_order7_quadrature(disc_small):
    mu = (1.1, -0.4)
    u, s = _pair(disc_small, mu)
    sp_ = disc_small.spaces
    bary, w = fe.quadrature(7)
    a = disc_small.alpha(mu)
    v = np.sqrt(a)[:, None, None] * fe.p1_gradients(sp_, u.values)[:, None, :] \
        + fe.flux_at(sp_, s.flux, bary) / np.sqrt(a)[:, None, None]
    ref = np.sqrt(np.einsum("tqd,tqd,q->t", v, v, w) * sp_.areas)
    assert np.allclose(local_gap(disc_small, u, s, mu).local, ref, rtol=1e-11)


def test_sum_indicator(disc_small):
    pairs = [(*_pair(disc_small, mu), mu) for mu in [(0, 0), (-2, 2), (2, -2)]]
    single = local_gap(disc_small, *pairs[0])
    assert np.array_equal(sum_indicator([single]).local, single.local)
    two = sum_indicator([single, single])
    assert np.allclose(two.local, np.sqrt(2) * single.local, rtol=1e-15)
    tot = gap_pairs(disc_small, pairs).total
    ref = np.sqrt(sum(local_gap(disc_small, *p).total ** 2 for p in pairs))
    assert abs(tot - ref) <= 1e-12 * ref


def test_sum_indicator_mixed_meshes(disc_small):
    other = Discretization(make_lshape_initial())
    a = local_gap(disc_small, *_pair(disc_small, (0, 0)), (0, 0))
    b = local_gap(other, *_pair(other, (0, 0)), (0, 0))
    with pytest.raises(fe.StaleFieldError):
        sum_indicator([a, b])


def test_stale_and_infeasible(disc_small):
    other = Discretization(make_lshape_initial())
    u, s = _pair(disc_small, (0, 0))
    with pytest.raises(fe.StaleFieldError):
        local_gap(other, u, s, (0, 0))
    zero = fe.DualField.from_flux(disc_small.spaces, np.zeros(disc_small.spaces.n_rt0))
    with pytest.raises(ValueError):
        local_gap(disc_small, u, zero, (0, 0))


def test_monotone_under_refinement():
    m = uniform_refine(make_lshape_initial(), 4)
    mu = (-1.0, 1.5)
    prev = np.inf
    for _ in range(4):
        disc = Discretization(m)
        ind = local_gap(disc, *_pair(disc, mu), mu)
        assert ind.total <= prev
        prev = ind.total
        m = refine_nvb(m, np.flatnonzero(ind.local >= np.quantile(ind.local, 0.7)))


@given(mus, st.sampled_from([1.0, 2.0, -1.0]))
def test_shift_scaling(disc_small, mu, s):
    e1 = local_gap(disc_small, *_pair(disc_small, mu), mu).total
    mu2 = (mu[0] + s, mu[1] + s)
    e2 = local_gap(disc_small, *_pair(disc_small, mu2), mu2).total
    assert abs(e2 - 10 ** (-s / 2) * e1) <= 1e-9 * e2


def test_oscillation():
    disc = Discretization(uniform_refine(make_unit_square(2), 2))
    assert np.allclose(oscillation(disc), 0.0)
    osc = oscillation(disc, lambda x, y: x)
    assert np.all(osc > 0)
