import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from pdrb import fe
from pdrb.mesh import make_lshape_initial, make_unit_square, uniform_refine, refine_nvb

def cross2(a, b):
    return a[0] * b[1] - a[1] * b[0]


UNIT = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

triangles = st.lists(st.floats(-3, 3), min_size=6, max_size=6).map(
    lambda v: np.array(v).reshape(3, 2)).filter(
    lambda P: abs(cross2(P[1] - P[0], P[2] - P[0])) > 0.05).map(
    lambda P: P if cross2(P[1] - P[0], P[2] - P[0]) > 0 else P[[0, 2, 1]])


def rt0_basis(P, k, x):
    """phi_k(x) = |E_k| / (2|T|) (x - P_k), edge k opposite vertex k."""
    area = 0.5 * cross2(P[1] - P[0], P[2] - P[0])
    e = np.linalg.norm(P[(k + 2) % 3] - P[(k + 1) % 3])
    return e / (2 * area) * (np.asarray(x) - P[k])


def tri_integral(P, fn):
    """Integral over triangle P via scipy dblquad on the reference map."""
    J = np.column_stack([P[1] - P[0], P[2] - P[0]])
    det = abs(np.linalg.det(J))

    def g(s, r):
        x = P[0] + J @ np.array([r, s])
        return fn(x)
    val, _ = integrate.dblquad(g, 0, 1, 0, lambda r: 1 - r, epsabs=1e-14, epsrel=1e-13)
    return val * det


@pytest.mark.parametrize("mesh,counts", [
    (make_lshape_initial(), (8, 13, 6)),
    (make_unit_square(1), (4, 5, 2)),
    (uniform_refine(make_unit_square(1), 2), (9, 16, 8)),
])
def test_dof_counts(mesh, counts):
    sp_ = fe.build_spaces(mesh)
    assert (sp_.n_p1, sp_.n_rt0, sp_.n_p0) == counts
    assert sp_.n_rt0 == mesh.n_vertices + mesh.n_triangles - 1   # Euler
    assert np.all(sp_.edges[:, 0] < sp_.edges[:, 1])


def test_edge_orientation_shared():
    sp_ = fe.build_spaces(uniform_refine(make_lshape_initial(), 3))
    # interior edges: the two adjacent triangles see opposite local signs of the
    # outward normal, i.e. exactly one +1 and one -1
    tot = np.zeros(sp_.n_rt0)
    np.add.at(tot, sp_.t2e.ravel(), sp_.signs.ravel())
    interior = np.setdiff1d(np.arange(sp_.n_rt0), sp_.boundary_edge_ids)
    assert np.all(tot[interior] == 0)


def test_unit_stiffness():
    K = fe.local_p1_stiffness(UNIT)
    ref = np.array([[1, -.5, -.5], [-.5, .5, 0], [-.5, 0, .5]])
    assert np.allclose(K, ref, atol=1e-15)
    assert np.allclose(fe.local_p1_stiffness(UNIT, 10.0), 10 * ref, atol=1e-14)


@given(triangles)
def test_stiffness_vs_quadrature(P):
    K = fe.local_p1_stiffness(P)
    # gradients from a linear solve: l_i(x) = a + b.x with l_i(P_j) = delta_ij
    V = np.column_stack([np.ones(3), P])
    G = np.linalg.solve(V, np.eye(3))[1:].T
    area = 0.5 * cross2(P[1] - P[0], P[2] - P[0])
    assert np.allclose(K, area * G @ G.T, rtol=1e-13, atol=1e-13 * np.abs(K).max())
    assert np.allclose(K, K.T) and np.allclose(K.sum(axis=1), 0, atol=1e-12 * np.abs(K).max())


def test_rt0_mass_unit_triangle_vs_dblquad():
    Mloc = fe.local_rt0_mass(UNIT)
    for i in range(3):
        for j in range(3):
            ref = tri_integral(UNIT, lambda x: rt0_basis(UNIT, i, x) @ rt0_basis(UNIT, j, x))
            assert abs(Mloc[i, j] - ref) <= 1e-13
    assert np.all(np.linalg.eigvalsh(Mloc) > 0)
    assert np.allclose(fe.local_rt0_mass(UNIT, 0.01), 0.01 * Mloc, rtol=1e-15)


@given(triangles, st.sampled_from([0, 1, 2]))
def test_rt0_mass_sign_flip(P, k):
    s = np.ones(3)
    s[k] = -1
    A = fe.local_rt0_mass(P)
    B = fe.local_rt0_mass(P, 1.0, s)
    D = np.diag(s)
    assert np.allclose(B, D @ A @ D, rtol=1e-14, atol=1e-15)


@given(triangles)
def test_rt0_mass_vs_order7(P):
    bary, w = fe.quadrature(7)
    x = bary @ P
    area = 0.5 * cross2(P[1] - P[0], P[2] - P[0])
    phi = np.stack([rt0_basis(P, k, x) for k in range(3)])
    ref = np.einsum("iqd,jqd,q->ij", phi, phi, w) * area
    assert np.allclose(fe.local_rt0_mass(P), ref, rtol=1e-12, atol=1e-14)


def test_local_div_unit():
    d = fe.local_div(UNIT)
    lens = np.array([np.sqrt(2), 1.0, 1.0])
    assert np.allclose(d, lens / 0.5)
    # divergence of phi_k(x) = c (x - P_k) is 2c
    for k in range(3):
        c = lens[k] / (2 * 0.5)
        assert np.isclose(d[k], 2 * c)
    assert np.allclose(fe.local_div(UNIT, [1, -1, 1]), d * [1, -1, 1])


@given(triangles)
def test_divergence_theorem_and_normal_trace(P):
    """int_T div phi_e = flux of phi_e through dT; phi_e . n = 1 on its own edge."""
    area = 0.5 * cross2(P[1] - P[0], P[2] - P[0])
    d = fe.local_div(P)
    gx, gw = np.polynomial.legendre.leggauss(3)
    s = 0.5 * (gx + 1)
    for k in range(3):
        total = 0.0
        for j in range(3):
            a, b = P[(j + 1) % 3], P[(j + 2) % 3]
            t = b - a
            n = np.array([t[1], -t[0]]) / np.linalg.norm(t)   # outward for CCW
            pts = a[None] + s[:, None] * t[None]
            vals = np.array([rt0_basis(P, k, x) @ n for x in pts])
            if j == k:
                assert np.allclose(vals, 1.0, rtol=1e-12)
            else:
                assert np.allclose(vals, 0.0, atol=1e-12)
            total += 0.5 * gw @ vals * np.linalg.norm(t)
        assert np.isclose(d[k] * area, total, rtol=1e-12)


def test_zero_flux_zero_divergence():
    sp_ = fe.build_spaces(make_lshape_initial())
    assert not np.any(fe.divergence_of(sp_, np.zeros(sp_.n_rt0)))


def test_global_flux_is_normal_component():
    """A constant field tau: DOF_e = tau . n_e reproduces tau exactly."""
    sp_ = fe.build_spaces(uniform_refine(make_lshape_initial(), 2))
    tau = np.array([0.3, -1.7])
    dof = sp_.edge_normals() @ tau
    vals = fe.flux_at(sp_, dof, fe.MIDPOINT_BARY)
    assert np.allclose(vals, tau, atol=1e-13)
    assert np.allclose(fe.divergence_of(sp_, dof), 0.0, atol=1e-12)


def test_p0_project():
    m = refine_nvb(make_unit_square(1), [0])
    assert np.allclose(fe.p0_project(m, 1.0), 1.0)
    from pdrb.mesh import Mesh
    one = Mesh(UNIT, [[0, 1, 2]], [0], [[0, 1], [1, 2], [2, 0]], [1, 1, 1], [1])
    assert np.isclose(fe.p0_project(one, lambda x, y: x)[0], 1 / 3, rtol=1e-14)


def test_p0_project_sine_vs_dblquad():
    m = uniform_refine(make_unit_square(1), 3)
    f = fe.p0_project(m, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    P = m.vertices[m.triangles]
    for t in range(m.n_triangles):
        ref = tri_integral(P[t], lambda x: np.sin(np.pi * x[0]) * np.sin(np.pi * x[1]))
        assert abs(f[t] - ref / m.areas()[t]) <= 1e-6


def test_quadrature_exactness():
    # monomials x^a y^b on the unit triangle: a! b! / (a+b+2)!
    from math import factorial
    for deg, (bary, w) in ((2, fe.quadrature(2)), (7, fe.quadrature(7))):
        x = bary @ UNIT
        for a in range(deg + 1):
            for b in range(deg + 1 - a):
                exact = factorial(a) * factorial(b) / factorial(a + b + 2)
                assert np.isclose(0.5 * w @ (x[:, 0] ** a * x[:, 1] ** b), exact, rtol=1e-13)


def test_affine_stiffness_consistency():
    sp_ = fe.build_spaces(uniform_refine(make_lshape_initial(), 4))
    K1, K2 = fe.stiffness_by_region(sp_)
    alpha = np.where(sp_.mesh.region == 1, 10.0, 0.01)
    ref = fe.stiffness(sp_, alpha)
    assert abs(10.0 * K1 + 0.01 * K2 - ref).max() <= 1e-13 * abs(ref).max()
    M1, M2 = fe.rt0_mass_by_region(sp_)
    refm = fe.rt0_mass(sp_, 1.0 / alpha)
    assert abs(0.1 * M1 + 100.0 * M2 - refm).max() <= 1e-13 * abs(refm).max()


def test_global_mass_vs_order7():
    sp_ = fe.build_spaces(uniform_refine(make_lshape_initial(), 3))
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((2, sp_.n_rt0))
    bary, w = fe.quadrature(7)
    fa = fe.flux_at(sp_, a, bary)
    fb = fe.flux_at(sp_, b, bary)
    ref = np.einsum("tqd,tqd,q,t->", fa, fb, w, sp_.areas)
    assert np.isclose(a @ (fe.rt0_mass(sp_) @ b), ref, rtol=1e-12)


def test_gramians():
    sp_ = fe.build_spaces(uniform_refine(make_lshape_initial(), 3))
    v = sp_.mesh.vertices
    u_lin = v[:, 0] + 2 * v[:, 1]
    const = fe.PrimalField(np.ones(sp_.n_p1), sp_.stamp)
    u = fe.PrimalField(u_lin, sp_.stamp)
    sigma = fe.DualField.from_flux(sp_, sp_.edge_normals() @ np.array([-1.0, -2.0]))
    g = fe.regionwise_gramians(sp_, [const, u], [sigma])
    assert np.allclose(g.ggrad[:, 0, :], 0, atol=1e-13)
    whole = np.array([const.values, u_lin]) @ fe.stiffness(sp_) @ np.array([const.values, u_lin]).T
    assert np.allclose(g.ggrad.sum(axis=0), whole, atol=1e-13)
    # sigma = -grad u: cross = -|grad u|^2 |Omega| = -G_grad
    assert np.isclose(g.gcross[1, 0], -g.ggrad.sum(axis=0)[1, 1], rtol=1e-13)
    assert np.isclose(g.ggrad.sum(axis=0)[1, 1], 5.0 * 3.0, rtol=1e-13)
    assert np.allclose(g.ggrad, g.ggrad.transpose(0, 2, 1))


def test_gramians_stale():
    a = fe.build_spaces(make_lshape_initial())
    b = fe.build_spaces(uniform_refine(make_lshape_initial(), 1))
    with pytest.raises(fe.StaleFieldError):
        fe.regionwise_gramians(b, [fe.PrimalField(np.zeros(a.n_p1), a.stamp)], [])


@given(st.floats(0.01, 100.0))
def test_energy_scaling(c):
    sp_ = fe.build_spaces(uniform_refine(make_lshape_initial(), 2))
    u = np.sin(sp_.mesh.vertices[:, 0])
    e1 = u @ fe.stiffness(sp_) @ u
    ec = u @ fe.stiffness(sp_, c) @ u
    assert np.isclose(ec, c * e1, rtol=1e-14)
