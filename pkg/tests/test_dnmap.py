import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad, solve_bvp

from pcalderon import dnmap
from pcalderon.geometry import Kind
from pcalderon.mesh import triangulate

from conftest import boundary_angle, disk_scenario

# <Lambda f, f> for f = cos(theta) around a concentric disk, frozen from the
# radial boundary-value oracle below (agrees with the closed forms to 1e-14)
ANNULUS = {
    (0.3, "superconducting"): 3.763006585069093,
    (0.5, "superconducting"): 5.235987755982989,
    (0.3, "insulating"): 2.6227975364832217,
    (0.5, "insulating"): 1.8849555921538759,
}


def radial_oracle(rho0, kind):
    """Energy of ``u(r) cos(theta)`` solving the mode-1 radial equation on (rho0, 1)."""
    r = np.linspace(rho0, 1, 200)

    def ode(r, y):
        return np.vstack([y[1], -y[1] / r + y[0] / r**2])

    if kind == "superconducting":
        def bc(a, b):
            return np.array([a[0], b[0] - 1])
    else:
        def bc(a, b):
            return np.array([a[1], b[0] - 1])
    s = solve_bvp(ode, bc, r, np.vstack([r, np.ones_like(r)]), tol=1e-10, max_nodes=100000)
    return math.pi * quad(lambda t: (s.sol(t)[1] ** 2 + s.sol(t)[0] ** 2 / t**2) * t, rho0, 1, epsabs=1e-13)[0]


@pytest.mark.parametrize("key", list(ANNULUS))
def test_radial_oracle_matches_frozen_value(key):
    assert radial_oracle(*key) == pytest.approx(ANNULUS[key], rel=1e-9)


@pytest.mark.parametrize("key", list(ANNULUS))
def test_annulus_pairing(key):
    rho0, kind = key
    sc = disk_scenario(kind, (0.0, 0.0), rho0)
    m = triangulate(sc, 0.04)
    f = np.cos(boundary_angle(m))
    assert dnmap.pair(sc, m, f, f) == pytest.approx(ANNULUS[key], rel=0.02)


def test_gap_sign_by_material():
    for kind, sign in (("superconducting", 1), ("insulating", -1)):
        sc = disk_scenario(kind)
        m = triangulate(sc, 0.05)
        g = dnmap.GapSolver(sc, m).gap(dnmap.BoundaryData(np.cos(boundary_angle(m))))
        assert g.sign == sign


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("kind", ["superconducting", "insulating"])
def test_reflected_gap_agrees_with_difference(kind, p):
    # two independent routes: the reflected minimisation and the difference of two pairings
    sc = disk_scenario(kind, p=p)
    m = triangulate(sc, 0.05)
    th = boundary_angle(m)
    f = dnmap.BoundaryData(np.cos(th) + 0.3 * np.sin(2 * th))
    solver = dnmap.GapSolver(sc, m)
    a = solver.gap(f).value
    b = solver.gap(f, "difference").value
    assert a == pytest.approx(b, rel=1e-6)
    direct = dnmap.pair(sc, m, f, f) - dnmap.free_pair(m, f, f, p)
    assert b == pytest.approx(direct, rel=1e-6)


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_gap_is_p_homogeneous(sc_disk_mesh, p):
    sc = sc_disk_mesh.scenario.with_p(p)
    solver = dnmap.GapSolver(sc, sc_disk_mesh)
    f = np.cos(boundary_angle(sc_disk_mesh))
    g1 = solver.gap(dnmap.BoundaryData(f)).value
    g2 = solver.gap(dnmap.BoundaryData(2.5 * f)).value
    assert g2 == pytest.approx(2.5**p * g1, rel=1e-8)


def test_empty_scenario_has_zero_gap(empty_disk):
    m = triangulate(empty_disk, 0.08)
    f = np.cos(boundary_angle(m))
    assert dnmap.gap(empty_disk, m, f) == 0.0
    assert dnmap.pair(empty_disk, m, f, f) == pytest.approx(dnmap.free_pair(m, f, f, 2.0), rel=1e-13)


def test_pairing_with_constants_vanishes(mixed_scenario, mixed_mesh):
    f = np.cos(boundary_angle(mixed_mesh))
    assert abs(dnmap.pair(mixed_scenario, mixed_mesh, f, np.ones_like(f))) <= 1e-12
    # adding a constant to the data leaves the pairing unchanged
    assert dnmap.pair(mixed_scenario, mixed_mesh, f + 3.0, f) == pytest.approx(
        dnmap.pair(mixed_scenario, mixed_mesh, f, f), rel=1e-10)


def test_pairing_matrix_symmetric_positive(mixed_scenario, mixed_mesh):
    th = boundary_angle(mixed_mesh)
    traces = [np.cos(k * th) for k in (1, 2, 3)] + [np.sin(k * th) for k in (1, 2)]
    P = dnmap.pairing_matrix(mixed_scenario, mixed_mesh, traces)
    assert np.abs(P - P.T).max() <= 1e-10 * np.abs(P).max()
    assert np.linalg.eigvalsh(0.5 * (P + P.T)).min() > 0
    assert dnmap.pairing_csv(P).splitlines()[0] == "f_id,g_id,value"


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.lists(st.floats(-3, 3), min_size=2, max_size=2),
       st.sampled_from([1.3, 2.0, 3.5]))
def test_bregman_nonnegative(a, b, p):
    a, b = np.array([a]), np.array([b])
    val = dnmap.bregman(a, b, p, 0.0)[0]
    assert val >= -1e-12 * (1 + np.abs(a).sum() + np.abs(b).sum()) ** p


@given(st.lists(st.floats(-2, 2), min_size=2, max_size=2), st.lists(st.floats(-2, 2), min_size=2, max_size=2),
       st.sampled_from([1.5, 3.0]), st.sampled_from([0.0, 0.1]))
def test_bregman_gradient_matches_finite_differences(a, b, p, eps):
    a, b = np.array([a]), np.array([b])
    if np.linalg.norm(a + b) < 0.05:
        return  # phi is not smooth at the origin for eps = 0
    g = dnmap.bregman_grad(a, b, p, eps)[0]
    h = 1e-6
    fd = [(dnmap.bregman(a, b + h * e, p, eps) - dnmap.bregman(a, b - h * e, p, eps))[0] / (2 * h)
          for e in np.eye(2)[:, None, :]]
    assert g == pytest.approx(fd, rel=1e-5, abs=1e-6)


def test_bregman_at_zero_base():
    b = np.array([[0.3, -0.4]])
    assert dnmap.bregman(np.zeros((1, 2)), b, 3.0, 0.0)[0] == pytest.approx(0.5**3)
    assert dnmap.bregman_grad(np.zeros((1, 2)), b, 3.0, 0.0)[0] == pytest.approx(3 * 0.5 * b[0])


def test_bregman_is_square_at_p2():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    assert dnmap.bregman(a, b, 2.0, 0.0) == pytest.approx((b**2).sum(axis=1), rel=1e-12)


def test_p2_estimates_hold(sc_disk, sc_disk_mesh):
    f = dnmap.BoundaryData.from_function(sc_disk_mesh, lambda x: x[:, 0], harmonic=True)
    rep = dnmap.check_estimates_p2(sc_disk, sc_disk_mesh, f)
    assert rep.lower_ok and rep.upper_ok
    assert 0 < rep.inclusion_energy <= rep.gap


def test_ellipticity_ratios_positive(mixed_scenario, mixed_mesh):
    th = boundary_angle(mixed_mesh)
    fam = [np.cos(k * th) for k in range(1, 11)] + [np.sin(k * th) for k in range(1, 11)] + [np.ones_like(th)]
    lo, hi = dnmap.ellipticity_report(mixed_scenario, mixed_mesh, fam)
    assert 0 < lo <= hi < 10


def test_boundary_data_validation():
    with pytest.raises(ValueError):
        dnmap.BoundaryData(np.array([1.0, np.inf]))
    with pytest.raises(ValueError):
        dnmap.BoundaryData(np.zeros((2, 2)))


def test_mesh_kinds_carried(mixed_mesh):
    assert Kind.SUPERCONDUCTING in mixed_mesh.kinds
