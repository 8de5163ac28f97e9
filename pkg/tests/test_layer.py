import math

import numpy as np
import pytest

from conftest import UNIT_DISK, disk_scenario
from pcalderon import acceptance, build_scenario, layer
from pcalderon.geometry import Circle


def annulus_free_field(x):
    return np.atleast_2d(x)[:, 0]


def annulus_reflection_coefficient(rho0):
    """Mode-1 reflected field ``A (r - 1/r) cos(theta)`` vanishing on ``r = 1`` and cancelling ``x`` on ``r = rho0``."""
    return rho0**2 / (1 - rho0**2)


@pytest.fixture(scope="module")
def concentric():
    outer = layer.panel_curve(Circle((0.0, 0.0), 1.0), 256, "outer")
    inner = layer.panel_curve(Circle((0.0, 0.0), 0.5), 256, "inclusion")
    return outer, inner, layer.LayerSystem(outer, inner)


def test_panel_curve_orientation_and_normals():
    c = layer.panel_curve(Circle((0.3, 0.1), 0.4), 64)
    n = c.normals
    radial = c.midpoints - np.array([0.3, 0.1])
    assert np.all(np.einsum("nd,nd->n", n, radial) > 0)
    assert c.total_length == pytest.approx(2 * math.pi * 0.4, rel=2e-3)
    with pytest.raises(ValueError):
        layer.PanelCurve(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))


@pytest.mark.parametrize("R", [0.25, 0.5])
def test_equilibrium_density_on_circle(R):
    circ = layer.panel_curve(Circle((0.1, -0.2), R), 128, "inclusion")
    r = 8.0
    psi, s = layer.equilibrium_density(circ, r)
    uniform = 1 / (2 * math.pi * R)
    assert np.abs(psi - uniform).max() / uniform < 1e-3
    assert s == pytest.approx(math.log(r / R) / (2 * math.pi), rel=1e-3)
    assert float(psi @ circ.lengths) == pytest.approx(1.0, rel=1e-12)


def test_capacity_circle_and_ellipse():
    r = 8.0
    # capacity relative to the kernel scale: radius / r and (a + b) / (2 r)
    assert layer.capacity(layer.panel_curve(Circle((0.0, 0.0), 0.5), 256), r) == pytest.approx(0.5 / r, rel=2e-3)
    assert layer.capacity(layer.ellipse_curve((0.0, 0.0), 0.6, 0.2, 256), r) == pytest.approx(0.4 / r, rel=2e-3)


def test_single_layer_jump_relation():
    circ = layer.panel_curve(Circle((0.0, 0.0), 0.5), 128)
    rng = np.random.default_rng(1)
    q = rng.standard_normal(circ.n)
    delta = 1e-7
    m, n = circ.midpoints, circ.normals
    g_out = layer.single_layer_gradient(circ, q, m + delta * n)
    g_in = layer.single_layer_gradient(circ, q, m - delta * n)
    jump = np.einsum("nd,nd->n", g_in - g_out, n)
    assert np.max(np.abs(jump - q)) < 1e-5 * np.abs(q).max()


def test_single_layer_gradient_matches_finite_difference():
    circ = layer.panel_curve(Circle((0.0, 0.0), 0.5), 64)
    q = np.cos(np.arange(circ.n))
    x = np.array([[0.1, 0.2], [0.9, -0.3]])
    h = 1e-6
    fd = np.column_stack([(layer.single_layer_eval(circ, q, x + e, 8.0) - layer.single_layer_eval(circ, q, x - e, 8.0)) / (2 * h)
                          for e in (np.array([h, 0.0]), np.array([0.0, h]))])
    assert np.allclose(layer.single_layer_gradient(circ, q, x), fd, atol=1e-7)


@pytest.mark.parametrize("rho0", [0.2, 0.5, 0.8])
def test_concentric_contraction_norm(rho0):
    outer = layer.panel_curve(Circle((0.0, 0.0), 1.0), 192, "outer")
    inner = layer.panel_curve(Circle((0.0, 0.0), rho0), 192, "inclusion")
    (n_oi, n_io, n_k), (d_oi, d_io, d_k) = layer.operator_norm_estimates(layer.LayerSystem(outer, inner), cross_check=True)
    assert n_k == pytest.approx(rho0**2, rel=5e-3)
    assert n_k == pytest.approx(d_k, rel=1e-8)
    assert n_k <= n_oi * n_io * (1 + 1e-10)


def test_concentric_reflected_field_and_gap(concentric):
    outer, inner, system = concentric
    sol = layer.solve_reflected(outer, inner, annulus_free_field(inner.midpoints), system=system)
    A = annulus_reflection_coefficient(0.5)
    x = np.array([[0.75, 0.0], [0.0, -0.75], [0.6, 0.45]])
    r = np.linalg.norm(x, axis=1)
    expected = A * (r - 1 / r) * x[:, 0] / r
    assert np.allclose(sol(x), expected, rtol=1e-2, atol=1e-3 * abs(A))
    assert sol.gap(annulus_free_field(inner.midpoints)) == pytest.approx(2 * math.pi * A, rel=1e-2)
    assert sol.gap(annulus_free_field(inner.midpoints)) == pytest.approx(2 * math.pi / 3, rel=1e-2)
    assert sol.method == "neumann"
    assert abs(float(sol.inner_density @ inner.lengths)) < 1e-12


def test_constant_free_field_has_no_gap(concentric):
    outer, inner, system = concentric
    sol = layer.solve_reflected(outer, inner, np.full(inner.n, 3.0), system=system)
    assert np.abs(sol.inner_density).max() < 1e-12
    assert sol.gap(np.full(inner.n, 3.0)) == pytest.approx(0.0, abs=1e-12)


def test_gap_routes_and_panel_doubling():
    sc = disk_scenario()
    u0 = acceptance.harmonic_modes((0.0, 0.0), (2,))[0]
    g128 = layer.bem_gap(sc, u0, 128, 128)
    g256 = layer.bem_gap(sc, u0, 256, 256)
    outer_route = layer.bem_gap(sc, u0, 256, 256, route="outer")
    assert abs(g256 - g128) / abs(g256) < 2.5e-3
    assert outer_route == pytest.approx(g256, rel=1e-2)
    with pytest.raises(ValueError):
        layer.bem_gap(sc, u0, 64, 64, route="sideways")


def test_fem_and_bem_gaps_agree():
    sc = disk_scenario()
    rows = acceptance.fem_bem_gaps(sc, h_max=0.04, panels=192, modes=(1, 2))
    assert max(r[3] for r in rows) <= 0.02


def test_scenario_curves_rejects_unsupported():
    with pytest.raises(ValueError):
        layer.scenario_curves(disk_scenario(kind="insulating"))
    with pytest.raises(ValueError):
        layer.scenario_curves(disk_scenario(p=3.0))
    with pytest.raises(ValueError):
        layer.scenario_curves(build_scenario(UNIT_DISK, []))


def test_scale_violation():
    outer = layer.panel_curve(Circle((0.0, 0.0), 1.0), 64, "outer")
    inner = layer.panel_curve(Circle((0.0, 0.0), 0.5), 64, "inclusion")
    with pytest.raises(layer.ScaleViolation):
        layer.LayerSystem(outer, inner, r=1.5)
    with pytest.raises(layer.ScaleViolation):
        layer.single_layer_eval(inner, np.ones(64), [[0.0, 0.0]], 1.5, domain_diameter=2.0)


def test_density_validation():
    circ = layer.panel_curve(Circle((0.0, 0.0), 0.5), 32)
    with pytest.raises(ValueError):
        layer.Density(circ, np.ones(31))
    with pytest.raises(ValueError):
        layer.Density(circ, np.full(32, np.nan))
    with pytest.raises(ValueError):
        layer.Density(circ, np.ones(32), mean_zero=True)
    d = layer.Density(circ, np.arange(32.0)).project_mean_zero()
    assert abs(d.mass) < 1e-12 and d.mean_zero
    # evaluation accepts the wrapper and the raw array alike
    x = [[0.1, 0.1]]
    assert layer.single_layer_eval(circ, d, x, 8.0) == pytest.approx(layer.single_layer_eval(circ, d.values, x, 8.0))


def test_density_csv():
    circ = layer.panel_curve(Circle((0.0, 0.0), 0.5), 16)
    lines = layer.density_csv(circ, np.ones(16)).splitlines()
    assert lines[0] == "arclength,value" and len(lines) == 17
