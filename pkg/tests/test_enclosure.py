import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from scipy.integrate import quad

from conftest import UNIT_DISK, disk_scenario
from pcalderon import build_scenario, enclosure
from pcalderon.enclosure import IndicatorSample
from pcalderon.geometry import Circle, Polygon


def synthetic_sweep(h, t, p, taus, noise=0.0, seed=0, bend=0.0):
    """Samples of ``log|I| = p tau (h - t) + 2 log tau + c`` with an optional low-frequency bend."""
    rng = np.random.default_rng(seed)
    out = []
    for tau in taus:
        la = p * tau * (h - t) + 2 * math.log(tau) - 1.3 + bend / tau + noise * rng.standard_normal()
        out.append(IndicatorSample((1.0, 0.0), t, tau, math.exp(la), la, 1, p))
    return out


@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.sampled_from([1.5, 2.0, 3.0]))
def test_estimate_support_recovers_synthetic_support(h, t, p):
    # near h = t the exponential regime is absent and the fit is rejected by design
    assume(abs(h - t) > 0.2)
    taus = np.array([40.0, 60.0, 80.0, 120.0, 160.0, 200.0])
    est = enclosure.estimate_support(synthetic_sweep(h, t, p, taus), t)
    # the 2 log tau term biases the slope by at most 2 / (p tau_min) per unit of log
    assert abs(est.h_hat - h) < 2 * math.log(200 / 80) / (p * 80)
    assert est.n_samples == 6


def test_estimate_support_rejects_short_or_unstable_sweeps():
    taus = [8.0, 12.0, 16.0]
    with pytest.raises(enclosure.RegimeNotReached):
        enclosure.estimate_support(synthetic_sweep(0.5, 0.0, 2.0, taus), 0.0)
    bent = synthetic_sweep(0.05, 0.0, 2.0, [1.0, 2.0, 4.0, 8.0, 16.0, 32.0], bend=-30.0)
    with pytest.raises(enclosure.RegimeNotReached):
        enclosure.estimate_support(bent, 0.0)


def test_estimate_support_rejects_mixed_levels():
    sweep = synthetic_sweep(0.5, 0.0, 2.0, [8.0, 12.0, 16.0, 24.0])
    sweep[0] = IndicatorSample(sweep[0].rho, 0.1, sweep[0].tau, sweep[0].value, sweep[0].log_abs, 1, 2.0)
    with pytest.raises(ValueError):
        enclosure.estimate_support(sweep, 0.0)


@pytest.fixture(scope="module")
def families():
    out = {}
    for p in (1.5, 3.0):
        sc = disk_scenario(p=p)
        out[p] = (sc, enclosure.MeshFamily(sc, h_max=0.12))
    return out


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_shift_identity(families, p):
    sc, fam = families[p]
    tau = 8.0
    a = enclosure.indicator(sc, fam.mesh_for(tau), (0.6, 0.8), 0.1, tau, fam.solver_for(tau))
    b = enclosure.indicator(sc, fam.mesh_for(tau), (0.6, 0.8), 0.7, tau, fam.solver_for(tau))
    assert abs(math.expm1(a.log_abs - b.log_abs - p * tau * 0.6)) < 1e-9
    assert a.sign == b.sign == 1


def test_indicator_sign_follows_material():
    ins = disk_scenario(kind="insulating", p=3.0)
    fam = enclosure.MeshFamily(ins, h_max=0.12)
    s = enclosure.indicator(ins, fam.mesh_for(8.0), (1.0, 0.0), -1.0, 8.0, fam.solver_for(8.0))
    assert s.sign == -1 and s.value < 0


def test_classify_empty_and_material():
    empty = build_scenario(UNIT_DISK, [], p=3.0)
    res = enclosure.classify(empty, enclosure.MeshFamily(empty, h_max=0.15), directions=4, tau_grid=(8.0,))
    assert res.verdict == enclosure.Verdict.EMPTY
    ins = disk_scenario(kind="insulating", p=1.5)
    res = enclosure.classify(ins, enclosure.MeshFamily(ins, h_max=0.12), directions=3, tau_grid=(8.0,))
    assert res.verdict == enclosure.Verdict.INSULATING


def test_mixed_signs_raise(mixed_scenario):
    fam = enclosure.MeshFamily(mixed_scenario, h_max=0.12)
    with pytest.raises(enclosure.MixedSigns):
        enclosure.classify(mixed_scenario, fam, directions=8, tau_grid=(8.0,))


def test_resolution_cap_is_enforced(sc_disk, sc_disk_mesh):
    # a uniform 0.05 mesh cannot resolve tau = 40
    with pytest.raises(enclosure.MeshResolutionExceeded):
        enclosure.indicator(sc_disk, sc_disk_mesh, (1.0, 0.0), 0.0, 40.0)


def test_mesh_family_respects_cap():
    sc = build_scenario(UNIT_DISK, [{"kind": "insulating", "shape": "polygon",
                                     "vertices": [[-0.4, -0.3], [0.3, -0.35], [0.1, 0.35]]}], p=2.0)
    fam = enclosure.MeshFamily(sc)
    for tau in (8.0, 16.0):
        assert tau * fam.mesh_for(tau).resolved_h() <= 0.5
    assert fam.mesh_for(16.0) is fam.mesh_for(16.0)


def test_hull_p2_contains_disk_roughly():
    sc = disk_scenario(p=2.0)
    hull = enclosure.reconstruct_hull(sc, enclosure.MeshFamily(sc, h_max=0.12), direction_count=8,
                                      tau_grid=(8.0, 12.0, 16.0, 24.0))
    assert len(hull.estimates) + len(hull.dropped) == 8
    errs = [abs(e.h_hat - enclosure.true_support(sc, e.rho)) for e in hull.estimates]
    assert len(errs) >= 6 and max(errs) < 0.15
    text = enclosure.hull_csv(hull)
    assert text.splitlines()[0] == "rho_x,rho_y,h_hat,stderr,n_samples,regime"
    assert len(text.splitlines()) == 9


def disk_oracle(center, radius, rho_angle, tau, p):
    """Scipy quadrature of the same integral, in coordinates aligned with the direction."""
    c = np.array(center)
    rho = np.array([math.cos(rho_angle), math.sin(rho_angle)])
    a = float(c @ rho)
    h = a + radius
    k = p * tau
    val, _ = quad(lambda s: math.exp(-k * (h - s)) * 2 * math.sqrt(max(radius**2 - (s - a) ** 2, 0.0)),
                  a - radius, h, points=[h - 1 / k], limit=200, epsabs=0, epsrel=1e-12)
    return tau**2 * val


@pytest.mark.parametrize("tau,p", [(4.0, 2.0), (20.0, 3.0), (60.0, 1.5)])
def test_lower_bound_integral_matches_quadrature(tau, p):
    disk = Circle((0.2, -0.1), 0.3)
    got = enclosure.lower_bound_integral(disk, (math.cos(0.7), math.sin(0.7)), tau, p)
    assert got == pytest.approx(disk_oracle((0.2, -0.1), 0.3, 0.7, tau, p), rel=1e-3)


def test_lower_bound_integral_square():
    sq = Polygon(np.array([[-0.2, -0.2], [0.2, -0.2], [0.2, 0.2], [-0.2, 0.2]]))
    tau, p = 10.0, 2.0
    k = p * tau
    exact = tau**2 * 0.4 * (-math.expm1(-k * 0.4)) / k
    assert enclosure.lower_bound_integral(sq, (1.0, 0.0), tau, p) == pytest.approx(exact, rel=1e-3)


def test_sweep_validation_and_csv(families):
    sc, fam = families[1.5]
    with pytest.raises(ValueError):
        enclosure.tau_sweep(sc, fam, (1.0, 0.0), 0.0, (12.0, 8.0))
    sweep = enclosure.tau_sweep(sc, fam, (1.0, 0.0), 0.0, (8.0,))
    assert enclosure.sweep_csv(sweep).splitlines()[0] == "rho_x,rho_y,t,tau,value,log_abs,sign"
