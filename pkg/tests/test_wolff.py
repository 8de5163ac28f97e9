import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from pcalderon import wolff
from pcalderon.geometry import BadExponent


def ivp_period(p, a0=1.0, b0=0.0):
    """Independent route: adaptive RK45 with an event on the ray through the start."""
    def rhs(_, y):
        return [y[1], -wolff.potential(y[0], y[1], p) * y[0]]

    # orbits run clockwise, so the ray theta = 0 is re-crossed moving downward in dw
    def crossing(_, y):
        return y[1]
    crossing.direction = -1
    sol = solve_ivp(rhs, (0, 40), [a0, b0], events=crossing, rtol=1e-12, atol=1e-13)
    hits = [t for t, y in zip(sol.t_events[0], sol.y_events[0]) if y[0] > 0 and t > 1e-6]
    return hits[0]


@pytest.fixture(scope="module")
def profile3():
    return wolff.integrate_wolff(3.0)


def test_p2_profile_is_cosine():
    prof = wolff.integrate_wolff(2.0)
    assert prof.period == pytest.approx(2 * math.pi, rel=1e-12)
    assert np.max(np.abs(prof.w - np.cos(prof.s))) < 1e-10


@pytest.mark.parametrize("p", [1.5, 2.5, 3.0, 4.0, 6.0])
def test_period_two_routes(p):
    prof = wolff.integrate_wolff(p)
    assert prof.period == pytest.approx(ivp_period(p), rel=1e-8)
    assert prof.period == pytest.approx(math.pi * p / (p - 1), rel=1e-9)
    assert prof.closure_error < 1e-9


def test_period_is_amplitude_independent():
    assert wolff.integrate_wolff(3.0, a0=0.2).period == pytest.approx(wolff.integrate_wolff(3.0, a0=5.0).period, rel=1e-10)


def test_step_halving_converges():
    coarse = wolff.integrate_wolff(3.0, steps_per_period=400)
    fine = wolff.integrate_wolff(3.0, steps_per_period=800)
    exact = 1.5 * math.pi
    e1, e2 = abs(coarse.period - exact), abs(fine.period - exact)
    assert e2 <= e1 + 1e-13
    assert e2 < 1e-9


def test_profile_derivative_matches_finite_difference(profile3):
    s = np.linspace(0.1, 4.0, 17)
    d = 1e-5
    fd = (profile3(s + d) - profile3(s - d)) / (2 * d)
    assert np.max(np.abs(fd - profile3.derivative(s))) < 1e-7


def test_profile_is_periodic(profile3):
    s = np.linspace(0, 3, 11)
    assert np.allclose(profile3(s), profile3(s + profile3.period), atol=1e-12)


def test_phase_radius_stays_away_from_origin(profile3):
    lo, hi = profile3.phase_bounds()
    assert 0 < lo <= 1.0 <= hi + 1e-12


def test_mean_over_period_is_small_relative_to_amplitude(profile3):
    # odd symmetry about the quarter period makes the mean vanish
    assert abs(wolff.mean_over_period(profile3)) < 1e-10 * profile3.amplitude


@pytest.mark.parametrize("p", [1.6, 3.0])
def test_product_solution_is_p_harmonic(p):
    prof = wolff.integrate_wolff(p, steps_per_period=4000)
    params = wolff.CgoParams(rho=[np.cos(0.3), np.sin(0.3)], tau=2.0)
    x0 = np.array([[0.11, -0.23], [0.4, 0.05], [-0.3, 0.2]])
    h = 1e-3

    def flux(x):
        g = wolff.wolff_grad(x, params, prof)
        return np.linalg.norm(g, axis=-1)[..., None] ** (p - 2) * g

    div = np.zeros(len(x0))
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        div += (flux(x0 + e)[:, k] - flux(x0 - e)[:, k]) / (2 * h)
    scale = np.linalg.norm(flux(x0), axis=-1) * params.tau
    assert np.max(np.abs(div) / scale) < 1e-4


def test_cgo_p2_is_harmonic():
    params = wolff.CgoParams(rho=[1.0, 1.0], tau=3.0, t=0.2)
    x = np.array([[0.1, 0.2], [-0.4, 0.3]])
    h = 1e-3
    for part in (0, 1):
        u = lambda y: wolff.cgo_p2(y, params)[part]
        lap = sum(u(x + d) + u(x - d) - 2 * u(x) for d in (np.array([h, 0]), np.array([0, h]))) / h**2
        assert np.max(np.abs(lap) / np.abs(u(x)).max()) < 1e-4


@given(st.floats(0.0, 2 * np.pi), st.floats(0.5, 30.0), st.floats(-1.0, 1.0))
def test_shift_scales_the_field(angle, tau, shift):
    params = wolff.CgoParams(rho=[np.cos(angle), np.sin(angle)], tau=tau)
    x = np.array([[0.3, -0.2], [0.0, 0.5]])
    a = wolff.cgo_p2(x, params)[0]
    b = wolff.cgo_p2(x, params, shift=shift)[0]
    assert np.allclose(b, a * np.exp(-shift), rtol=1e-12, atol=0)


def test_overflow_guard():
    params = wolff.CgoParams(rho=[1.0, 0.0], tau=1000.0)
    with pytest.raises(wolff.OverflowGuard):
        wolff.cgo_p2(np.array([[0.9, 0.0]]), params)
    re, _ = wolff.cgo_p2(np.array([[0.9, 0.0]]), params, shift=900.0)
    assert np.isfinite(re).all()


def test_params_validation():
    with pytest.raises(ValueError):
        wolff.CgoParams(rho=[0.0, 0.0], tau=1.0)
    with pytest.raises(ValueError):
        wolff.CgoParams(rho=[1.0, 0.0], tau=-1.0)
    with pytest.raises(ValueError):
        wolff.CgoParams(rho=[1.0, 0.0], tau=1.0, rho_perp=[1.0, 0.0])
    p = wolff.CgoParams(rho=[3.0, 4.0], tau=1.0)
    assert np.allclose(p.rho, [0.6, 0.8]) and abs(p.rho @ p.rho_perp) < 1e-15


def test_bad_inputs():
    with pytest.raises(BadExponent):
        wolff.integrate_wolff(1.0)
    with pytest.raises(ValueError):
        wolff.integrate_wolff(3.0, a0=0.0, b0=0.0)


def test_profile_csv(profile3):
    text = wolff.profile_csv(profile3)
    lines = text.splitlines()
    assert lines[0] == "s,w,dw" and len(lines) == len(profile3.s) + 1
