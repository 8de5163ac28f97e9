"""Exponentially growing probe solutions.

For p = 2 these are the real and imaginary parts of ``exp(tau (x.rho + i x.rho_perp - t))``.
For general p the oscillating factor is a periodic solution ``w`` of the
autonomous ODE ``w'' + V(w, w') w = 0``, giving the p-harmonic function
``exp(tau (x.rho - t)) w(tau x.rho_perp)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .geometry import BadExponent

_EXP_LIMIT = 700.0


class PeriodNotFound(RuntimeError):
    pass


class OriginApproach(RuntimeError):
    pass


class OverflowGuard(OverflowError):
    pass


def potential(w, dw, p: float):
    """Coefficient ``V(w, w')`` of the profile equation."""
    return ((2 * p - 3) * dw**2 + (p - 1) * w**2) / ((p - 1) * dw**2 + w**2)


def _rhs(y: np.ndarray, p: float) -> np.ndarray:
    w, dw = y
    return np.array([dw, -potential(w, dw, p) * w])


def _rk4(y0: np.ndarray, h: float, n: int, p: float, origin_tol: float) -> np.ndarray:
    out = np.empty((n + 1, 2))
    y = np.array(y0, dtype=float)
    out[0] = y
    for k in range(n):
        k1 = _rhs(y, p)
        k2 = _rhs(y + 0.5 * h * k1, p)
        k3 = _rhs(y + 0.5 * h * k2, p)
        k4 = _rhs(y + h * k3, p)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if y[0] * y[0] + y[1] * y[1] < origin_tol:
            raise OriginApproach(f"phase point came within {math.sqrt(origin_tol):.1e} of the origin")
        out[k + 1] = y
    return out


def _winding(traj: np.ndarray) -> np.ndarray:
    """Unwrapped phase angle, relative to the start (decreasing: orbits run clockwise)."""
    ang = np.unwrap(np.arctan2(traj[:, 1], traj[:, 0]))
    return ang - ang[0]


@dataclass(frozen=True)
class WolffProfile:
    """One period of the profile ``w`` on a uniform grid ``s_k = k * step``."""

    p: float
    a0: float
    b0: float
    step: float
    s: np.ndarray
    w: np.ndarray
    dw: np.ndarray
    period: float
    _splines: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if not self._splines:
            ddw = -potential(self.w, self.dw, self.p) * self.w
            object.__setattr__(self, "_splines", (
                CubicHermiteSpline(self.s, self.w, self.dw),
                CubicHermiteSpline(self.s, self.dw, ddw),
            ))

    @property
    def closure_error(self) -> float:
        return abs(self.w[-1] - self.a0) + abs(self.dw[-1] - self.b0)

    def _wrap(self, s):
        return np.mod(np.asarray(s, dtype=float), self.period)

    def __call__(self, s):
        return self._splines[0](self._wrap(s))

    def derivative(self, s):
        return self._splines[1](self._wrap(s))

    def phase_bounds(self) -> tuple[float, float]:
        r2 = self.w**2 + self.dw**2
        return float(r2.min()), float(r2.max())

    @property
    def amplitude(self) -> float:
        return float(np.max(np.abs(self.w)))


def integrate_wolff(p: float, a0: float = 1.0, b0: float = 0.0, step: float | None = None,
                    steps_per_period: int = 2000, horizon: float = 20.0, origin_tol: float = 1e-12) -> WolffProfile:
    """Integrate the profile equation over exactly one period with classical RK4.

    The period is located as the first time the unwrapped phase angle has
    turned by a full clockwise revolution (a crossing of the ray through
    ``(a0, b0)`` in the original direction), then refined by a secant iteration
    so that an integer number of equal steps closes the orbit. ``step`` fixes
    the step of the search run; the final grid has ``steps_per_period`` steps
    (or about ``period / step`` when ``step`` is given).
    """
    if not (p > 1 and math.isfinite(p)):
        raise BadExponent(f"exponent p must lie in (1, inf), got {p}")
    if a0 == 0.0 and b0 == 0.0:
        raise ValueError("initial condition (0, 0) gives the trivial solution")
    y0 = np.array([a0, b0], dtype=float)
    r0 = float(y0 @ y0)
    tol = origin_tol * r0
    h = step if step is not None else 2 * math.pi / steps_per_period
    n_max = int(math.ceil(horizon * 2 * math.pi / h))
    chunk = int(math.ceil(2 * math.pi / h))
    traj = y0[None, :]
    while True:
        traj = np.vstack([traj, _rk4(traj[-1], h, chunk, p, tol)[1:]])
        turn = _winding(traj)
        hit = np.flatnonzero(turn <= -2 * math.pi)
        if len(hit):
            break
        if len(traj) > n_max:
            raise PeriodNotFound(f"no full revolution within s <= {n_max * h:.3g}")
    k = hit[0]
    # linear interpolation of the winding angle between steps k-1 and k
    frac = (-2 * math.pi - turn[k - 1]) / (turn[k] - turn[k - 1])
    period = (k - 1 + frac) * h

    n = steps_per_period if step is None else max(int(round(period / step)), 16)
    for _ in range(8):
        traj = _rk4(y0, period / n, n, p, tol)
        miss = _winding(traj)[-1] + 2 * math.pi
        rate = -(p - 1) * float(traj[-1] @ traj[-1]) / ((p - 1) * traj[-1, 1] ** 2 + traj[-1, 0] ** 2)
        correction = -miss / rate
        period += correction
        if abs(correction) < 1e-14 * period:
            break
    traj = _rk4(y0, period / n, n, p, tol)
    s = np.linspace(0.0, period, n + 1)
    return WolffProfile(float(p), float(a0), float(b0), period / n, s, traj[:, 0], traj[:, 1], float(period))


def mean_over_period(profile: WolffProfile) -> float:
    """Mean of ``w`` over one period (trapezoid rule, spectrally accurate for periodic data)."""
    w = profile.w
    return float((w[:-1].sum() + 0.5 * (w[-1] - w[0])) / (len(w) - 1))


@dataclass(frozen=True)
class CgoParams:
    """Direction of growth ``rho``, oscillation direction ``rho_perp``, frequency and level."""

    rho: np.ndarray
    tau: float
    t: float = 0.0
    rho_perp: np.ndarray | None = None

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float)
        n = float(np.linalg.norm(rho))
        if n == 0:
            raise ValueError("rho must be nonzero")
        rho = rho / n
        perp = np.array([-rho[1], rho[0]]) if self.rho_perp is None else np.asarray(self.rho_perp, dtype=float)
        if abs(np.linalg.norm(perp) - 1) > 1e-12 or abs(float(rho @ perp)) > 1e-14:
            raise ValueError("rho_perp must be a unit vector orthogonal to rho")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError("tau must be positive")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "rho_perp", perp)

    def exponent(self, x: np.ndarray) -> np.ndarray:
        return self.tau * (np.asarray(x, dtype=float) @ self.rho - self.t)

    def phase(self, x: np.ndarray) -> np.ndarray:
        return self.tau * (np.asarray(x, dtype=float) @ self.rho_perp)

    def with_t(self, t: float) -> "CgoParams":
        return CgoParams(self.rho, self.tau, t, self.rho_perp)


def _envelope(params: CgoParams, x, shift: float) -> np.ndarray:
    e = params.exponent(x) - shift
    if np.max(e, initial=-np.inf) > _EXP_LIMIT:
        raise OverflowGuard("exponent exceeds the double range; evaluate with a shift")
    return np.exp(e)


def cgo_p2(x, params: CgoParams, shift: float = 0.0):
    """Real and imaginary parts of the harmonic complex exponential, times ``exp(-shift)``."""
    env = _envelope(params, x, shift)
    ph = params.phase(x)
    return env * np.cos(ph), env * np.sin(ph)


def wolff_eval(x, params: CgoParams, profile: WolffProfile, shift: float = 0.0):
    return _envelope(params, x, shift) * profile(params.phase(x))


def wolff_grad(x, params: CgoParams, profile: WolffProfile, shift: float = 0.0):
    env = params.tau * _envelope(params, x, shift)
    ph = params.phase(x)
    w, dw = profile(ph), profile.derivative(ph)
    return env[..., None] * (np.multiply.outer(w, params.rho) + np.multiply.outer(dw, params.rho_perp))


@dataclass(frozen=True)
class WolffField:
    """Closed-form free solution usable as the analytic descriptor of boundary data."""

    params: CgoParams
    profile: WolffProfile | None = None  # None: p = 2 complex exponential
    part: str = "re"

    def log_envelope(self, points):
        return self.params.exponent(points)

    def evaluate(self, points, shift=0.0):
        if self.profile is None:
            re, im = cgo_p2(points, self.params, shift)
            return re if self.part == "re" else im
        return wolff_eval(points, self.params, self.profile, shift)


def boundary_trace(params: CgoParams, profile: WolffProfile | None, mesh):
    """Boundary data of the probe at the outer nodes.

    With ``profile=None`` (p = 2) returns the pair (real part, imaginary part).
    """
    from .dnmap import BoundaryData

    if profile is None:
        return (BoundaryData.from_field(mesh, WolffField(params, None, "re"), "cgo-re"),
                BoundaryData.from_field(mesh, WolffField(params, None, "im"), "cgo-im"))
    return BoundaryData.from_field(mesh, WolffField(params, profile), "wolff")


def profile_csv(profile: WolffProfile) -> str:
    lines = ["s,w,dw"]
    for s, w, dw in zip(profile.s, profile.w, profile.dw):
        lines.append(f"{s:.15g},{w:.15g},{dw:.15g}")
    return "\n".join(lines) + "\n"
