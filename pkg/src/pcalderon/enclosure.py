"""Enclosure method: indicator sampling, support-function estimation and hull assembly."""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dnmap, fem
from .geometry import Kind, Scenario, halfplane_intersection, support_function, unit_directions
from .mesh import Mesh, triangulate
from .wolff import CgoParams, WolffProfile, boundary_trace, integrate_wolff

log = logging.getLogger(__name__)

DEFAULT_TAUS = (8.0, 12.0, 16.0, 24.0, 32.0, 40.0)


class MeshResolutionExceeded(ValueError):
    pass


class RegimeNotReached(RuntimeError):
    pass


class MixedSigns(RuntimeError):
    pass


class Verdict(str, enum.Enum):
    EMPTY = "empty"
    INSULATING = "insulating"
    SUPERCONDUCTING = "superconducting"


@dataclass(frozen=True)
class IndicatorSample:
    rho: tuple
    t: float
    tau: float
    value: float
    log_abs: float
    sign: int
    p: float


@dataclass
class SupportEstimate:
    rho: tuple
    h_hat: float
    slope_stderr: float
    slope: float
    t_ref: float
    n_samples: int
    regime_flags: list = field(default_factory=list)


@dataclass
class ClassificationResult:
    verdict: Verdict
    notes: list = field(default_factory=list)


@dataclass
class HullEstimate:
    polygon: np.ndarray
    estimates: list
    dropped: list = field(default_factory=list)


class MeshFamily:
    """Meshes refined near the inclusions in proportion to the probing frequency.

    For frequency ``tau`` the triangles within ``band_factor / tau`` of the
    inclusions have size about ``fine_factor / tau``; the size then grows
    with slope ``grade`` up to ``h_max``.
    """

    def __init__(self, scenario: Scenario, h_max: float = 0.1, fine_factor: float = 0.35,
                 band_factor: float = 3.0, grade: float = 0.3, options: fem.SolverOptions | None = None,
                 cap: float = 0.5):
        self.scenario = scenario
        self.cap = cap
        self.h_max, self.fine_factor, self.band_factor, self.grade = h_max, fine_factor, band_factor, grade
        self.options = options
        self._meshes: dict = {}
        self._solvers: dict = {}

    def mesh_for(self, tau: float) -> Mesh:
        key = float(tau)
        if key not in self._meshes:
            if not self.scenario.inclusions:
                m = triangulate(self.scenario, self.h_max)
            else:
                # acute corners can leave the graded mesh slightly coarser than asked; shrink and retry
                fine = self.fine_factor
                for _ in range(6):
                    m = triangulate(self.scenario, self.h_max, h_fine=fine / tau,
                                    band=self.band_factor / tau, grade=self.grade)
                    if tau * m.resolved_h() <= self.cap:
                        break
                    fine *= 0.85
            self._meshes[key] = m
        return self._meshes[key]

    def solver_for(self, tau: float, p: float | None = None) -> dnmap.GapSolver:
        p = self.scenario.p if p is None else p
        key = (float(tau), float(p))
        if key not in self._solvers:
            self._solvers[key] = dnmap.GapSolver(self.scenario, self.mesh_for(tau), p=p, options=self.options)
        return self._solvers[key]


_PROFILES: dict = {}


def default_profile(p: float) -> WolffProfile:
    """Profile with initial condition (1, 0), cached per exponent."""
    if p not in _PROFILES:
        _PROFILES[p] = integrate_wolff(p, 1.0, 0.0)
    return _PROFILES[p]


def _check_resolution(mesh: Mesh, tau: float, cap: float = 0.5) -> None:
    if not mesh.kinds:
        return
    h = mesh.resolved_h()
    if tau * h > cap + 1e-12:
        raise MeshResolutionExceeded(f"tau * h = {tau * h:.3f} exceeds {cap} (tau = {tau}, h = {h:.4g}); refine the mesh")


def indicator(scenario: Scenario, mesh: Mesh, rho, t: float, tau: float, solver: dnmap.GapSolver | None = None,
              profile: WolffProfile | None = None, method: str = "reflected", cap: float = 0.5) -> IndicatorSample:
    """``tau^{2-p} <(Lambda_D - Lambda_0) f, f>`` for the probe with parameters ``(rho, t, tau)``.

    At p = 2 the probe is complex; the value is the sum of the gaps of its real
    and imaginary parts. Otherwise the probe is the real Wolff solution.
    """
    _check_resolution(mesh, tau, cap)
    p = float(scenario.p)
    solver = solver or dnmap.GapSolver(scenario, mesh)
    params = CgoParams(np.asarray(rho, dtype=float), float(tau), float(t))
    if p == 2.0:
        re, im = boundary_trace(params, None, mesh)
        shift = solver.inclusion_shift(re)
        g = solver.gap(re, method, shift) + solver.gap(im, method, shift)
    else:
        f = boundary_trace(params, profile or default_profile(p), mesh)
        g = solver.gap(f, method)
    log_abs = g.log_abs + (2.0 - p) * math.log(tau)
    value = 0.0 if g.sign == 0 else math.copysign(math.exp(log_abs), g.sign) if log_abs < 709 else \
        math.copysign(math.inf, g.sign)
    return IndicatorSample(tuple(params.rho), float(t), float(tau), value, log_abs, g.sign, p)


def tau_sweep(scenario: Scenario, family: MeshFamily, rho, t: float, tau_grid=DEFAULT_TAUS,
              method: str = "reflected") -> list[IndicatorSample]:
    taus = np.asarray(tau_grid, dtype=float)
    if np.any(np.diff(taus) <= 0):
        raise ValueError("tau grid must be increasing")
    out = []
    for tau in taus:
        s = indicator(scenario, family.mesh_for(tau), rho, t, tau, family.solver_for(tau), method=method)
        out.append(s)
    return out


def _fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares line; returns slope, intercept and slope standard error."""
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    n = len(x)
    if n > 2:
        resid = y - A @ coef
        s2 = float(resid @ resid) / (n - 2)
        se = math.sqrt(s2 / float(((x - x.mean()) ** 2).sum()))
    else:
        se = 0.0
    return float(coef[0]), float(coef[1]), se


def estimate_support(sweep, t_ref: float, top: int | None = None, rel_tol: float = 0.1) -> SupportEstimate:
    """Support value from the growth rate of ``log|I|`` in ``p tau``.

    The fit uses the largest ``top`` frequencies (default: the upper half, at
    least four). It is rejected when that slope differs from the full-grid
    slope by more than ``rel_tol`` of its size.
    """
    samples = [s for s in sweep if np.isfinite(s.log_abs)]
    if len(samples) < 4:
        raise RegimeNotReached(f"only {len(samples)} usable samples (need 4)")
    samples.sort(key=lambda s: s.tau)
    p = samples[0].p
    x = np.array([p * s.tau for s in samples])
    y = np.array([s.log_abs for s in samples])
    top = max(4, math.ceil(len(samples) / 2)) if top is None else top
    slope, _, se = _fit(x[-top:], y[-top:])
    slope_full, _, _ = _fit(x, y)
    flags = ["growth" if slope > 0 else "decay"] * len(samples)
    rho = samples[0].rho
    if abs(slope - slope_full) > rel_tol * abs(slope):
        raise RegimeNotReached(
            f"slope {slope:.4f} over the top {top} frequencies differs from {slope_full:.4f} over all of them")
    # t is encoded in the samples themselves; the estimate is relative to it
    t = samples[0].t
    if any(abs(s.t - t) > 1e-15 for s in samples):
        raise ValueError("sweep mixes different levels t")
    return SupportEstimate(rho, t + slope, se, slope, t_ref, len(samples), flags)


def domain_support(scenario: Scenario, rho) -> float:
    return float(scenario.domain.support(np.asarray(rho, dtype=float)))


def classify(scenario: Scenario, family: MeshFamily, directions=8, tau_grid=(8.0, 16.0),
             method: str = "reflected", rel_zero: float = 1e-12) -> ClassificationResult:
    """Material verdict from the sign of indicators in the growth regime.

    The level is put on the far side of the domain, ``t = -h_Omega(-rho)``, so
    that every hyperplane lies below any inclusion and the indicator grows.
    """
    rhos = unit_directions(directions) if np.isscalar(directions) else np.asarray(directions, float)
    signs = set()
    notes = []
    for rho in rhos:
        t = -domain_support(scenario, -rho)
        for tau in tau_grid:
            s = indicator(scenario, family.mesh_for(tau), rho, t, tau, family.solver_for(tau), method=method)
            if s.sign == 0:
                continue
            signs.add(s.sign)
    if not signs:
        notes.append("all indicators vanish")
        return ClassificationResult(Verdict.EMPTY, notes)
    if len(signs) > 1:
        raise MixedSigns("indicators of both signs: insulating and superconducting inclusions together?")
    verdict = Verdict.SUPERCONDUCTING if signs.pop() > 0 else Verdict.INSULATING
    return ClassificationResult(verdict, notes)


def _direction_job(args):
    scenario, family, rho, tau_grid, method, noise, seed = args
    t_ref = domain_support(scenario, rho)
    sweep = tau_sweep(scenario, family, rho, t_ref, tau_grid, method)
    if noise:
        rng = np.random.default_rng(seed)
        sweep = [IndicatorSample(s.rho, s.t, s.tau, s.value * (1 + noise * rng.standard_normal()),
                                 s.log_abs + math.log(abs(1 + noise * rng.standard_normal())), s.sign, s.p)
                 for s in sweep]
    return estimate_support(sweep, t_ref)


def reconstruct_hull(scenario: Scenario, family: MeshFamily | None = None, direction_count: int = 32,
                     tau_grid=DEFAULT_TAUS, method: str = "reflected", workers: int = 1, noise: float = 0.0,
                     seed: int = 0, clip: bool = True) -> HullEstimate:
    """Per-direction support estimates intersected into a convex polygon.

    Each direction probes at the level of the domain's own support value.
    Directions whose regression is unstable are dropped and listed.
    """
    family = family or MeshFamily(scenario)
    rhos = unit_directions(direction_count)
    # meshes and factorisations are built once, before any parallel work
    for tau in tau_grid:
        family.solver_for(tau)
    jobs = [(scenario, family, rho, tuple(tau_grid), method, noise, seed + k) for k, rho in enumerate(rhos)]
    results = []
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            futures = [ex.submit(_safe_job, j) for j in jobs]
            results = [f.result() for f in futures]
    else:
        results = [_safe_job(j) for j in jobs]
    estimates, dropped = [], []
    for rho, r in zip(rhos, results):
        if isinstance(r, SupportEstimate):
            estimates.append(r)
        else:
            dropped.append((tuple(rho), r))
            log.warning("direction (%.3f, %.3f) dropped: %s", rho[0], rho[1], r)
    samples = [(np.asarray(e.rho), e.h_hat) for e in estimates]
    bbox = scenario.domain.bbox()
    poly = halfplane_intersection(samples, bbox=bbox, clip=clip) if len(samples) >= 3 else np.zeros((0, 2))
    return HullEstimate(poly, estimates, dropped)


def _safe_job(job):
    try:
        return _direction_job(job)
    except RegimeNotReached as exc:
        return str(exc)


def true_support(scenario: Scenario, rho) -> float:
    return float(support_function([c.shape for c in scenario.inclusions], np.asarray(rho, float)))


def lower_bound_integral(shape, rho, tau: float, p: float, n: int = 400) -> float:
    """``tau^2 int_D exp(-p tau (h_D(rho) - x.rho)) dx`` by tensor quadrature in rotated coordinates."""
    rho = np.asarray(rho, dtype=float) / np.linalg.norm(rho)
    perp = np.array([-rho[1], rho[0]])
    h = float(shape.support(rho))
    lo = -float(shape.support(-rho))
    wmin, wmax = -float(shape.support(-perp)), float(shape.support(perp))
    # Gauss-Legendre in the depth variable with a mapping that clusters at the top
    g, wg = np.polynomial.legendre.leggauss(n)
    depth_max = h - lo
    # substitution d = -log(1 - u (1 - exp(-k L))) / k concentrates nodes near d = 0
    k = p * tau
    u = 0.5 * (g + 1)
    scale = -math.expm1(-k * depth_max)
    d = -np.log1p(-u * scale) / k
    jac = scale / (k * (1 - u * scale)) * 0.5
    xs, ws = np.polynomial.legendre.leggauss(n)
    total = 0.0
    for di, wi, ji in zip(d, wg, jac):
        along = 0.5 * (xs + 1) * (wmax - wmin) + wmin
        pts = (h - di) * rho[None, :] + along[:, None] * perp[None, :]
        inside = shape.contains(pts)
        length = 0.5 * (wmax - wmin) * float(ws @ inside)
        total += wi * ji * math.exp(-k * di) * length
    return tau**2 * total


def hull_csv(hull: HullEstimate) -> str:
    lines = ["rho_x,rho_y,h_hat,stderr,n_samples,regime"]
    for e in hull.estimates:
        regime = "growth" if e.slope > 0 else "decay"
        lines.append(f"{e.rho[0]:.12g},{e.rho[1]:.12g},{e.h_hat:.12g},{e.slope_stderr:.6g},{e.n_samples},{regime}")
    for rho, reason in hull.dropped:
        lines.append(f"{rho[0]:.12g},{rho[1]:.12g},nan,nan,0,dropped")
    return "\n".join(lines) + "\n"


def sweep_csv(sweep) -> str:
    lines = ["rho_x,rho_y,t,tau,value,log_abs,sign"]
    for s in sweep:
        lines.append(f"{s.rho[0]:.12g},{s.rho[1]:.12g},{s.t:.12g},{s.tau:.12g},{s.value:.15g},{s.log_abs:.15g},{s.sign}")
    return "\n".join(lines) + "\n"
