"""Needle probing of superconducting inclusions at p = 2.

A needle is a polyline crossing the domain. For a point ``y`` on it the
fundamental solution with pole ``y`` is approximated, away from a thin tube
around the traversed part of the needle, by combinations of fundamental
solutions with poles outside the domain. Their traces are Dirichlet data whose
gap against the inclusion-free map stays moderate until ``y`` reaches the
inclusion and grows without bound afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .dnmap import BoundaryData, GapSolver
from .geometry import Circle, Scenario

TWO_PI = 2 * math.pi


class CoincidentPoints(ValueError):
    pass


class FitDegenerate(RuntimeError):
    def __init__(self, msg: str, residuals=()):
        super().__init__(msg)
        self.residuals = list(residuals)


class ProbeUnsupported(ValueError):
    pass


def default_scale(domain) -> float:
    x0, y0, x1, y1 = domain.bbox()
    return 4.0 * math.hypot(x1 - x0, y1 - y0)


def fundamental_solution(x, y, r: float = 1.0) -> np.ndarray:
    """``(1/2pi) log(r / |x - y|)``, broadcasting over leading axes."""
    diff = np.asarray(x, float) - np.asarray(y, float)
    d2 = diff[..., 0] ** 2 + diff[..., 1] ** 2
    if np.any(d2 == 0):
        raise CoincidentPoints("evaluation point coincides with the pole")
    return (math.log(r) - 0.5 * np.log(d2)) / TWO_PI


def fundamental_gradient(x, y) -> np.ndarray:
    """Gradient in ``x``: ``-(x - y) / (2pi |x - y|^2)``."""
    diff = np.asarray(x, float) - np.asarray(y, float)
    d2 = diff[..., 0] ** 2 + diff[..., 1] ** 2
    if np.any(d2 == 0):
        raise CoincidentPoints("evaluation point coincides with the pole")
    return -diff / (TWO_PI * d2[..., None])


# ---------------------------------------------------------------------------
# needles


@dataclass(frozen=True)
class Needle:
    """Polyline from one boundary point of the domain to another, parametrised by normalised arclength.

    ``tube_radius`` is the clearance around the needle tip excluded from the
    Runge fit at sequence index 1; ``taper`` (radians) widens the excluded
    region linearly back towards the entry point.
    """

    vertices: np.ndarray
    tube_radius: float = 0.4
    ident: int = 0
    taper: float = math.radians(55.0)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 2:
            raise ValueError("needle needs at least two vertices")
        seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
        if np.any(seg <= 0):
            raise ValueError("needle has a zero-length segment")
        if not (self.tube_radius > 0 and 0 <= self.taper < math.pi / 2):
            raise ValueError("tube radius must be positive and taper in [0, pi/2)")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(seg)]))

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    @property
    def entry(self) -> np.ndarray:
        return self.vertices[0]

    @property
    def entry_direction(self) -> np.ndarray:
        d = self.vertices[1] - self.vertices[0]
        return d / np.linalg.norm(d)

    def point(self, t) -> np.ndarray:
        s = np.asarray(t, dtype=float) * self.length
        x = np.interp(s, self._cum, self.vertices[:, 0])
        y = np.interp(s, self._cum, self.vertices[:, 1])
        return np.stack([x, y], axis=-1)

    def path(self, t: float) -> np.ndarray:
        """Vertices of the traversed part ``gamma([0, t])``."""
        s = t * self.length
        k = int(np.searchsorted(self._cum, s, side="right"))
        return np.vstack([self.vertices[:k], self.point(t)[None]])

    def distance_to_path(self, pts: np.ndarray, t: float) -> np.ndarray:
        return self._path_geometry(pts, t)[0]

    def _path_geometry(self, pts: np.ndarray, t: float):
        """Distance to ``gamma([0, t])`` and arclength of the nearest path point."""
        path = self.path(t)
        d = np.full(len(pts), np.inf)
        s_near = np.zeros(len(pts))
        s0 = 0.0
        for a, b in zip(path[:-1], path[1:]):
            ab = b - a
            L = float(np.linalg.norm(ab))
            if L == 0:
                continue
            lam = np.clip(((pts - a) @ ab) / (L * L), 0.0, 1.0)
            dist = np.linalg.norm(pts - (a + lam[:, None] * ab), axis=1)
            better = dist < d
            d[better] = dist[better]
            s_near[better] = s0 + lam[better] * L
            s0 += L
        return d, s_near

    def excluded(self, pts: np.ndarray, t: float, k: int = 1) -> np.ndarray:
        """Points inside the tapered tube around ``gamma([0, t])`` at sequence index ``k``."""
        d, s = self._path_geometry(pts, t)
        radius = self.tube_radius / k + (t * self.length - s) * math.tan(self.taper)
        return d <= radius

    def validate(self, domain, tol: float = 1e-10) -> None:
        ends = self.vertices[[0, -1]]
        if np.max(domain.boundary_distance(ends)) > tol:
            raise ValueError("needle endpoints must lie on the outer boundary")
        inner = self.point(np.linspace(0, 1, 201)[1:-1])
        if not np.all(domain.contains(inner)) or np.min(domain.boundary_distance(inner)) <= 0:
            raise ValueError("needle interior must lie strictly inside the domain")

    @classmethod
    def chord(cls, domain, start, direction, tube_radius: float = 0.4, ident: int = 0,
              taper: float = math.radians(55.0)) -> "Needle":
        """Straight chord from the boundary point ``start`` along ``direction`` to the exit point."""
        a = np.asarray(start, dtype=float)
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        if isinstance(domain, Circle):
            c = np.asarray(domain.center, float)
            rel = a - c
            # far root of |rel + s d| = R
            b = float(rel @ d)
            disc = b * b - (float(rel @ rel) - domain.radius**2)
            end = a + (-b + math.sqrt(max(disc, 0.0))) * d
        else:
            from shapely.geometry import LineString

            far = a + d * 4 * default_scale(domain)
            hit = LineString([a + 1e-9 * d, far]).intersection(domain.to_shapely().exterior)
            pts = np.array([g.coords[0] for g in getattr(hit, "geoms", [hit])])
            end = pts[np.argmin(np.linalg.norm(pts - a, axis=1))]
        return cls(np.vstack([a, end]), tube_radius, ident, taper)


def chord_fan(domain, count: int, tube_radius: float = 0.4, offset: float = 0.0,
              taper: float = math.radians(55.0)) -> list[Needle]:
    """Chords through the domain centre entering at equally spaced boundary angles."""
    x0, y0, x1, y1 = domain.bbox()
    centre = np.array([0.5 * (x0 + x1), 0.5 * (y0 + y1)])
    out = []
    for i in range(count):
        th = offset + TWO_PI * i / count
        u = np.array([math.cos(th), math.sin(th)])
        if isinstance(domain, Circle):
            start = np.asarray(domain.center, float) + domain.radius * u
        else:
            start = Needle.chord(domain, centre, u).vertices[-1]
        out.append(Needle.chord(domain, start, centre - start, tube_radius, i, taper))
    return out


# ---------------------------------------------------------------------------
# Runge approximation


@dataclass
class RungeApproximant:
    """``v(x) = c0 + sum_j c_j Phi(x - z_j)``, harmonic in the domain."""

    poles: np.ndarray
    coefficients: np.ndarray
    constant: float
    target: np.ndarray
    residual: float
    r: float
    k: int = 1

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        return self.constant + fundamental_solution(x[:, None, :], self.poles[None], self.r) @ self.coefficients

    def gradient(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        g = fundamental_gradient(x[:, None, :], self.poles[None])
        return np.einsum("mjd,j->md", g, self.coefficients)

    # analytic-field interface used by the gap solver
    def log_envelope(self, points):
        return np.zeros(len(points))

    def evaluate(self, points, shift: float = 0.0):
        return self(points) * math.exp(-shift)


def pole_layout(domain, needle: Needle, k: int, per_ring: int = 24, first: float = 0.5, ratio: float = 0.6,
                push: float = 0.01, margin: float = 0.005) -> np.ndarray:
    """The first ``8 k`` poles of a fixed sequence clustering geometrically towards the entry point.

    Ring ``m`` has radius ``first * ratio**m`` (relative to the domain
    diameter) around a centre pushed ``push`` outside the entry point; only
    positions at least ``margin`` outside the closed domain are kept. Pole sets
    are nested in ``k``.
    """
    diam = 0.25 * default_scale(domain)
    outward = -needle.entry_direction
    centre = needle.entry + push * diam * outward
    a0 = math.atan2(outward[1], outward[0])
    want = 8 * k
    poles = []
    m = 0
    while len(poles) < want:
        rad = first * diam * ratio**m
        if rad < 1e-6 * diam:
            raise FitDegenerate(f"cannot place {want} poles outside the domain near the entry point")
        ang = a0 + 0.95 * math.pi * (2 * (np.arange(per_ring) + 0.5) / per_ring - 1)
        ring = centre + rad * np.column_stack([np.cos(ang), np.sin(ang)])
        ok = ~domain.contains(ring) & (domain.boundary_distance(ring) >= margin * diam)
        poles.extend(ring[ok])
        m += 1
    return np.array(poles[:want])


@dataclass(frozen=True)
class CollocationSet:
    points: np.ndarray
    weights: np.ndarray


def collocation_grid(domain, spacing: float = 0.03) -> CollocationSet:
    x0, y0, x1, y1 = domain.bbox()
    xs = np.arange(x0 + 0.5 * spacing, x1, spacing)
    ys = np.arange(y0 + 0.5 * spacing, y1, spacing)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    pts = pts[domain.contains(pts)]
    return CollocationSet(pts, np.full(len(pts), spacing * spacing))


class RungeBasis:
    """Exterior-pole basis for one needle and sequence index, tabulated on a collocation set.

    The weighted value and gradient rows of every basis function are computed
    once; each fit only selects the rows outside the current tube.
    """

    def __init__(self, domain, needle: Needle, k: int, colloc: CollocationSet | None = None,
                 r: float | None = None, poles: np.ndarray | None = None, **layout):
        if k < 1:
            raise ValueError("k must be at least 1")
        self.domain, self.needle, self.k = domain, needle, k
        self.r = default_scale(domain) if r is None else r
        self.colloc = colloc or collocation_grid(domain)
        z = pole_layout(domain, needle, k, **layout) if poles is None else np.atleast_2d(np.asarray(poles, float))
        if np.any(domain.contains(z)):
            raise ValueError("Runge poles must lie outside the closed domain")
        self.poles = z
        pts = self.colloc.points
        w = np.sqrt(self.colloc.weights)[:, None]
        g = fundamental_gradient(pts[:, None, :], z[None])
        n = len(pts)
        self._val = np.column_stack([fundamental_solution(pts[:, None, :], z[None], self.r), np.ones(n)]) * w
        self._gx = np.column_stack([g[..., 0], np.zeros(n)]) * w
        self._gy = np.column_stack([g[..., 1], np.zeros(n)]) * w

    def fit(self, t: float, target=None, exclusion_k: int | None = None) -> RungeApproximant:
        if not 0 < t < 1:
            raise ValueError("t must lie in (0, 1)")
        y = self.needle.point(t) if target is None else np.asarray(target, dtype=float)
        keep = ~self.needle.excluded(self.colloc.points, t, exclusion_k or self.k)
        pts = self.colloc.points[keep]
        w = np.sqrt(self.colloc.weights[keep])
        A = np.vstack([self._val[keep], self._gx[keep], self._gy[keep]])
        bg = fundamental_gradient(pts, y)
        b = np.concatenate([fundamental_solution(pts, y, self.r) * w, bg[:, 0] * w, bg[:, 1] * w])
        scale = np.linalg.norm(A, axis=0)
        scale[scale == 0] = 1.0
        sol, *_ = sla.lstsq(A / scale, b, cond=1e-15, lapack_driver="gelsd", check_finite=False)
        sol = sol / scale
        res = float(np.linalg.norm(A @ sol - b) / np.linalg.norm(b))
        return RungeApproximant(self.poles, sol[:-1], float(sol[-1]), y, res, self.r, self.k)


def build_runge_sequence(domain, needle: Needle, t: float, k: int, colloc: CollocationSet | None = None,
                         r: float | None = None, poles: np.ndarray | None = None, target=None,
                         exclusion_k: int | None = None, **layout) -> RungeApproximant:
    """``k``-th least-squares fit, in a discrete H1 norm, of the fundamental solution with pole ``gamma(t)``.

    The fit uses ``8 k`` exterior poles and the collocation points outside the
    tapered tube of tip radius ``tube_radius / k`` around ``gamma([0, t])``
    (``exclusion_k`` overrides the index used for the tube). The stored
    residual is relative to the discrete H1 norm of the target.
    """
    if not 0 < t < 1:
        raise ValueError("t must lie in (0, 1)")
    return RungeBasis(domain, needle, k, colloc, r, poles, **layout).fit(t, target, exclusion_k)


def runge_residuals(domain, needle: Needle, t: float, ks=range(1, 6), colloc=None, strict: bool = True) -> list[float]:
    """Residuals of the nested pole sets on one collocation set (the tube of the largest ``k``).

    Raises :class:`FitDegenerate` when the residual increases with ``k``.
    """
    ks = sorted(ks)
    colloc = colloc or collocation_grid(domain)
    res = [build_runge_sequence(domain, needle, t, k, colloc, exclusion_k=ks[-1]).residual for k in ks]
    if strict and any(b > a * (1 + 1e-9) + 1e-14 for a, b in zip(res, res[1:])):
        raise FitDegenerate("Runge residual increased with k", res)
    return res


# ---------------------------------------------------------------------------
# indicator and hitting time


def _check_scenario(scenario: Scenario) -> None:
    if scenario.p != 2.0:
        raise ProbeUnsupported("the probe indicator is defined for p = 2 only")
    if scenario.has_insulators:
        raise ProbeUnsupported("the probe indicator is implemented for superconducting inclusions only")


def runge_datum(mesh, approximant: RungeApproximant) -> BoundaryData:
    """Trace of the approximant on the outer nodes, carrying it as the free solution."""
    return BoundaryData.from_field(mesh, approximant, "runge")


def probe_indicator(scenario: Scenario, mesh, needle: Needle, t: float, k: int, solver: GapSolver | None = None,
                    colloc: CollocationSet | None = None, basis: RungeBasis | None = None) -> float:
    """Gap of the ``k``-th Runge datum for the pole ``gamma(t)``."""
    _check_scenario(scenario)
    solver = solver or GapSolver(scenario, mesh)
    basis = basis or RungeBasis(scenario.domain, needle, k, colloc)
    return solver.gap(runge_datum(mesh, basis.fit(t))).value


@dataclass
class HitEstimate:
    t_hat: float
    hit: bool
    t_values: np.ndarray
    indicator: np.ndarray
    threshold: float
    needle: Needle | None = None

    def __post_init__(self):
        if self.hit == (self.t_hat >= 1.0):
            raise ValueError("hit must be false exactly when t_hat = 1")

    @property
    def point(self) -> np.ndarray | None:
        return self.needle.point(self.t_hat) if (self.hit and self.needle is not None) else None


DEFAULT_K = 20
DEFAULT_FACTOR = 10.0


def _check_grid(t_grid) -> np.ndarray:
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) < 2 or np.any(np.diff(t_grid) <= 0) or t_grid[0] <= 0 or t_grid[-1] >= 1:
        raise ValueError("t_grid must be increasing inside (0, 1)")
    return t_grid


def _far_count(t_grid, far_fraction: float) -> int:
    return min(len(t_grid) - 1, max(1, int(round(far_fraction * len(t_grid)))))


class _NeedleScan:
    """Sequential indicator evaluation along one needle."""

    def __init__(self, scenario, mesh, needle, t_grid, k, solver, colloc):
        self.scenario, self.mesh, self.needle, self.t_grid = scenario, mesh, needle, t_grid
        self.solver = solver
        self.basis = RungeBasis(scenario.domain, needle, k, colloc) if solver.has_inclusions else None
        self.values: list[float] = []

    def step(self) -> float:
        t = float(self.t_grid[len(self.values)])
        v = self.solver.gap(runge_datum(self.mesh, self.basis.fit(t))).value if self.basis else 0.0
        self.values.append(v)
        return v

    def finish(self, threshold: float, start: int) -> HitEstimate:
        # the far-field prefix only calibrates; hits are searched after it
        for i in range(start, len(self.t_grid)):
            v = self.values[i] if i < len(self.values) else self.step()
            if v > threshold:
                return HitEstimate(float(self.t_grid[i]), True, self.t_grid[:i + 1], np.array(self.values[:i + 1]),
                                   threshold, self.needle)
        return HitEstimate(1.0, False, self.t_grid, np.array(self.values), threshold, self.needle)


def hitting_time(scenario: Scenario, mesh, needle: Needle, t_grid, k: int = DEFAULT_K,
                 factor: float = DEFAULT_FACTOR, far_fraction: float = 0.1, solver: GapSolver | None = None,
                 colloc: CollocationSet | None = None, threshold: float | None = None) -> HitEstimate:
    """First grid parameter where the indicator exceeds the blow-up threshold.

    Without an explicit ``threshold`` it is ``factor`` times the median of the
    indicator over the leading ``far_fraction`` of the grid (near the entry
    point). Evaluation stops at the first exceedance.
    """
    _check_scenario(scenario)
    t_grid = _check_grid(t_grid)
    solver = solver or GapSolver(scenario, mesh)
    scan = _NeedleScan(scenario, mesh, needle, t_grid, k, solver, colloc or collocation_grid(scenario.domain))
    n_far = _far_count(t_grid, far_fraction)
    if threshold is None:
        threshold = factor * float(np.median([scan.step() for _ in range(n_far)]))
    return scan.finish(threshold, n_far)


@dataclass
class PointCloud:
    estimates: list[HitEstimate] = field(default_factory=list)
    threshold: float = 0.0

    @property
    def points(self) -> np.ndarray:
        pts = [e.point for e in self.estimates if e.hit]
        return np.array(pts) if pts else np.zeros((0, 2))

    @property
    def needle_ids(self) -> list[int]:
        return [e.needle.ident for e in self.estimates if e.hit]


def reconstruct_boundary(scenario: Scenario, mesh, needles, t_grid, k: int = DEFAULT_K,
                         factor: float = DEFAULT_FACTOR, far_fraction: float = 0.1, workers: int = 1,
                         threshold: float | None = None) -> PointCloud:
    """Hit points of a needle family.

    The threshold is ``factor`` times the median of the far-field indicator
    values of the whole family. Needles are independent jobs merged in id
    order.
    """
    _check_scenario(scenario)
    t_grid = _check_grid(t_grid)
    solver = GapSolver(scenario, mesh)
    colloc = collocation_grid(scenario.domain)
    n_far = _far_count(t_grid, far_fraction)
    needles = sorted(needles, key=lambda nd: nd.ident)
    scans = [_NeedleScan(scenario, mesh, nd, t_grid, k, solver, colloc) for nd in needles]

    def far(scan):
        for _ in range(n_far):
            scan.step()
        return scan

    def rest(scan):
        return scan.finish(threshold, n_far)

    def run(fn, items):
        if workers > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(workers) as ex:
                return list(ex.map(fn, items))
        return [fn(s) for s in items]

    run(far, scans)
    if threshold is None:
        pool = [v for s in scans for v in s.values]
        threshold = factor * float(np.median(pool)) if pool else 0.0
    return PointCloud(run(rest, scans), threshold)


def first_hit(needle: Needle, shape, samples: int = 20001) -> float:
    """Geometric first-contact parameter of a needle with a shape (1 if it misses)."""
    ts = np.linspace(0, 1, samples)
    inside = shape.contains(needle.point(ts))
    if not inside.any():
        return 1.0
    i = int(np.argmax(inside))
    lo, hi = ts[max(i - 1, 0)], ts[i]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if shape.contains(needle.point(mid)[None])[0]:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# bracketing quadrature


def _disk_quadrature(shape, n: int = 200):
    x0, y0, x1, y1 = shape.bbox()
    g, w = np.polynomial.legendre.leggauss(n)
    xs = 0.5 * (g + 1) * (x1 - x0) + x0
    ys = 0.5 * (g + 1) * (y1 - y0) + y0
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    W = np.outer(w, w).ravel() * 0.25 * (x1 - x0) * (y1 - y0)
    m = shape.contains(pts)
    return pts[m], W[m]


def inclusion_energy(scenario: Scenario, y, r: float | None = None, n: int = 200) -> tuple[float, float]:
    """``int_D |grad Phi(., y)|^2`` and ``int_D Phi(., y)^2`` over all inclusions, ``y`` outside them."""
    r = default_scale(scenario.domain) if r is None else r
    grad_sq = mass = 0.0
    for comp in scenario.inclusions:
        pts, w = _disk_quadrature(comp.shape, n)
        g = fundamental_gradient(pts, y)
        grad_sq += float(w @ np.sum(g * g, axis=1))
        mass += float(w @ fundamental_solution(pts, y, r) ** 2)
    return grad_sq, mass


# ---------------------------------------------------------------------------
# output


def cloud_csv(cloud: PointCloud) -> str:
    """Recovered boundary points, one row per needle that hit."""
    lines = ["needle_id,entry_x,entry_y,t_hat,hit_x,hit_y"]
    for e in cloud.estimates:
        if e.hit:
            nd = e.needle
            lines.append(f"{nd.ident},{nd.entry[0]:.12g},{nd.entry[1]:.12g},{e.t_hat:.12g},"
                         f"{e.point[0]:.12g},{e.point[1]:.12g}")
    return "\n".join(lines) + "\n"


def needles_csv(cloud: PointCloud) -> str:
    """Every needle with its estimate; ``t_hat = 1`` and ``hit = 0`` for a miss."""
    lines = ["needle_id,entry_x,entry_y,exit_x,exit_y,t_hat,hit,peak_indicator,threshold"]
    for e in cloud.estimates:
        nd = e.needle
        peak = float(np.max(e.indicator)) if len(e.indicator) else 0.0
        lines.append(f"{nd.ident},{nd.entry[0]:.12g},{nd.entry[1]:.12g},{nd.vertices[-1][0]:.12g},"
                     f"{nd.vertices[-1][1]:.12g},{e.t_hat:.12g},{int(e.hit)},{peak:.12g},{e.threshold:.12g}")
    return "\n".join(lines) + "\n"
