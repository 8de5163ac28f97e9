"""Single-layer boundary integral oracle for the linear superconducting problem.

Kernel ``(1/2pi) log(r/|x-y|)`` with a scale ``r`` larger than the domain
diameter. Curves are approximated by straight panels, densities are piecewise
constant, and every panel integral of the kernel and of its gradient is
evaluated in closed form, so collocation at panel midpoints needs no special
self-panel quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .geometry import Circle, Kind, Polygon, Scenario

TWO_PI = 2 * math.pi


class ScaleViolation(ValueError):
    pass


class IllConditioned(RuntimeError):
    pass


class ContractionFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class PanelCurve:
    """Closed polygonal curve, counter-clockwise, split into straight panels."""

    points: np.ndarray  # (n+1, 2), last == first
    owner: str = "outer"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if len(pts) < 4 or np.linalg.norm(pts[0] - pts[-1]) > 1e-12:
            raise ValueError("panel curve must be closed with at least three panels")
        object.__setattr__(self, "points", pts)
        if self.lengths.min() <= 0:
            raise ValueError("zero-length panel")

    @property
    def n(self) -> int:
        return len(self.points) - 1

    @property
    def starts(self) -> np.ndarray:
        return self.points[:-1]

    @property
    def ends(self) -> np.ndarray:
        return self.points[1:]

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.starts + self.ends)

    @property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.ends - self.starts, axis=1)

    @property
    def tangents(self) -> np.ndarray:
        return (self.ends - self.starts) / self.lengths[:, None]

    @property
    def normals(self) -> np.ndarray:
        t = self.tangents
        return np.column_stack([t[:, 1], -t[:, 0]])

    @property
    def total_length(self) -> float:
        return float(self.lengths.sum())

    @property
    def arclength(self) -> np.ndarray:
        """Arclength at panel midpoints."""
        c = np.concatenate([[0.0], np.cumsum(self.lengths)])
        return c[:-1] + 0.5 * self.lengths

    @property
    def diameter(self) -> float:
        p = self.points[:-1]
        d = p[:, None, :] - p[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())


@dataclass(frozen=True)
class Density:
    """Piecewise-constant density on a panel curve; ``mean_zero`` asserts zero total mass."""

    curve: PanelCurve
    values: np.ndarray
    mean_zero: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.curve.n,) or not np.all(np.isfinite(v)):
            raise ValueError("density needs one finite value per panel")
        if self.mean_zero:
            mass = abs(float(v @ self.curve.lengths))
            if mass > 1e-12 * max(float(np.abs(v) @ self.curve.lengths), 1e-300):
                raise ValueError(f"density flagged mean-zero has total mass {mass:.3e}")
        object.__setattr__(self, "values", v)

    @property
    def mass(self) -> float:
        return float(self.values @ self.curve.lengths)

    def project_mean_zero(self) -> "Density":
        v = self.values - self.mass / self.curve.total_length
        return Density(self.curve, v, True)


def panel_curve(shape, n: int, owner: str = "outer") -> PanelCurve:
    """Panels with vertices on the shape boundary, counter-clockwise."""
    if isinstance(shape, Circle):
        th = np.linspace(0, TWO_PI, n + 1)
        pts = np.asarray(shape.center, float) + shape.radius * np.column_stack([np.cos(th), np.sin(th)])
        pts[-1] = pts[0]
        return PanelCurve(pts, owner)
    if isinstance(shape, Polygon):
        v = shape.array
        closed = np.vstack([v, v[:1]])
        seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
        counts = np.maximum(1, np.round(n * seg / seg.sum()).astype(int))
        pts = []
        for a, b, k in zip(closed[:-1], closed[1:], counts):
            s = np.arange(k)[:, None] / k
            pts.append(a + s * (b - a))
        pts = np.vstack(pts + [v[:1]])
        return PanelCurve(pts, owner)
    raise TypeError(f"unsupported shape {type(shape).__name__}")


def ellipse_curve(center, a: float, b: float, n: int, owner: str = "inclusion") -> PanelCurve:
    th = np.linspace(0, TWO_PI, n + 1)
    pts = np.asarray(center, float) + np.column_stack([a * np.cos(th), b * np.sin(th)])
    pts[-1] = pts[0]
    return PanelCurve(pts, owner)


# ---------------------------------------------------------------------------
# closed-form panel integrals


def _local(curve: PanelCurve, x: np.ndarray):
    """Coordinates of targets relative to each panel: along-panel offsets and normal distance."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    rel = x[:, None, :] - curve.midpoints[None, :, :]
    t, nrm = curve.tangents, curve.normals
    u = np.einsum("mnd,nd->mn", rel, t)
    d = np.einsum("mnd,nd->mn", rel, nrm)
    half = 0.5 * curve.lengths[None, :]
    return u, d, half


def _log_integral(u, d, half):
    """``int_{-half}^{half} log|(u - s, d)| ds``."""

    def F(s):
        # antiderivative of log sqrt(s^2 + d^2) in s
        s2 = s * s + d * d
        with np.errstate(divide="ignore", invalid="ignore"):
            lg = np.where(s2 > 0, np.log(s2), 0.0)
            at = np.where(d != 0, d * np.arctan(s / np.where(d != 0, d, 1.0)), 0.0)
        return 0.5 * s * lg - s + at

    return F(u + half) - F(u - half)


def single_layer_matrix(src: PanelCurve, tgt, r: float) -> np.ndarray:
    """``M[i, j] = int_{panel j} Phi(x_i - y) dS(y)``; targets default to panel midpoints."""
    x = tgt.midpoints if isinstance(tgt, PanelCurve) else tgt
    u, d, half = _local(src, x)
    return (2 * half * math.log(r) - _log_integral(u, d, half)) / TWO_PI


def single_layer_eval(curve: PanelCurve, density, x, r: float, domain_diameter: float | None = None) -> np.ndarray:
    """Single layer of ``density`` at points ``x``; checks ``r`` against ``domain_diameter`` when given."""
    if domain_diameter is not None and not r > domain_diameter:
        raise ScaleViolation(f"kernel scale r = {r} must exceed the domain diameter {domain_diameter:.6g}")
    q = density.values if isinstance(density, Density) else np.asarray(density, float)
    return single_layer_matrix(curve, np.atleast_2d(x), r) @ q


def single_layer_gradient(curve: PanelCurve, density: np.ndarray, x) -> np.ndarray:
    """Gradient of the single layer at points off the curve (one-sided limits on it)."""
    u, d, half = _local(curve, x)
    a, b = u - half, u + half
    # int (x - y)/|x - y|^2 dS over the panel, in (tangent, normal) components
    with np.errstate(divide="ignore", invalid="ignore"):
        gt = 0.5 * np.log((b * b + d * d) / (a * a + d * d))
        gn = np.where(d != 0, np.arctan(b / np.where(d != 0, d, 1)) - np.arctan(a / np.where(d != 0, d, 1)), 0.0)
    gt = np.nan_to_num(gt)
    q = np.asarray(density, float)
    t, n = curve.tangents, curve.normals
    vec = (gt * q)[..., None] * t[None] + (gn * q)[..., None] * n[None]
    return -vec.sum(axis=1) / TWO_PI


def adjoint_double_layer(curve: PanelCurve) -> np.ndarray:
    """Principal-value matrix of ``K* q (x_i) = int d/dnu_x Phi(x_i - y) q(y) dS(y)`` at midpoints."""
    u, d, half = _local(curve, curve.midpoints)
    a, b = u - half, u + half
    np.fill_diagonal(d, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        gt = 0.5 * np.log((b * b + d * d) / (a * a + d * d))
        gn = np.where(d != 0, np.arctan(b / np.where(d != 0, d, 1)) - np.arctan(a / np.where(d != 0, d, 1)), 0.0)
    np.fill_diagonal(gt, 0.0)
    np.fill_diagonal(gn, 0.0)
    t, n = curve.tangents, curve.normals
    nx = curve.normals  # normal at the target midpoint
    comp_t = np.einsum("id,jd->ij", nx, t)
    comp_n = np.einsum("id,jd->ij", nx, n)
    return -(gt * comp_t + gn * comp_n) / TWO_PI


# ---------------------------------------------------------------------------
# equilibrium density and capacity


def default_scale(outer: PanelCurve) -> float:
    return 4.0 * outer.diameter


def _check_scale(r: float, outer: PanelCurve) -> None:
    if not r > outer.diameter:
        raise ScaleViolation(f"kernel scale r = {r} must exceed the domain diameter {outer.diameter:.6g}")


def _bordered(S: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    n = len(lengths)
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = S
    A[:n, n] = -1.0
    A[n, :n] = lengths
    return A


def equilibrium_density(curve: PanelCurve, r: float, cond_limit: float = 1e12) -> tuple[np.ndarray, float]:
    """Density with constant single-layer trace and unit total mass; returns it and the constant."""
    S = single_layer_matrix(curve, curve, r)
    A = _bordered(S, curve.lengths)
    c = np.linalg.cond(A)
    if not c < cond_limit:
        raise IllConditioned(f"equilibrium system condition number {c:.3e}")
    rhs = np.zeros(curve.n + 1)
    rhs[-1] = 1.0
    sol = np.linalg.solve(A, rhs)
    return sol[:-1], float(sol[-1])


def capacity(curve: PanelCurve, r: float) -> float:
    """Logarithmic capacity ``exp(-2 pi s)`` with ``s`` the equilibrium potential."""
    _, s = equilibrium_density(curve, r)
    return math.exp(-TWO_PI * s)


# ---------------------------------------------------------------------------
# two-curve interaction


class LayerSystem:
    """Discretised single-layer operators for an outer curve and one inclusion curve."""

    def __init__(self, outer: PanelCurve, inner: PanelCurve, r: float | None = None):
        self.outer, self.inner = outer, inner
        self.r = default_scale(outer) if r is None else r
        _check_scale(self.r, outer)
        self.S_oo = single_layer_matrix(outer, outer, self.r)
        self.S_ii = single_layer_matrix(inner, inner, self.r)
        self.S_io = single_layer_matrix(inner, outer, self.r)  # inner sources, outer targets
        self.S_oi = single_layer_matrix(outer, inner, self.r)
        self.eq_density_outer, self.eq_potential_outer = equilibrium_density(outer, self.r)
        self.eq_density_inner, self.eq_potential_inner = equilibrium_density(inner, self.r)
        self._lu_o = sla.lu_factor(_bordered(self.S_oo, outer.lengths))
        self._lu_i = sla.lu_factor(_bordered(self.S_ii, inner.lengths))
        self._interaction = None

    # projections and inverses on mean-zero densities
    def project(self, g: np.ndarray, which: str) -> np.ndarray:
        """Remove the equilibrium component: ``g`` minus its pairing with the equilibrium density."""
        curve, eq = (self.inner, self.eq_density_inner) if which == "inner" else (self.outer, self.eq_density_outer)
        return g - float(np.sum(eq * g * curve.lengths))

    def inverse(self, g: np.ndarray, which: str) -> np.ndarray:
        """Mean-zero density whose single-layer trace equals ``g`` up to a constant."""
        lu = self._lu_i if which == "inner" else self._lu_o
        return sla.lu_solve(lu, np.append(g, 0.0))[:-1]

    def k_inner_to_outer(self, inner_density: np.ndarray) -> np.ndarray:
        return self.inverse(self.project(self.S_io @ inner_density, "outer"), "outer")

    def k_outer_to_inner(self, outer_density: np.ndarray) -> np.ndarray:
        return self.inverse(self.project(self.S_oi @ outer_density, "inner"), "inner")

    def k_apply(self, inner_density: np.ndarray) -> np.ndarray:
        return self.k_outer_to_inner(self.k_inner_to_outer(inner_density))

    @property
    def interaction_matrix(self) -> np.ndarray:
        if self._interaction is None:
            self._interaction = np.column_stack([self.k_apply(e) for e in np.eye(self.inner.n)])
        return self._interaction

    def energy_gram(self, which: str) -> np.ndarray:
        """Symmetric matrix of ``<q, S q>`` for densities on one curve."""
        curve, S = (self.inner, self.S_ii) if which == "inner" else (self.outer, self.S_oo)
        G = curve.lengths[:, None] * S
        return 0.5 * (G + G.T)

    def mean_zero_basis(self, which: str) -> np.ndarray:
        curve = self.inner if which == "inner" else self.outer
        return sla.null_space(curve.lengths[None, :])


@dataclass
class ReflectedSolution:
    inner_density: np.ndarray
    outer_density: np.ndarray
    constant: float
    k_norm: float
    iterations: int
    method: str
    system: LayerSystem

    def __call__(self, x) -> np.ndarray:
        s = self.system
        return (single_layer_eval(s.inner, self.inner_density, x, s.r) + single_layer_eval(s.outer, self.outer_density, x, s.r))

    def gradient(self, x) -> np.ndarray:
        s = self.system
        return single_layer_gradient(s.inner, self.inner_density, x) + single_layer_gradient(s.outer, self.outer_density, x)

    def gap(self, u0_inner: np.ndarray) -> float:
        """Gap from the inclusion density: ``-<inner_density, u0>`` on the inclusion boundary."""
        return -float(np.sum(self.inner_density * u0_inner * self.system.inner.lengths))

    def outer_flux(self) -> np.ndarray:
        """Interior normal derivative of the reflected field at outer panel midpoints."""
        s = self.system
        adjoint = adjoint_double_layer(s.outer)
        grad_inner = single_layer_gradient(s.inner, self.inner_density, s.outer.midpoints)
        return 0.5 * self.outer_density + adjoint @ self.outer_density + np.einsum("nd,nd->n", grad_inner, s.outer.normals)

    def gap_outer(self, u0_outer: np.ndarray) -> float:
        """Gap as the flux of the reflected field through the outer boundary tested with ``u0``."""
        return float(np.sum(self.outer_flux() * u0_outer * self.system.outer.lengths))


def solve_reflected(outer: PanelCurve, inner: PanelCurve, u0_inner: np.ndarray, r: float | None = None,
                    system: LayerSystem | None = None, neumann_limit: float = 0.9, tol: float = 1e-13,
                    max_iter: int = 500) -> ReflectedSolution:
    """Densities of ``w = S_inner inner_density + S_outer outer_density`` with ``w = 0`` on the outer curve
    and ``w + u0`` constant on the inclusion curve.

    Solves ``(I - K) p = -Pi u0`` by a Neumann series when the operator norm
    estimate is below ``neumann_limit``, and by a dense solve otherwise.
    """
    sysm = system or LayerSystem(outer, inner, r)
    u0 = np.asarray(u0_inner, dtype=float)
    rhs = -sysm.inverse(sysm.project(u0, "inner"), "inner")
    knorm = operator_norm_estimates(sysm)[2]
    if knorm >= 1.0:
        raise ContractionFailure(f"operator norm estimate {knorm:.4f} is not below 1")
    if knorm < neumann_limit:
        inner_density = rhs.copy()
        term = rhs.copy()
        scale = max(np.abs(rhs).max(), 1e-300)
        for it in range(1, max_iter + 1):
            term = sysm.k_apply(term)
            inner_density += term
            if np.abs(term).max() <= tol * scale:
                break
        else:
            raise ContractionFailure(f"Neumann series did not converge in {max_iter} terms (norm {knorm:.4f})")
        method = "neumann"
    else:
        inner_density = np.linalg.solve(np.eye(inner.n) - sysm.interaction_matrix, rhs)
        it, method = 1, "direct"
    outer_density = -sysm.k_inner_to_outer(inner_density)
    trace = sysm.S_ii @ inner_density + sysm.S_oi @ outer_density + u0
    return ReflectedSolution(inner_density, outer_density, float(np.mean(trace)), knorm, it, method, sysm)


def _gen_norm(M: np.ndarray, G_out: np.ndarray, G_in: np.ndarray, B_in: np.ndarray, iters: int = 200,
              seed: int = 0) -> tuple[float, float]:
    """Operator norm of ``M`` between energy spaces on the mean-zero subspace.

    Returns the power-iteration estimate and the dense generalised-eigenvalue value.
    """
    MB = M @ B_in
    A = MB.T @ G_out @ MB
    A = 0.5 * (A + A.T)
    Bm = B_in.T @ G_in @ B_in
    Bm = 0.5 * (Bm + Bm.T)
    dense = float(np.sqrt(max(sla.eigh(A, Bm, eigvals_only=True).max(), 0.0)))
    cho = sla.cho_factor(Bm)
    x = np.random.default_rng(seed).standard_normal(A.shape[0])
    lam = 0.0
    for _ in range(iters):
        y = sla.cho_solve(cho, A @ x)
        lam_new = float(x @ A @ x) / float(x @ Bm @ x)
        x = y / np.linalg.norm(y)
        if abs(lam_new - lam) <= 1e-14 * max(lam_new, 1e-300):
            lam = lam_new
            break
        lam = lam_new
    return math.sqrt(max(lam, 0.0)), dense


def operator_norm_estimates(system: LayerSystem, cross_check: bool = False):
    """Energy-norm estimates of the two interaction operators and their composition.

    Power iteration on the mean-zero subspace; with ``cross_check`` also the
    dense generalised eigenvalue values are returned.
    """
    B_i = system.mean_zero_basis("inner")
    B_o = system.mean_zero_basis("outer")
    G_i, G_o = system.energy_gram("inner"), system.energy_gram("outer")
    M_io = np.column_stack([system.k_inner_to_outer(b) for b in B_i.T]) @ np.linalg.pinv(B_i)
    M_oi = np.column_stack([system.k_outer_to_inner(b) for b in B_o.T]) @ np.linalg.pinv(B_o)
    n_io, d_io = _gen_norm(M_io, G_o, G_i, B_i)
    n_oi, d_oi = _gen_norm(M_oi, G_i, G_o, B_o)
    n_k, d_k = _gen_norm(M_oi @ M_io, G_i, G_i, B_i)
    if cross_check:
        return (n_oi, n_io, n_k), (d_oi, d_io, d_k)
    return n_oi, n_io, n_k


def harmonic_energy(u0_value, u0_grad, inner: PanelCurve) -> float:
    """``int_D |grad u0|^2`` for harmonic ``u0`` via ``int_{dD} u0 du0/dn``."""
    m = inner.midpoints
    return float(np.sum(u0_value(m) * np.einsum("nd,nd->n", u0_grad(m), inner.normals) * inner.lengths))


def _area_integral(func, shape, n: int = 240) -> float:
    x0, y0, x1, y1 = shape.bbox()
    g, w = np.polynomial.legendre.leggauss(n)
    xs = 0.5 * (g + 1) * (x1 - x0) + x0
    ys = 0.5 * (g + 1) * (y1 - y0) + y0
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    W = np.outer(w, w).ravel() * 0.25 * (x1 - x0) * (y1 - y0)
    inside = shape.contains(pts)
    return float(np.sum(W[inside] * func(pts[inside])))


def pro_enclo_ratio(outer: PanelCurve, inner: PanelCurve, family, shape, r: float | None = None):
    """Largest ``|int_{dD} (dw/dnu) u0| / |u0|^2_{H^1(D)}`` over a family of harmonic ``u0``.

    ``family`` holds ``(value, gradient)`` callables. The boundary term comes
    from the jump of the normal derivative across the inclusion boundary,
    ``int (du0/dn + inner_density) u0``. Constants are skipped. Returns the maximum and
    the per-member ratios.
    """
    system = LayerSystem(outer, inner, r)
    ratios = []
    for val, grad in family:
        u_mid = val(inner.midpoints)
        e = harmonic_energy(val, grad, inner)
        mass = _area_integral(lambda x: val(x) ** 2, shape)
        h1 = e + mass
        if e <= 1e-14 * max(mass, 1e-300):
            continue
        sol = solve_reflected(outer, inner, u_mid, system=system)
        bterm = e + float(np.sum(sol.inner_density * u_mid * inner.lengths))
        ratios.append(abs(bterm) / h1)
    return (max(ratios) if ratios else 0.0), ratios


def density_csv(curve: PanelCurve, density: np.ndarray) -> str:
    lines = ["arclength,value"]
    for s, v in zip(curve.arclength, density):
        lines.append(f"{s:.12g},{v:.15g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# scenario helpers


def scenario_curves(scenario: Scenario, n_outer: int = 256, n_inner: int = 256) -> tuple[PanelCurve, PanelCurve]:
    """Panel curves of the outer boundary and of the single superconducting inclusion."""
    comps = scenario.inclusions
    if len(comps) != 1 or comps[0].kind != Kind.SUPERCONDUCTING:
        raise ValueError("the layer-potential solver handles exactly one superconducting inclusion")
    if scenario.p != 2.0 or scenario.background_sigma != 1.0:
        raise ValueError("the layer-potential solver handles p = 2 with unit background conductivity")
    return panel_curve(scenario.domain, n_outer, "outer"), panel_curve(comps[0].shape, n_inner, "inclusion")


def bem_gap(scenario: Scenario, u0, n_outer: int = 256, n_inner: int = 256, r: float | None = None,
            route: str = "inclusion") -> float:
    """Gap for a harmonic free field ``u0`` (callable on points) from the layer-potential solve.

    ``route="inclusion"`` uses ``-<inner_density, u0>`` on the inclusion boundary and
    ``route="outer"`` the flux of the reflected field through the outer boundary.
    """
    outer, inner = scenario_curves(scenario, n_outer, n_inner)
    sol = solve_reflected(outer, inner, u0(inner.midpoints), r)
    if route == "inclusion":
        return sol.gap(u0(inner.midpoints))
    if route == "outer":
        return sol.gap_outer(u0(outer.midpoints))
    raise ValueError(f"unknown route {route!r}")
