"""Dirichlet-to-Neumann pairings and their gap against the inclusion-free map.

The gap ``<(Lambda_D - Lambda_0) f, f>`` is the difference of two energies that
may both be astronomically larger than the gap itself when ``f`` is an
exponentially growing probe. :class:`GapSolver` therefore computes it from the
reflected field ``W = u - u0`` (``u0`` the inclusion-free solution) through a
Bregman-divergence functional that never forms the large energies.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import fem
from .geometry import Kind, Scenario
from .mesh import Mesh

log = logging.getLogger(__name__)


class AnalyticField(Protocol):
    """A field known in closed form, evaluated in shifted-exponent form."""

    def log_envelope(self, points: np.ndarray) -> np.ndarray:
        """Logarithm of the exponential size factor at ``points``."""

    def evaluate(self, points: np.ndarray, shift: float = 0.0) -> np.ndarray:
        """Field values multiplied by ``exp(-shift)``."""


@dataclass(frozen=True)
class FunctionField:
    func: Callable[[np.ndarray], np.ndarray]

    def log_envelope(self, points):
        return np.zeros(len(points))

    def evaluate(self, points, shift=0.0):
        return np.asarray(self.func(points), dtype=float) * math.exp(-shift)


@dataclass(frozen=True)
class BoundaryData:
    """Dirichlet values at the outer boundary nodes of a mesh.

    ``field`` optionally carries the closed-form solution the trace came from;
    the gap solver then uses its nodal interpolant as the free solution.
    """

    values: np.ndarray
    field: AnalyticField | None = None
    label: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError("boundary data must be a finite 1-D array")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_field(cls, mesh: Mesh, field: AnalyticField, label: str = "") -> "BoundaryData":
        return cls(field.evaluate(mesh.nodes[mesh.outer_nodes]), field, label)

    @classmethod
    def from_function(cls, mesh: Mesh, func, label: str = "", harmonic: bool = False) -> "BoundaryData":
        """Trace of ``func``; pass ``harmonic=True`` to also use it as the free solution."""
        vals = np.asarray(func(mesh.nodes[mesh.outer_nodes]), dtype=float)
        return cls(vals, FunctionField(func) if harmonic else None, label)

    def __add__(self, c: float) -> "BoundaryData":
        return BoundaryData(self.values + c, None, self.label)

    def __len__(self):
        return len(self.values)


def _trace(data) -> np.ndarray:
    return data.values if isinstance(data, BoundaryData) else np.asarray(data, dtype=float)


def _free_scenario(mesh: Mesh, p: float) -> Scenario:
    if mesh.scenario is None:
        raise ValueError("mesh carries no scenario; build it with triangulate()")
    return mesh.scenario.empty().with_p(p)


# ---------------------------------------------------------------------------
# plain pairings


def _solve(scenario: Scenario, mesh: Mesh, trace: np.ndarray, options=None, dofmap=None) -> fem.DiscreteSolution:
    if scenario.p == 2.0:
        return fem.solve_p2(scenario, mesh, trace, dofmap=dofmap)
    return fem.solve_p(scenario, mesh, trace, options, dofmap=dofmap)


def harmonic_extension(scenario: Scenario, mesh: Mesh, g) -> np.ndarray:
    """Nodal extension of ``g``: harmonic in the background, tied on superconductors."""
    return fem.solve_p2(scenario.with_p(2.0), mesh, _trace(g)).nodal_values


def pair_solution(solution: fem.DiscreteSolution, extension: np.ndarray) -> float:
    """``sum_T |T| flux_T . grad g_T`` for a solved ``f`` and a nodal extension of ``g``."""
    mesh = solution.mesh
    fl = fem.flux_field(solution)
    return float(mesh.areas @ np.einsum("td,td->t", fl, mesh.gradient(extension)))


def pair(scenario: Scenario, mesh: Mesh, f, g, extension: np.ndarray | None = None,
         options: fem.SolverOptions | None = None) -> float:
    """``<Lambda_sigma f, g>``.

    ``extension`` is any nodal field with trace ``g`` that is constant on each
    superconducting component; the harmonic one is used by default.
    """
    sol = _solve(scenario, mesh, _trace(f), options)
    ext = harmonic_extension(scenario, mesh, g) if extension is None else np.asarray(extension, float)
    return pair_solution(sol, ext)


def free_pair(mesh: Mesh, f, g, p: float, options: fem.SolverOptions | None = None) -> float:
    """``<Lambda_0 f, g>`` on the same triangulation with every triangle active."""
    scen = _free_scenario(mesh, p)
    dm = fem.free_dofmap(mesh)
    sol = _solve(scen, mesh, _trace(f), options, dofmap=dm)
    ext = fem.solve_p2(scen.with_p(2.0), mesh, _trace(g), dofmap=dm).nodal_values
    return pair_solution(sol, ext)


# ---------------------------------------------------------------------------
# stable gap


def bregman(a: np.ndarray, b: np.ndarray, p: float, eps: float) -> np.ndarray:
    """``phi(a+b) - phi(a) - grad phi(a).b`` for ``phi(v) = (|v|^2+eps^2)^{p/2}``, without cancellation."""
    bb = np.einsum("td,td->t", b, b)
    if p == 2.0:
        return bb
    sa = np.einsum("td,td->t", a, a) + eps * eps
    m = p / 2
    out = bb**m  # a = 0 and eps = 0: phi(b) - phi(0)
    ok = sa > 0
    if ok.any():
        sa_, bb_ = sa[ok], bb[ok]
        ab = np.einsum("td,td->t", a[ok], b[ok])
        big = bb_ > sa_  # no cancellation to fear; the scaled form would overflow
        s = np.where(big, 0.0, (2 * ab + bb_) / sa_)
        out[ok] = np.where(big, (np.einsum("td,td->t", a[ok] + b[ok], a[ok] + b[ok]) + eps * eps) ** m - sa_**m - p * sa_ ** (m - 1) * ab,
                           sa_**m * (_excess(s, m) + m * bb_ / sa_))
    return out


def _excess(s: np.ndarray, m: float) -> np.ndarray:
    """``(1+s)^m - 1 - m s`` accurate for small ``s``."""
    out = np.expm1(m * np.log1p(s)) - m * s
    small = np.abs(s) < 1e-3
    if small.any():
        x = s[small]
        c2 = m * (m - 1) / 2
        c3 = c2 * (m - 2) / 3
        c4 = c3 * (m - 3) / 4
        c5 = c4 * (m - 4) / 5
        out[small] = x * x * (c2 + x * (c3 + x * (c4 + x * c5)))
    return out


def bregman_grad(a: np.ndarray, b: np.ndarray, p: float, eps: float) -> np.ndarray:
    """``grad phi(a+b) - grad phi(a)`` without cancellation."""
    if p == 2.0:
        return 2 * b
    sa = np.einsum("td,td->t", a, a) + eps * eps
    bb = np.einsum("td,td->t", b, b)
    q = p / 2 - 1
    # a = 0 and eps = 0: grad phi(b)
    out = np.where((bb > 0)[:, None], p * np.where(bb > 0, bb, 1.0)[:, None] ** q * b, 0.0)
    ok = sa > 0
    if ok.any():
        sa_, a_, b_, bb_ = sa[ok], a[ok], b[ok], bb[ok]
        ab = np.einsum("td,td->t", a_, b_)
        big = bb_ > sa_
        lg = q * np.log1p(np.where(big, 0.0, (2 * ab + bb_) / sa_))
        scaled = (p * sa_**q)[:, None] * (a_ * np.expm1(lg)[:, None] + b_ * np.exp(lg)[:, None])
        direct = p * ((np.einsum("td,td->t", a_ + b_, a_ + b_) + eps * eps) ** q)[:, None] * (a_ + b_) - (p * sa_**q)[:, None] * a_
        out[ok] = np.where(big[:, None], direct, scaled)
    return out


@dataclass
class GapValue:
    """A gap ``scaled * exp(p * log_scale)`` kept in logarithmic form."""

    scaled: float
    log_scale: float
    p: float
    reflected: np.ndarray | None = None

    @property
    def sign(self) -> int:
        return int(np.sign(self.scaled))

    @property
    def log_abs(self) -> float:
        if self.scaled == 0.0:
            return -math.inf
        return math.log(abs(self.scaled)) + self.p * self.log_scale

    @property
    def value(self) -> float:
        if self.scaled == 0.0:
            return 0.0
        la = self.log_abs
        if la > 709.0:
            return math.copysign(math.inf, self.scaled)
        return math.copysign(math.exp(la), self.scaled)

    def __float__(self):
        return self.value

    def __add__(self, other: "GapValue") -> "GapValue":
        ls = max(self.log_scale, other.log_scale)
        s = self.scaled * math.exp(self.p * (self.log_scale - ls)) + other.scaled * math.exp(
            other.p * (other.log_scale - ls))
        return GapValue(s, ls, self.p)


class GapSolver:
    """Gap computations for one (scenario, mesh) pair, caching factorisations at p = 2."""

    def __init__(self, scenario: Scenario, mesh: Mesh, p: float | None = None,
                 options: fem.SolverOptions | None = None):
        self.scenario = scenario if p is None else scenario.with_p(p)
        self.mesh = mesh
        self.p = float(self.scenario.p)
        self.options = options or fem.SolverOptions()
        self.sigma = float(self.scenario.background_sigma)
        self.dm = fem.build_dofmap(mesh)
        self.free_dm = fem.free_dofmap(mesh)
        self.P = self.dm.P
        self.sc_tri = np.zeros(mesh.n_triangles, dtype=bool)
        self.ins_tri = np.zeros(mesh.n_triangles, dtype=bool)
        for i, k in enumerate(mesh.kinds):
            tgt = self.sc_tri if k == Kind.SUPERCONDUCTING else self.ins_tri
            tgt |= mesh.region == i + 1
        self.sc_nodes = np.zeros(mesh.n_nodes, dtype=bool)
        if self.sc_tri.any():
            self.sc_nodes[mesh.triangles[self.sc_tri].ravel()] = True
        self._free_lu = None
        self._refl_lu = None

    @property
    def has_inclusions(self) -> bool:
        return bool(self.sc_tri.any() or self.ins_tri.any())

    # free solution -----------------------------------------------------

    def free_solution(self, f) -> np.ndarray:
        """Nodal free solution for the trace ``f`` (discrete, not interpolated)."""
        trace = _trace(f)
        u_fixed = np.zeros(self.mesh.n_nodes)
        u_fixed[self.mesh.outer_nodes] = trace
        if self.p == 2.0:
            if self._free_lu is None:
                K = fem.stiffness(self.mesh)
                Pf = self.free_dm.P
                self._free_K = K
                self._free_lu = splu((Pf.T @ K @ Pf).tocsc())
            x = self._free_lu.solve(-(self.free_dm.P.T @ (self._free_K @ u_fixed)))
            return self.free_dm.expand(x, u_fixed)
        scen = self.scenario.empty()
        return fem.solve_p(scen, self.mesh, trace, self.options, dofmap=self.free_dm).nodal_values

    def free_field(self, f, shift: float = 0.0) -> np.ndarray:
        """Nodal free solution scaled by ``exp(-shift)``; analytic interpolant when available."""
        if isinstance(f, BoundaryData) and f.field is not None:
            return f.field.evaluate(self.mesh.nodes, shift)
        return self.free_solution(f) * math.exp(-shift)

    def inclusion_shift(self, f) -> float:
        """Exponent offset that brings the free field to order one on the inclusions."""
        if isinstance(f, BoundaryData) and f.field is not None and self.has_inclusions:
            tri = self.mesh.triangles[self.sc_tri | self.ins_tri]
            return float(np.max(f.field.log_envelope(self.mesh.nodes[np.unique(tri)])))
        return 0.0

    # gap ---------------------------------------------------------------

    def gap(self, f, method: str = "reflected", shift: float | None = None) -> GapValue:
        if method == "difference":
            return self._difference(f)
        if method != "reflected":
            raise ValueError(f"unknown gap method {method!r}")
        if not self.has_inclusions:
            return GapValue(0.0, 0.0, self.p)
        shift = self.inclusion_shift(f) if shift is None else shift
        return self.reflected_gap(self._gap_field(f, shift), shift)

    def _gap_field(self, f, shift: float) -> np.ndarray:
        # at p = 2 with unit background the functional reads the free field on inclusion nodes only
        if self.p == 2.0 and self.sigma == 1.0 and isinstance(f, BoundaryData) and f.field is not None:
            if not hasattr(self, "_incl_nodes"):
                self._incl_nodes = np.unique(self.mesh.triangles[self.sc_tri | self.ins_tri])
            u0 = np.zeros(self.mesh.n_nodes)
            u0[self._incl_nodes] = f.field.evaluate(self.mesh.nodes[self._incl_nodes], shift)
            return u0
        return self.free_field(f, shift)

    def _difference(self, f) -> GapValue:
        trace = _trace(f)
        sol = _solve(self.scenario, self.mesh, trace, self.options, dofmap=self.dm)
        free = _solve(self.scenario.empty(), self.mesh, trace, self.options, dofmap=self.free_dm)
        g = fem.energy(sol) - fem.energy(free)
        return GapValue(g, 0.0, self.p)

    def reflected_gap(self, u0: np.ndarray, log_scale: float = 0.0) -> GapValue:
        """Gap for the nodal free field ``u0`` (already scaled by ``exp(-log_scale)``)."""
        mesh, p = self.mesh, self.p
        a_all = mesh.gradient(u0)
        incl = self.sc_tri | self.ins_tri
        amax = float(np.sqrt(np.einsum("td,td->t", a_all[incl], a_all[incl]).max()))
        if amax == 0.0 or not np.isfinite(amax):
            if not np.isfinite(amax):
                raise OverflowError("free field overflows on the inclusions; pass a larger shift")
            return GapValue(0.0, 0.0, p)
        u0 = u0 / amax
        log_scale = log_scale + math.log(amax)
        a_all = a_all / amax
        eps = 0.0 if p == 2.0 else 1e-8
        W, G = self._minimise(u0, a_all, eps)
        return GapValue(G, log_scale, p, W)

    def _constant(self, a_all, eps) -> float:
        p, sig, ar = self.p, self.sigma, self.mesh.areas
        c = 0.0
        if self.sc_tri.any():
            a = a_all[self.sc_tri]
            c += float(ar[self.sc_tri] @ (sig * np.einsum("td,td->t", fem.dphi(a, p, eps), a) - fem.phi(a, p, eps)))
        if self.ins_tri.any():
            c -= float(ar[self.ins_tri] @ fem.phi(a_all[self.ins_tri], p, eps))
        if sig != 1.0:
            bg = self.dm.active
            c += (sig - 1.0) * float(ar[bg] @ fem.phi(a_all[bg], p, eps))
        return c

    def _functional(self, base, a_all, eps, majorize=False):
        mesh, dm, p, sig = self.mesh, self.dm, self.p, self.sigma
        bg, ins = dm.active, self.ins_tri
        a_bg = a_all[bg]
        w_bg = sig * mesh.areas[bg]
        w_ins = mesh.areas[ins]
        flux_ins = -sig * fem.dphi(a_all[ins], p, eps) if ins.any() else np.zeros((0, 2))
        const = self._constant(a_all, eps)
        g_ins = dm.reduce(fem.nodal_gradient(mesh, ins, flux_ins, w_ins)) if ins.any() else 0.0

        def fun(y):
            W = base + self.P @ y
            grads = mesh.gradient(W)
            b = grads[bg]
            val = float(w_bg @ bregman(a_bg, b, p, eps)) + const
            if ins.any():
                val += float(w_ins @ np.einsum("td,td->t", flux_ins, grads[ins]))
            g = dm.reduce(fem.nodal_gradient(mesh, bg, bregman_grad(a_bg, b, p, eps), w_bg)) + g_ins
            if p == 2.0:
                H = None
            else:
                v = a_bg + b
                if majorize:
                    s = np.einsum("td,td->t", v, v) + eps * eps
                    hv = (p * s ** (p / 2 - 1))[:, None, None] * np.eye(2)[None]
                else:
                    hv = fem.d2phi(v, p, eps)
                H = fem.assemble_hessian(mesh, dm, bg, hv, w_bg)
            return val, g, H

        return fun

    def _minimise(self, u0, a_all, eps):
        base = np.zeros(self.mesh.n_nodes)
        base[self.sc_nodes] = -u0[self.sc_nodes]
        y0 = np.zeros(self.dm.n_dofs)
        if self.p == 2.0:
            fun = self._functional(base, a_all, eps)
            if self.dm.n_dofs == 0:
                return base, fun(y0)[0]
            if self._refl_lu is None:
                H = fem.assemble_hessian(self.mesh, self.dm, self.dm.active,
                                         np.broadcast_to(2 * np.eye(2), (int(self.dm.active.sum()), 2, 2)),
                                         self.sigma * self.mesh.areas[self.dm.active])
                self._refl_lu = splu(H.tocsc())
            _, g, _ = fun(y0)
            y = -self._refl_lu.solve(g)
            _, g1, _ = fun(y)
            y -= self._refl_lu.solve(g1)  # one refinement sweep
            return base + self.P @ y, fun(y)[0]
        opts = self.options
        g_ref = float(np.linalg.norm(self._functional(base, a_all, eps)(y0)[1]))
        if self.p < 2:
            y0 = fem.newton_minimize(self._functional(base, a_all, eps, majorize=True), y0, opts,
                                     g_ref=g_ref, tol=1e-4).x
        res = fem.newton_minimize(self._functional(base, a_all, eps), y0, opts, g_ref=g_ref)
        if not res.converged:
            log.warning("reflected solve stopped after %d iterations (|g|/|g_ref| = %.2e)", res.iterations,
                        res.grad_norms[-1] / max(g_ref, 1e-300))
        return base + self.P @ res.x, res.value


def gap(scenario: Scenario, mesh: Mesh, f, method: str = "reflected",
        options: fem.SolverOptions | None = None) -> float:
    """``<(Lambda_D - Lambda_0) f, f>``."""
    return GapSolver(scenario, mesh, options=options).gap(f if isinstance(f, BoundaryData) else BoundaryData(f),
                                                           method).value


# ---------------------------------------------------------------------------
# p = 2 estimates


@dataclass
class EstimateReport:
    inclusion_energy: float
    gap: float
    boundary_term: float
    h1_norm_sq: float
    slack: float

    @property
    def ratio(self) -> float:
        return abs(self.boundary_term) / self.h1_norm_sq if self.h1_norm_sq > 0 else 0.0

    @property
    def lower_ok(self) -> bool:
        return self.inclusion_energy <= self.gap * (1 + self.slack) + 1e-14

    @property
    def upper_ok(self) -> bool:
        upper = self.inclusion_energy - 2 * self.boundary_term
        return self.gap <= upper * (1 + self.slack) + 1e-14


class EstimateViolation(AssertionError):
    pass


def check_estimates_p2(scenario: Scenario, mesh: Mesh, f, slack: float = 0.02, strict: bool = True) -> EstimateReport:
    """Energy of ``u0`` on the inclusion, the gap, and the boundary flux term.

    The boundary term is ``int_{dD} (dw/dnu) u0`` with ``w`` the reflected field
    and ``nu`` the outward normal of the background; it is computed as the
    discrete flux of ``w`` tested against ``u0`` restricted to the inclusion
    nodes.
    """
    if scenario.p != 2.0:
        raise ValueError("estimates are for p = 2")
    if scenario.has_insulators:
        raise ValueError("estimates are for superconducting inclusions")
    f = f if isinstance(f, BoundaryData) else BoundaryData(f)
    solver = GapSolver(scenario, mesh)
    if not solver.has_inclusions:
        return EstimateReport(0.0, 0.0, 0.0, 0.0, slack)
    u0 = solver.free_field(f)
    res = solver.reflected_gap(u0)
    W = res.reflected * math.exp(res.log_scale)
    mesh_ = mesh
    a = mesh_.gradient(u0)
    sc = solver.sc_tri
    e_incl = float(mesh_.areas[sc] @ np.einsum("td,td->t", a[sc], a[sc]))
    z = np.where(solver.sc_nodes, u0, 0.0)
    bg = solver.dm.active
    bterm = float(mesh_.areas[bg] @ np.einsum("td,td->t", mesh_.gradient(W)[bg], mesh_.gradient(z)[bg]))
    M = fem.mass_matrix(mesh_, sc)
    h1 = e_incl + float(u0 @ (M @ u0))
    rep = EstimateReport(e_incl, res.value, bterm, h1, slack)
    if strict and not (rep.lower_ok and rep.upper_ok):
        raise EstimateViolation(
            f"estimate violated: int_D|grad u0|^2 = {e_incl:.6g}, gap = {res.value:.6g}, boundary term = {bterm:.6g}")
    return rep


def h_half_seminorm_sq(mesh: Mesh, f, solver: GapSolver | None = None) -> float:
    """Dirichlet energy of the discrete harmonic extension of ``f`` (inclusions ignored)."""
    solver = solver or GapSolver(_free_scenario(mesh, 2.0), mesh)
    u = solver.free_solution(f)
    K = solver._free_K
    return float(u @ (K @ u))


def ellipticity_report(scenario: Scenario, mesh: Mesh, trace_family) -> tuple[float, float]:
    """Min and max of ``<Lambda f, f> / |f|^2_{1/2}`` over a family; constants are skipped."""
    if scenario.p != 2.0:
        raise ValueError("ellipticity report is for p = 2")
    solver = GapSolver(scenario, mesh)
    ratios = []
    for f in trace_family:
        tr = _trace(f)
        den = h_half_seminorm_sq(mesh, tr, solver)
        if den <= 1e-12 * max(float(np.dot(tr, tr)), 1e-300):
            continue
        num = den + solver.gap(BoundaryData(tr)).value
        ratios.append(num / den)
    if not ratios:
        raise ValueError("trace family contains only constants")
    return float(min(ratios)), float(max(ratios))


def pairing_matrix(scenario: Scenario, mesh: Mesh, traces, options=None) -> np.ndarray:
    """Matrix of ``<Lambda f_i, f_j>``."""
    sols = [_solve(scenario, mesh, _trace(f), options) for f in traces]
    exts = [harmonic_extension(scenario, mesh, g) for g in traces]
    return np.array([[pair_solution(s, e) for e in exts] for s in sols])


def pairing_csv(matrix: np.ndarray, ids=None) -> str:
    n = matrix.shape[0]
    ids = list(range(n)) if ids is None else list(ids)
    lines = ["f_id,g_id,value"]
    for i in range(n):
        for j in range(matrix.shape[1]):
            lines.append(f"{ids[i]},{ids[j]},{matrix[i, j]:.15g}")
    return "\n".join(lines) + "\n"


__all__ = [
    "AnalyticField", "BoundaryData", "EstimateReport", "EstimateViolation", "FunctionField", "GapSolver", "GapValue",
    "bregman", "bregman_grad", "check_estimates_p2", "ellipticity_report", "free_pair", "gap", "h_half_seminorm_sq",
    "harmonic_extension", "pair", "pair_solution", "pairing_csv", "pairing_matrix",
]
