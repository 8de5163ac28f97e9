"""P1 finite elements for div(sigma |grad u|^{p-2} grad u) = 0 with extreme inclusions.

Superconducting components (sigma = inf) are collapsed to one tied degree of
freedom each; insulating triangles (sigma = 0) are removed, which leaves the
natural zero-flux condition on their boundary.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .geometry import BadExponent, Kind, Scenario
from .mesh import Mesh

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class SingularSystem(SolverError):
    pass


@dataclass
class SolverOptions:
    """Newton controls.

    ``epsilon`` is the gradient regularization; when None it is set to
    ``eps_rel`` times the oscillation of the Dirichlet data.
    """

    epsilon: float | None = None
    eps_rel: float = 1e-8
    newton_tol: float = 1e-10
    max_iters: int = 200
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-14

    def __post_init__(self):
        if self.epsilon is not None and self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if not (self.newton_tol > 0 and self.max_iters > 0):
            raise ValueError("tolerances must be positive")


@dataclass
class DofMap:
    """Affine parametrisation ``u = u_fixed + P x`` of admissible nodal fields."""

    node_dof: np.ndarray  # -1 for fixed nodes
    n_dofs: int
    sc_dof: dict  # inclusion index -> tied dof
    active: np.ndarray  # triangles carrying energy (background)

    @property
    def fixed(self) -> np.ndarray:
        return self.node_dof < 0

    @property
    def P(self) -> sp.csr_matrix:
        rows = np.flatnonzero(self.node_dof >= 0)
        return sp.csr_matrix(
            (np.ones(len(rows)), (rows, self.node_dof[rows])), shape=(len(self.node_dof), self.n_dofs)
        )

    def expand(self, x: np.ndarray, u_fixed: np.ndarray) -> np.ndarray:
        u = u_fixed.copy()
        free = self.node_dof >= 0
        u[free] = x[self.node_dof[free]]
        return u

    def restrict(self, u: np.ndarray) -> np.ndarray:
        """Dof vector from a nodal field (tied dofs take the mean of their nodes)."""
        free = self.node_dof >= 0
        s = np.bincount(self.node_dof[free], weights=u[free], minlength=self.n_dofs)
        c = np.bincount(self.node_dof[free], minlength=self.n_dofs)
        return s / np.maximum(c, 1)

    def reduce(self, g_nodes: np.ndarray) -> np.ndarray:
        free = self.node_dof >= 0
        return np.bincount(self.node_dof[free], weights=g_nodes[free], minlength=self.n_dofs)


def free_dofmap(mesh: Mesh) -> DofMap:
    """Dofs of the inclusion-free problem on the same triangulation (all triangles active)."""
    n = mesh.n_nodes
    node_dof = -np.ones(n, dtype=int)
    free = ~np.isin(np.arange(n), mesh.outer_nodes)
    idx = np.flatnonzero(free)
    node_dof[idx] = np.arange(len(idx))
    return DofMap(node_dof, len(idx), {}, np.ones(mesh.n_triangles, dtype=bool))


def build_dofmap(mesh: Mesh, fix_outer: bool = True) -> DofMap:
    """Dofs: one per background node, one per superconducting component.

    Outer boundary nodes are fixed (Dirichlet). Nodes touching only insulating
    triangles are fixed as well; their values never enter the energy.
    Background pieces that do not reach the outer boundary are pinned to 0.
    """
    n = mesh.n_nodes
    kinds = mesh.kinds
    active = mesh.region == 0
    node_dof = -np.ones(n, dtype=int)
    bg_nodes = np.zeros(n, dtype=bool)
    bg_nodes[mesh.triangles[active].ravel()] = True

    sc_nodes = {}
    for i, k in enumerate(kinds):
        if k == Kind.SUPERCONDUCTING:
            sc_nodes[i] = mesh.inclusion_nodes(i)

    free = bg_nodes.copy()
    if fix_outer:
        free[mesh.outer_nodes] = False
    for nodes in sc_nodes.values():
        free[nodes] = False
    idx = np.flatnonzero(free)
    node_dof[idx] = np.arange(len(idx))
    n_dofs = len(idx)
    sc_dof = {}
    for i, nodes in sc_nodes.items():
        node_dof[nodes] = n_dofs
        sc_dof[i] = n_dofs
        n_dofs += 1

    dm = DofMap(node_dof, n_dofs, sc_dof, active)
    if fix_outer:
        dm = _pin_floating(mesh, dm)
    return dm


def _pin_floating(mesh: Mesh, dm: DofMap) -> DofMap:
    """Pin dofs in background pieces that are not connected to the outer boundary."""
    if dm.n_dofs == 0:
        return dm
    tri = mesh.triangles[dm.active]
    d = dm.node_dof[tri]
    outer = dm.n_dofs  # virtual node standing for every fixed boundary value
    d = np.where(d < 0, np.where(mesh.outer_mask[tri], outer, -1), d)
    rows, cols = [], []
    for a, b in ((0, 1), (1, 2), (2, 0)):
        ok = (d[:, a] >= 0) & (d[:, b] >= 0)
        rows.append(d[ok, a])
        cols.append(d[ok, b])
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    g = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(outer + 1, outer + 1))
    _, lab = connected_components(g, directed=False)
    floating = lab[:outer] != lab[outer]
    if not floating.any():
        return dm
    log.warning("%d dofs are cut off from the outer boundary and pinned to 0", int(floating.sum()))
    keep = ~floating
    new_index = -np.ones(dm.n_dofs, dtype=int)
    new_index[keep] = np.arange(int(keep.sum()))
    node_dof = np.where(dm.node_dof >= 0, new_index[np.maximum(dm.node_dof, 0)], -1)
    sc_dof = {i: int(new_index[j]) for i, j in dm.sc_dof.items() if new_index[j] >= 0}
    return DofMap(node_dof, int(keep.sum()), sc_dof, dm.active)


def stiffness(mesh: Mesh, weights: np.ndarray | None = None, mask: np.ndarray | None = None) -> sp.csr_matrix:
    """Node-level P1 stiffness matrix ``sum_T w_T |T| grad phi_i . grad phi_j``."""
    tri = mesh.triangles
    g = mesh.grads
    w = mesh.areas if weights is None else mesh.areas * weights
    if mask is not None:
        tri, g, w = tri[mask], g[mask], w[mask]
    local = np.einsum("tkd,tld->tkl", g, g) * w[:, None, None]
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_nodes
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def mass_matrix(mesh: Mesh, mask: np.ndarray | None = None) -> sp.csr_matrix:
    tri = mesh.triangles
    w = mesh.areas
    if mask is not None:
        tri, w = tri[mask], w[mask]
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = w[:, None, None] * ref[None]
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_nodes
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


# ---------------------------------------------------------------------------
# Regularised p-energy density phi(v) = (|v|^2 + eps^2)^{p/2} and its derivatives


def phi(v: np.ndarray, p: float, eps: float) -> np.ndarray:
    return (np.einsum("td,td->t", v, v) + eps * eps) ** (p / 2)


def dphi(v: np.ndarray, p: float, eps: float) -> np.ndarray:
    s = np.einsum("td,td->t", v, v) + eps * eps
    with np.errstate(divide="ignore", invalid="ignore"):
        c = p * np.where(s > 0, s ** (p / 2 - 1), 0.0)
    return c[:, None] * v


def d2phi(v: np.ndarray, p: float, eps: float) -> np.ndarray:
    s = np.einsum("td,td->t", v, v) + eps * eps
    q = p / 2 - 1
    with np.errstate(divide="ignore", invalid="ignore"):
        base = p * np.where(s > 0, s**q, 0.0)
        k = np.where(s > 0, 2 * q / s, 0.0)
    h = base[:, None, None] * (np.eye(2)[None] + k[:, None, None] * np.einsum("ti,tj->tij", v, v))
    return h


def assemble_hessian(mesh: Mesh, dm: DofMap, mask: np.ndarray, hv: np.ndarray, weight: np.ndarray) -> sp.csc_matrix:
    """Reduced matrix ``P^T (sum_T w_T G_T^T H_T G_T) P`` for triangles in ``mask``."""
    tri = mesh.triangles[mask]
    g = mesh.grads[mask]
    local = np.einsum("tkd,tde,tle->tkl", g, hv, g) * weight[:, None, None]
    d = dm.node_dof[tri]
    rows = np.repeat(d, 3, axis=1).ravel()
    cols = np.tile(d, (1, 3)).ravel()
    vals = local.ravel()
    ok = (rows >= 0) & (cols >= 0)
    return sp.csc_matrix((vals[ok], (rows[ok], cols[ok])), shape=(dm.n_dofs, dm.n_dofs))


def nodal_gradient(mesh: Mesh, mask: np.ndarray, flux: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Nodal vector ``sum_T w_T flux_T . grad phi_k`` over triangles in ``mask``."""
    tri = mesh.triangles[mask]
    loc = np.einsum("td,tkd->tk", flux, mesh.grads[mask]) * weight[:, None]
    return np.bincount(tri.ravel(), weights=loc.ravel(), minlength=mesh.n_nodes)


@dataclass
class NewtonResult:
    x: np.ndarray
    value: float
    converged: bool
    iterations: int
    grad_norms: list = field(default_factory=list)


def newton_minimize(fun, x0: np.ndarray, options: SolverOptions, callback=None, g_ref: float | None = None,
                    tol: float | None = None) -> NewtonResult:
    """Damped Newton with Armijo backtracking for a smooth convex functional.

    ``fun(x)`` returns ``(value, grad, hess)``; ``hess`` must be a sparse SPD matrix.
    Convergence is declared when ``|grad| <= tol * g_ref``; ``g_ref`` defaults to
    the gradient norm at ``x0``.
    """
    tol = options.newton_tol if tol is None else tol
    x = np.array(x0, dtype=float)
    val, g, H = fun(x)
    g0 = float(np.linalg.norm(g))
    norms = [g0]
    if g_ref is not None and g_ref > 0:
        g0 = g_ref
    if g0 == 0.0 or len(x) == 0:
        return NewtonResult(x, val, True, 0, norms)
    for it in range(1, options.max_iters + 1):
        try:
            d = -splu(H.tocsc()).solve(g)
        except RuntimeError as exc:
            raise SingularSystem(str(exc)) from exc
        slope = float(g @ d)
        if slope >= 0:
            d, slope = -g, -float(g @ g)
        step = 1.0
        while True:
            xn = x + step * d
            vn, gn, Hn = fun(xn)
            # accept on sufficient decrease; near the optimum round-off dominates
            # the energy difference, so also accept a step that shrinks the gradient
            if vn <= val + options.armijo * step * slope or (
                abs(vn - val) <= 1e-14 * abs(val) and np.linalg.norm(gn) < norms[-1]
            ):
                break
            step *= options.backtrack
            if step < options.min_step:
                log.debug("line search stalled at iteration %d", it)
                return NewtonResult(x, val, norms[-1] <= tol * g0, it, norms)
        x, val, g, H = xn, vn, gn, Hn
        norms.append(float(np.linalg.norm(g)))
        if callback is not None:
            callback(it, x, val, norms[-1])
        if norms[-1] <= tol * g0:
            return _polish(fun, x, val, g, H, it, norms)
    return NewtonResult(x, val, False, options.max_iters, norms)


def _polish(fun, x, val, g, H, it, norms, extra=3):
    """A few more full Newton steps while they still cut the gradient tenfold."""
    for _ in range(extra):
        try:
            xn = x - splu(H.tocsc()).solve(g)
        except RuntimeError:
            break
        vn, gn, Hn = fun(xn)
        gnorm = float(np.linalg.norm(gn))
        if not (gnorm < 0.1 * norms[-1] and vn <= val + 1e-12 * abs(val)):
            break
        x, val, g, H = xn, vn, gn, Hn
        norms.append(gnorm)
        it += 1
    return NewtonResult(x, val, True, it, norms)


# ---------------------------------------------------------------------------
# Forward problem


@dataclass
class DiscreteSolution:
    scenario: Scenario
    mesh: Mesh
    nodal_values: np.ndarray
    component_constants: dict
    p: float
    epsilon: float
    converged: bool = True
    iterations: int = 0
    grad_norms: list = field(default_factory=list)
    dofmap: DofMap | None = None

    @property
    def gradients(self) -> np.ndarray:
        return self.mesh.gradient(self.nodal_values)


def _sigma(scenario: Scenario) -> float:
    return float(scenario.background_sigma)


def _dirichlet_vector(mesh: Mesh, trace: np.ndarray) -> np.ndarray:
    trace = np.asarray(trace, dtype=float)
    if trace.shape != (len(mesh.outer_nodes),):
        raise ValueError(f"trace must have one value per outer boundary node ({len(mesh.outer_nodes)})")
    if not np.all(np.isfinite(trace)):
        raise ValueError("trace contains non-finite values")
    u = np.zeros(mesh.n_nodes)
    u[mesh.outer_nodes] = trace
    return u


def _constants(dm: DofMap, x: np.ndarray) -> dict:
    return {i: float(x[j]) for i, j in dm.sc_dof.items()}


def solve_p2(scenario: Scenario, mesh: Mesh, dirichlet_trace: np.ndarray, dofmap: DofMap | None = None) -> DiscreteSolution:
    """Galerkin solution of the linear (p = 2) problem."""
    dm = dofmap or build_dofmap(mesh)
    u_fixed = _dirichlet_vector(mesh, dirichlet_trace)
    x = _linear_solve(mesh, dm, u_fixed, _sigma(scenario))
    u = dm.expand(x, u_fixed)
    return DiscreteSolution(scenario, mesh, u, _constants(dm, x), 2.0, 0.0, True, 1, [], dm)


def _linear_solve(mesh: Mesh, dm: DofMap, u_fixed: np.ndarray, sigma: float) -> np.ndarray:
    if dm.n_dofs == 0:
        return np.zeros(0)
    K = stiffness(mesh, mask=dm.active) * sigma
    P = dm.P
    A = (P.T @ K @ P).tocsc()
    b = -(P.T @ (K @ u_fixed))
    try:
        x = splu(A).solve(b)
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from exc
    r = A @ x - b
    scale = max(np.linalg.norm(b), np.abs(A).max() * np.linalg.norm(x), 1e-300)
    if np.linalg.norm(r) > 1e-12 * scale:
        # one step of iterative refinement
        x -= splu(A).solve(r)
    return x


def default_epsilon(trace: np.ndarray, options: SolverOptions) -> float:
    if options.epsilon is not None:
        return float(options.epsilon)
    osc = float(np.ptp(trace)) if len(trace) else 0.0
    return options.eps_rel * osc


def solve_p(
    scenario: Scenario,
    mesh: Mesh,
    dirichlet_trace: np.ndarray,
    options: SolverOptions | None = None,
    initial: np.ndarray | None = None,
    p: float | None = None,
    dofmap: DofMap | None = None,
) -> DiscreteSolution:
    """Minimise the regularised discrete energy by damped Newton.

    ``initial`` is a nodal field used as the starting iterate (only its free
    values matter); by default the p = 2 solution is used.
    """
    options = options or SolverOptions()
    p = scenario.p if p is None else p
    if not (p > 1 and math.isfinite(p)):
        raise BadExponent(f"exponent p must lie in (1, inf), got {p}")
    dm = dofmap or build_dofmap(mesh)
    u_fixed = _dirichlet_vector(mesh, dirichlet_trace)
    sigma = _sigma(scenario)
    eps = default_epsilon(np.asarray(dirichlet_trace), options)
    if initial is None:
        x0 = _linear_solve(mesh, dm, u_fixed, sigma)
    else:
        x0 = dm.restrict(np.asarray(initial, dtype=float))

    # reference gradient: zero extension of the data, independent of the start
    g_ref = float(np.linalg.norm(energy_functional(mesh, dm, u_fixed, p, max(eps, 1e-300), sigma)(np.zeros(dm.n_dofs))[1]))
    osc = float(np.ptp(dirichlet_trace)) if len(dirichlet_trace) else 0.0
    if p < 2 and osc > 0:
        # continuation in epsilon; each stage starts with majorised (Kacanov) steps,
        # since plain Newton overshoots along grad u when p < 2
        stages = [e for e in osc * 10.0 ** -np.arange(1, 8, 2) if e > eps] + [eps]
        for k, e in enumerate(stages):
            x0 = newton_minimize(energy_functional(mesh, dm, u_fixed, p, e, sigma, majorize=True), x0, options,
                                 g_ref=g_ref, tol=1e-4).x
            if k < len(stages) - 1:
                x0 = newton_minimize(energy_functional(mesh, dm, u_fixed, p, e, sigma), x0, options, g_ref=g_ref,
                                     tol=1e-6).x
    fun = energy_functional(mesh, dm, u_fixed, p, eps, sigma)
    res = newton_minimize(fun, x0, options, g_ref=g_ref)
    if not res.converged:
        log.warning("Newton did not converge after %d iterations (|g|/|g0| = %.2e)", res.iterations,
                    res.grad_norms[-1] / max(res.grad_norms[0], 1e-300))
    u = dm.expand(res.x, u_fixed)
    return DiscreteSolution(scenario, mesh, u, _constants(dm, res.x), p, eps, res.converged, res.iterations,
                            res.grad_norms, dm)


def energy_functional(mesh: Mesh, dm: DofMap, u_fixed: np.ndarray, p: float, eps: float, sigma: float,
                      majorize: bool = False):
    """Value, gradient and Hessian of the regularised energy in dof coordinates.

    With ``majorize`` (useful for p < 2) the Hessian is replaced by its isotropic
    part ``p s^{p/2-1} I``, which dominates it and makes unit steps monotone.
    """
    mask = dm.active
    w = sigma * mesh.areas[mask]

    def fun(x):
        u = dm.expand(x, u_fixed)
        v = mesh.gradient(u)[mask]
        val = float(w @ phi(v, p, eps))
        g = dm.reduce(nodal_gradient(mesh, mask, dphi(v, p, eps), w))
        if majorize:
            s = np.einsum("td,td->t", v, v) + eps * eps
            hv = (p * s ** (p / 2 - 1))[:, None, None] * np.eye(2)[None]
        else:
            hv = d2phi(v, p, eps)
        H = assemble_hessian(mesh, dm, mask, hv, w)
        return val, g, H

    return fun


def _active(solution: DiscreteSolution) -> np.ndarray:
    if solution.dofmap is not None:
        return solution.dofmap.active
    return solution.mesh.region == 0


def energy(solution: DiscreteSolution, regularized: bool = False) -> float:
    """Discrete energy ``sum_T sigma |T| |grad u_T|^p`` over background triangles."""
    mesh = solution.mesh
    mask = _active(solution)
    v = solution.gradients[mask]
    eps = solution.epsilon if regularized else 0.0
    return float(_sigma(solution.scenario) * mesh.areas[mask] @ phi(v, solution.p, eps))


def flux_field(solution: DiscreteSolution) -> np.ndarray:
    """Per-triangle flux ``sigma |grad u|^{p-2} grad u``; zero inside every inclusion."""
    mesh = solution.mesh
    out = np.zeros((mesh.n_triangles, 2))
    mask = _active(solution)
    out[mask] = _sigma(solution.scenario) * dphi(solution.gradients[mask], solution.p, 0.0) / solution.p
    return out


def _weak_residual(solution: DiscreteSolution) -> tuple[np.ndarray, DofMap]:
    mesh = solution.mesh
    dm = solution.dofmap or build_dofmap(mesh)
    fl = flux_field(solution)
    mask = dm.active
    g_nodes = nodal_gradient(mesh, mask, fl[mask], mesh.areas[mask])
    return dm.reduce(g_nodes), dm


def component_flux(solution: DiscreteSolution, superconductor_index: int) -> float:
    """Discrete total flux through the boundary of a superconducting component.

    This is the weak residual of the component's tied degree of freedom.
    """
    r, dm = _weak_residual(solution)
    if superconductor_index not in dm.sc_dof:
        raise KeyError(f"inclusion {superconductor_index} is not a superconductor")
    return float(r[dm.sc_dof[superconductor_index]])


def el_residual(solution: DiscreteSolution) -> float:
    """Scale-free Euler-Lagrange residual.

    ``max_j |int flux . grad phi_j| / (|grad phi_j|_{L2} |flux|_{L2})`` over the
    admissible test functions (hats vanishing on the outer boundary, tied hats on
    superconductors). Lies in [0, 1].
    """
    r, dm = _weak_residual(solution)
    if dm.n_dofs == 0:
        return 0.0
    mesh = solution.mesh
    K = stiffness(mesh, mask=dm.active)
    P = dm.P
    diag = np.asarray((P.T @ K @ P).diagonal())
    fl = flux_field(solution)
    fnorm = math.sqrt(float(mesh.areas @ np.einsum("td,td->t", fl, fl)))
    if fnorm == 0.0:
        return 0.0
    return float(np.max(np.abs(r) / np.sqrt(np.maximum(diag, 1e-300))) / fnorm)


def solution_csv(solution: DiscreteSolution) -> str:
    lines = ["node,x,y,u"]
    for i, ((x, y), u) in enumerate(zip(solution.mesh.nodes, solution.nodal_values)):
        lines.append(f"{i},{x:.12g},{y:.12g},{u:.12g}")
    return "\n".join(lines) + "\n"


def flux_csv(solution: DiscreteSolution) -> str:
    lines = ["triangle,fx,fy"]
    for i, (fx, fy) in enumerate(flux_field(solution)):
        lines.append(f"{i},{fx:.12g},{fy:.12g}")
    return "\n".join(lines) + "\n"
