"""Interface-conforming triangulation of scenarios.

Nodes are placed on every curve (outer boundary and inclusion boundaries) and on
hexagonal lattices graded by a size function; the Delaunay triangulation is
then repaired by splitting curve segments until every segment is a mesh edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .geometry import Circle, GeometryError, Kind, Scenario

OUTER = -1
# lattice spacing relative to the target size; an equilateral triangle with
# edge s has circumdiameter 2 s / sqrt(3)
_SPACING = 0.8
_CURVE_SPACING = 0.65


class MeshFailure(GeometryError):
    pass


@dataclass(eq=False)
class Mesh:
    """Tagged P1 triangulation.

    ``region[T]`` is 0 for background triangles and ``1 + i`` for triangles in
    inclusion ``i`` of the scenario. ``edge_tags`` is ``OUTER`` for outer
    boundary edges and ``i`` for edges on the boundary of inclusion ``i``.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    region: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    outer_nodes: np.ndarray
    h_max: float
    h_fine: float
    kinds: tuple = ()
    meta: dict = field(default_factory=dict)
    scenario: Scenario | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def grads(self) -> np.ndarray:
        """Gradients of the three hat functions on each triangle, shape (M, 3, 2)."""
        p = self.nodes[self.triangles]
        x, y = p[..., 0], p[..., 1]
        g = np.empty((len(p), 3, 2))
        for k in range(3):
            i, j = (k + 1) % 3, (k + 2) % 3
            g[:, k, 0] = y[:, i] - y[:, j]
            g[:, k, 1] = x[:, j] - x[:, i]
        return g / (2 * self.areas)[:, None, None]

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    @cached_property
    def circumdiameters(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
        b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
        c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
        return a * b * c / (2 * self.areas)

    @cached_property
    def outer_mask(self) -> np.ndarray:
        m = np.zeros(self.n_nodes, dtype=bool)
        m[self.outer_nodes] = True
        return m

    def gradient(self, u: np.ndarray) -> np.ndarray:
        """Per-triangle gradient of a nodal P1 field."""
        return np.einsum("tk,tkd->td", u[self.triangles], self.grads)

    def retagged(self, scenario: Scenario) -> "Mesh":
        """The same triangulation for a scenario that differs only in the inclusion kinds or exponent."""
        if self.scenario is None or len(scenario.inclusions) != len(self.kinds):
            raise ValueError("retagging needs a scenario with the same inclusion components")
        if scenario.domain != self.scenario.domain or any(
                a.shape != b.shape for a, b in zip(scenario.inclusions, self.scenario.inclusions)):
            raise ValueError("retagging needs the same domain and inclusion shapes")
        return Mesh(self.nodes, self.triangles, self.region, self.boundary_edges, self.edge_tags, self.outer_nodes,
                    self.h_max, self.h_fine, tuple(c.kind for c in scenario.inclusions), dict(self.meta), scenario)

    def region_mask(self, kind: Kind | None = None) -> np.ndarray:
        """Triangles inside inclusions of the given kind (all inclusions if None)."""
        if kind is None:
            return self.region > 0
        idx = [i + 1 for i, k in enumerate(self.kinds) if k == kind]
        return np.isin(self.region, idx)

    def inclusion_nodes(self, i: int) -> np.ndarray:
        return np.unique(self.triangles[self.region == i + 1])

    def resolved_h(self, band: float | None = None) -> float:
        """Largest circumdiameter among triangles in or near the inclusions."""
        if not self.kinds:
            return float(self.circumdiameters.max())
        d = self.meta.get("inclusion_distance")
        band = self.meta.get("band", 0.0) if band is None else band
        sel = d <= band + 1e-12
        return float(self.circumdiameters[sel].max()) if sel.any() else float(self.circumdiameters.max())

    def check(self) -> None:
        """Raise MeshFailure unless the triangulation is conforming and positively oriented."""
        if np.any(self.areas <= 0):
            raise MeshFailure("inverted or degenerate triangle")
        e = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        if counts.max() > 2:
            raise MeshFailure("edge shared by more than two triangles")
        n_boundary = int((counts == 1).sum())
        if n_boundary != int((self.edge_tags == OUTER).sum()):
            raise MeshFailure("outer boundary is not resolved by mesh edges")


def _hex_lattice(x0, y0, x1, y1, s):
    dy = s * math.sqrt(3) / 2
    ny = int(math.ceil((y1 - y0) / dy)) + 1
    nx = int(math.ceil((x1 - x0) / s)) + 2
    j, i = np.mgrid[0:ny, 0:nx]
    x = x0 + s * (i + 0.5 * (j % 2)) - s / 2
    y = y0 + dy * j
    return np.column_stack([x.ravel(), y.ravel()])


class _Sizer:
    def __init__(self, scenario: Scenario, h_max: float, h_fine: float, band: float, grade: float):
        self.scenario = scenario
        self.h_max, self.h_fine, self.band, self.grade = h_max, h_fine, band, grade

    def inclusion_distance(self, pts: np.ndarray) -> np.ndarray:
        """Distance to the closest inclusion (0 inside inclusions)."""
        if not self.scenario.inclusions:
            return np.full(len(pts), np.inf)
        sd = np.min([c.shape.signed_distance(pts) for c in self.scenario.inclusions], axis=0)
        return np.maximum(sd, 0.0)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        if self.h_fine >= self.h_max:
            return np.full(len(pts), self.h_max)
        d = self.inclusion_distance(pts)
        return np.clip(self.h_fine + self.grade * np.maximum(d - self.band, 0.0), self.h_fine, self.h_max)


def _curve_points(shape, spacing: float) -> list[np.ndarray]:
    return list(shape.discretize(spacing))


def triangulate(
    scenario: Scenario,
    h_max: float,
    h_fine: float | None = None,
    band: float = 0.0,
    grade: float = 0.3,
    max_repairs: int = 40,
) -> Mesh:
    """Triangulate the scenario with interfaces resolved by mesh edges.

    Parameters
    ----------
    scenario : Scenario
        Geometry to mesh.
    h_max : float
        Upper bound on triangle circumdiameter.
    h_fine : float, optional
        Target size inside the inclusions and within ``band`` of them; the size
        then grows linearly with slope ``grade`` up to ``h_max``.
    """
    if not h_max > 0:
        raise MeshFailure("h_max must be positive")
    h_fine = h_max if h_fine is None else min(h_fine, h_max)
    sizer = _Sizer(scenario, h_max, h_fine, band, grade)

    shapes = [scenario.domain] + [c.shape for c in scenario.inclusions]
    curves = []
    spacings = []
    for k, shape in enumerate(shapes):
        samples = shape.discretize(shape.perimeter / 512)
        s = _CURVE_SPACING * float(sizer(samples).min())
        spacings.append(s)
        curves.append(_curve_points(shape, s))

    lattice = _lattice_points(scenario, sizer, shapes, spacings)

    for _ in range(max_repairs):
        curve_arr = [np.asarray(c) for c in curves]
        offsets = np.cumsum([0] + [len(c) for c in curve_arr])
        pts = np.vstack(curve_arr + [lattice])
        tri = Delaunay(pts)
        simplices = tri.simplices
        cent = pts[simplices].mean(axis=1)
        keep = scenario.domain.contains(cent)
        simplices = simplices[keep]
        a = _areas(pts, simplices)
        simplices = simplices[np.abs(a) > 1e-12 * h_fine**2]
        a = _areas(pts, simplices)
        simplices[a < 0] = simplices[a < 0][:, [0, 2, 1]]

        edges = set(map(tuple, np.sort(simplices[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1).tolist()))
        missing = []
        for k, c in enumerate(curve_arr):
            n = len(c)
            idx = offsets[k] + np.arange(n)
            seg = np.sort(np.column_stack([idx, np.roll(idx, -1)]), axis=1)
            for j, (i0, i1) in enumerate(seg.tolist()):
                if (i0, i1) not in edges:
                    missing.append((k, j))
        if not missing:
            big = _circumdiameters(pts, simplices) > h_max * (1 + 1e-9)
            if not big.any():
                break
            extra = pts[simplices[big]].mean(axis=1)
            dmin = np.min([s.boundary_distance(extra) for s in shapes], axis=0)
            extra = extra[dmin > 0.2 * min(spacings)]
            if len(extra) == 0:
                raise MeshFailure("cannot satisfy h_max near interfaces")
            lattice = np.vstack([lattice, extra])
            continue
        # split every missing segment at its midpoint and clear its diametral disk
        for k in sorted({k for k, _ in missing}):
            js = sorted({j for kk, j in missing if kk == k}, reverse=True)
            c = curves[k]
            for j in js:
                a0, a1 = np.asarray(c[j]), np.asarray(c[(j + 1) % len(c)])
                mid = _curve_midpoint(shapes[k], a0, a1)
                r = 0.5 * np.linalg.norm(a1 - a0)
                if len(lattice):
                    lattice = lattice[np.linalg.norm(lattice - 0.5 * (a0 + a1), axis=1) > 1.05 * r]
                c.insert(j + 1, mid)
    else:
        raise MeshFailure("segment recovery did not converge")

    used = np.unique(simplices)
    remap = -np.ones(len(pts), dtype=int)
    remap[used] = np.arange(len(used))
    nodes = pts[used]
    triangles = remap[simplices]

    boundary_edges, edge_tags = [], []
    outer_nodes = None
    for k, c in enumerate(curve_arr):
        idx = remap[offsets[k] + np.arange(len(c))]
        if np.any(idx < 0):
            raise MeshFailure("curve node dropped from triangulation")
        boundary_edges.append(np.column_stack([idx, np.roll(idx, -1)]))
        edge_tags.append(np.full(len(idx), OUTER if k == 0 else k - 1))
        if k == 0:
            outer_nodes = idx

    cent = nodes[triangles].mean(axis=1)
    region = scenario.region_of(cent)
    _check_tags(scenario, nodes, triangles, region, h_fine)
    mesh = Mesh(
        nodes=nodes,
        triangles=triangles,
        region=region,
        boundary_edges=np.vstack(boundary_edges),
        edge_tags=np.concatenate(edge_tags),
        outer_nodes=outer_nodes,
        h_max=float(h_max),
        h_fine=float(h_fine),
        kinds=tuple(c.kind for c in scenario.inclusions),
        scenario=scenario,
    )
    mesh.meta["band"] = band
    mesh.meta["inclusion_distance"] = sizer.inclusion_distance(cent)
    mesh.check()
    return mesh


def _curve_midpoint(shape, a0, a1):
    if isinstance(shape, Circle):
        c = np.asarray(shape.center)
        m = 0.5 * (a0 + a1) - c
        return c + shape.radius * m / np.linalg.norm(m)
    return 0.5 * (a0 + a1)


def _lattice_points(scenario, sizer, shapes, spacings) -> np.ndarray:
    x0, y0, x1, y1 = scenario.domain.bbox()
    levels = [_SPACING * sizer.h_fine]
    while levels[-1] < _SPACING * sizer.h_max * (1 - 1e-12):
        levels.append(min(2 * levels[-1], _SPACING * sizer.h_max))
    accepted = np.vstack([s.discretize(sp) for s, sp in zip(shapes, spacings)])
    out = []
    for k, s in enumerate(levels):
        hi = levels[k + 1] / _SPACING if k + 1 < len(levels) else np.inf
        if np.isfinite(hi) and scenario.inclusions and sizer.grade > 0:
            reach = sizer.band + (hi - sizer.h_fine) / sizer.grade + s
            bx = np.array([c.shape.bbox() for c in scenario.inclusions])
            box = (
                max(x0, bx[:, 0].min() - reach),
                max(y0, bx[:, 1].min() - reach),
                min(x1, bx[:, 2].max() + reach),
                min(y1, bx[:, 3].max() + reach),
            )
        else:
            box = (x0, y0, x1, y1)
        cand = _hex_lattice(*box, s)
        cand = cand[scenario.domain.contains(cand)]
        if len(cand) == 0:
            continue
        hloc = _SPACING * sizer(cand)
        lo = s if k > 0 else 0.0
        sel = (hloc >= lo) & (hloc < (levels[k + 1] if k + 1 < len(levels) else np.inf))
        cand = cand[sel]
        for shape, sp in zip(shapes, spacings):
            if len(cand) == 0:
                break
            cand = cand[shape.boundary_distance(cand) > 0.6 * max(sp, s)]
        if len(cand) == 0:
            continue
        d, _ = cKDTree(accepted).query(cand)
        cand = cand[d > 0.6 * s]
        accepted = np.vstack([accepted, cand])
        out.append(cand)
    return np.vstack(out) if out else np.zeros((0, 2))


def _areas(pts, simplices):
    p = pts[simplices]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _circumdiameters(pts, simplices):
    p = pts[simplices]
    a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    return a * b * c / (2 * np.abs(_areas(pts, simplices)))


def _check_tags(scenario, nodes, triangles, region, h):
    tol = 1e-9 * max(h, 1e-3)
    for i, comp in enumerate(scenario.inclusions):
        sd = comp.shape.signed_distance(nodes)
        inside = region == i + 1
        if np.any(sd[triangles[inside]] > tol):
            raise MeshFailure(f"triangle straddles the boundary of inclusion {i}")
        if np.any(sd[triangles[~inside]] < -tol):
            raise MeshFailure(f"triangle straddles the boundary of inclusion {i}")
