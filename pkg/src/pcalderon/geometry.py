"""Scenario geometry: domains, inclusions, support functions and half-plane hulls.

Shapes are restricted to circles and simple polygons so that every boundary is
Lipschitz by construction and support functions are exact.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np
import shapely
import shapely.geometry as sg


class GeometryError(ValueError):
    """Base class for invalid geometric input."""


class DisjointnessViolation(GeometryError):
    pass


class NonLipschitzShape(GeometryError):
    pass


class BadExponent(GeometryError):
    pass


class EmptyInclusion(GeometryError):
    pass


class UnboundedResult(GeometryError):
    pass


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise NonLipschitzShape(f"circle radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def area(self) -> float:
        return math.pi * self.radius**2

    @property
    def perimeter(self) -> float:
        return 2 * math.pi * self.radius

    def bbox(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        r = self.radius
        return cx - r, cy - r, cx + r, cy + r

    def contains(self, pts: np.ndarray, tol: float = 0.0) -> np.ndarray:
        d = np.hypot(pts[..., 0] - self.center[0], pts[..., 1] - self.center[1])
        return d < self.radius + tol

    def boundary_distance(self, pts: np.ndarray) -> np.ndarray:
        d = np.hypot(pts[..., 0] - self.center[0], pts[..., 1] - self.center[1])
        return np.abs(d - self.radius)

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        """Negative inside, positive outside."""
        d = np.hypot(pts[..., 0] - self.center[0], pts[..., 1] - self.center[1])
        return d - self.radius

    def support(self, rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        return rho @ np.asarray(self.center) + self.radius

    def discretize(self, spacing: float) -> np.ndarray:
        """Counter-clockwise points on the circle, at most ``spacing`` apart."""
        n = max(8, int(math.ceil(self.perimeter / spacing)))
        theta = 2 * np.pi * np.arange(n) / n
        return np.column_stack(
            [self.center[0] + self.radius * np.cos(theta), self.center[1] + self.radius * np.sin(theta)]
        )

    def to_shapely(self, resolution: int = 256):
        return sg.Point(self.center).buffer(self.radius, resolution)

    def scaled(self, factor: float) -> "Circle":
        return Circle(self.center, self.radius * factor)


@dataclass(frozen=True)
class Polygon:
    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise NonLipschitzShape("polygon needs at least three 2D vertices")
        if np.allclose(v[0], v[-1]):
            v = v[:-1]
        poly = sg.Polygon(v)
        if not poly.is_valid or not sg.LinearRing(v).is_simple:
            raise NonLipschitzShape("polygon is self-intersecting")
        if poly.area <= 0:
            raise NonLipschitzShape("polygon has zero area")
        # store counter-clockwise
        if _signed_area(v) < 0:
            v = v[::-1]
        object.__setattr__(self, "vertices", tuple(map(tuple, v.tolist())))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    @property
    def area(self) -> float:
        return _signed_area(self.array)

    @property
    def perimeter(self) -> float:
        v = self.array
        return float(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1).sum())

    def bbox(self) -> tuple[float, float, float, float]:
        v = self.array
        return v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max()

    def contains(self, pts: np.ndarray, tol: float = 0.0) -> np.ndarray:
        inside = _points_in_polygon(pts, self.array)
        if tol > 0:
            inside |= self.boundary_distance(pts) < tol
        return inside

    def boundary_distance(self, pts: np.ndarray) -> np.ndarray:
        return _polyline_distance(pts, self.array, closed=True)

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        d = self.boundary_distance(pts)
        return np.where(_points_in_polygon(pts, self.array), -d, d)

    def support(self, rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        return (self.array @ rho.T).max(axis=0)

    def discretize(self, spacing: float) -> np.ndarray:
        v = self.array
        out = []
        for a, b in zip(v, np.roll(v, -1, axis=0)):
            n = max(1, int(math.ceil(np.linalg.norm(b - a) / spacing)))
            s = np.arange(n)[:, None] / n
            out.append(a + s * (b - a))
        return np.vstack(out)

    def to_shapely(self, resolution: int = 0):
        return sg.Polygon(self.array)

    def scaled(self, factor: float) -> "Polygon":
        v = self.array
        c = v.mean(axis=0)
        return Polygon(tuple(map(tuple, c + factor * (v - c))))


Shape = Union[Circle, Polygon]


class Kind(str, enum.Enum):
    INSULATING = "insulating"
    SUPERCONDUCTING = "superconducting"


@dataclass(frozen=True)
class InclusionComponent:
    shape: Shape
    kind: Kind

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))


@dataclass(frozen=True)
class Scenario:
    """Domain, tagged inclusions, background conductivity and exponent."""

    domain: Shape
    inclusions: tuple[InclusionComponent, ...] = ()
    background_sigma: float = 1.0
    p: float = 2.0
    clearance: float = field(default=0.0, compare=False)

    @property
    def diameter(self) -> float:
        x0, y0, x1, y1 = self.domain.bbox()
        if isinstance(self.domain, Circle):
            return 2 * self.domain.radius
        v = self.domain.array
        return float(np.max(np.linalg.norm(v[:, None] - v[None], axis=-1)))

    def components(self, kind: Kind | None = None) -> list[InclusionComponent]:
        return [c for c in self.inclusions if kind is None or c.kind == kind]

    @property
    def has_insulators(self) -> bool:
        return any(c.kind == Kind.INSULATING for c in self.inclusions)

    @property
    def has_superconductors(self) -> bool:
        return any(c.kind == Kind.SUPERCONDUCTING for c in self.inclusions)

    def with_p(self, p: float) -> "Scenario":
        return build_scenario(self.domain, self.inclusions, self.background_sigma, p, self.clearance or None)

    def empty(self) -> "Scenario":
        """The same domain with no inclusions and unit conductivity."""
        return Scenario(self.domain, (), 1.0, self.p, self.clearance)

    def region_of(self, pts: np.ndarray) -> np.ndarray:
        """0 for background, 1 + i for points inside inclusion i."""
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1], dtype=int)
        for i, comp in enumerate(self.inclusions):
            out[comp.shape.contains(pts)] = i + 1
        return out


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _points_in_polygon(pts: np.ndarray, v: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    x, y = pts[..., 0][..., None], pts[..., 1][..., None]
    x0, y0 = v[:, 0], v[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    cond = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    crossings = cond & (x < xint)
    return (crossings.sum(axis=-1) % 2) == 1


def _polyline_distance(pts: np.ndarray, v: np.ndarray, closed: bool = True) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    a = v if closed else v[:-1]
    b = np.roll(v, -1, axis=0) if closed else v[1:]
    flat = pts.reshape(-1, 2)
    best = np.full(len(flat), np.inf)
    for pa, pb in zip(a, b):
        d = pb - pa
        t = np.clip(((flat - pa) @ d) / (d @ d), 0.0, 1.0)
        proj = pa + t[:, None] * d
        best = np.minimum(best, np.hypot(*(flat - proj).T))
    return best.reshape(pts.shape[:-1])


def make_shape(spec) -> Shape:
    """Build a shape from a mapping like ``{"kind": "circle", "center": .., "radius": ..}``."""
    if isinstance(spec, (Circle, Polygon)):
        return spec
    kind = spec.get("kind", spec.get("shape"))
    if kind == "circle":
        return Circle(tuple(spec.get("center", (0.0, 0.0))), float(spec["radius"]))
    if kind == "polygon":
        return Polygon(tuple(map(tuple, spec["vertices"])))
    if kind == "square":
        c = np.asarray(spec.get("center", (0.0, 0.0)), dtype=float)
        a = float(spec["side"]) / 2
        return Polygon(tuple(map(tuple, c + a * np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]]))))
    raise GeometryError(f"unknown shape kind {kind!r}")


def _boundary_samples(shape: Shape, n: int = 720) -> np.ndarray:
    return shape.discretize(shape.perimeter / n)


def shape_distance(a: Shape, b: Shape) -> float:
    """Minimum distance between two closed curves (0 if they cross)."""
    return float(a.to_shapely(512).boundary.distance(b.to_shapely(512).boundary))


def build_scenario(
    domain_spec,
    inclusion_specs: Iterable = (),
    background_sigma: float = 1.0,
    p: float = 2.0,
    clearance: float | None = None,
    sigma_bound: float = 1e6,
) -> Scenario:
    """Validate a scenario.

    Every inclusion must sit strictly inside the domain and the closures of the
    outer boundary and of all inclusion components must be at least
    ``clearance`` apart (default 2% of the domain diameter).
    """
    if not (p > 1 and math.isfinite(p)):
        raise BadExponent(f"exponent p must lie in (1, inf), got {p}")
    if not (1.0 / sigma_bound <= background_sigma <= sigma_bound):
        raise GeometryError(f"background conductivity {background_sigma} is not bounded away from 0 and inf")
    domain = make_shape(domain_spec)
    comps = []
    for spec in inclusion_specs:
        if isinstance(spec, InclusionComponent):
            comps.append(spec)
            continue
        spec = dict(spec)
        try:
            kind = Kind(spec.pop("kind"))
        except (KeyError, ValueError) as exc:
            raise GeometryError(f"inclusion needs kind insulating|superconducting: {exc}") from None
        spec["kind"] = spec.pop("shape", "circle")
        comps.append(InclusionComponent(make_shape(spec), kind))
    scen = Scenario(domain, tuple(comps), float(background_sigma), float(p))
    if clearance is None:
        clearance = 0.02 * scen.diameter
    object.__setattr__(scen, "clearance", float(clearance))

    dom_shp = domain.to_shapely(512)
    for i, c in enumerate(comps):
        inc = c.shape.to_shapely(512)
        if not dom_shp.contains(inc):
            raise DisjointnessViolation(f"inclusion {i} is not strictly inside the domain")
        if shape_distance(domain, c.shape) < clearance:
            raise DisjointnessViolation(f"inclusion {i} is closer than {clearance:g} to the outer boundary")
    for i in range(len(comps)):
        for j in range(i + 1, len(comps)):
            si, sj = comps[i].shape, comps[j].shape
            if si.to_shapely(512).intersects(sj.to_shapely(512)) or shape_distance(si, sj) < clearance:
                raise DisjointnessViolation(f"inclusions {i} and {j} are closer than {clearance:g}")
    return scen


def _as_shapes(obj) -> list[Shape]:
    if isinstance(obj, Scenario):
        return [c.shape for c in obj.inclusions]
    if isinstance(obj, (Circle, Polygon)):
        return [obj]
    if isinstance(obj, InclusionComponent):
        return [obj.shape]
    return [c.shape if isinstance(c, InclusionComponent) else c for c in obj]


def support_function(inclusions, rho) -> float | np.ndarray:
    """Exact support function ``sup_{x in D} x . rho`` of a union of shapes.

    ``rho`` may be a single unit vector or an ``(n, 2)`` array of them.
    """
    shapes = _as_shapes(inclusions)
    if not shapes:
        raise EmptyInclusion("support function of an empty set")
    rho = np.asarray(rho, dtype=float)
    if not np.allclose(np.linalg.norm(rho, axis=-1), 1.0, atol=1e-12):
        raise GeometryError("rho must be a unit vector")
    vals = np.max([s.support(rho) for s in shapes], axis=0)
    return float(vals) if np.ndim(vals) == 0 else vals


def unit_directions(n: int, offset: float = 0.0) -> np.ndarray:
    theta = offset + 2 * np.pi * np.arange(n) / n
    return np.column_stack([np.cos(theta), np.sin(theta)])


def _clip(poly: np.ndarray, rho: np.ndarray, h: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon by ``x . rho <= h``."""
    if len(poly) == 0:
        return poly
    out = []
    vals = poly @ rho - h
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        va, vb = vals[i], vals[(i + 1) % n]
        if va <= 0:
            out.append(a)
        if (va < 0 < vb) or (vb < 0 < va):
            s = va / (va - vb)
            out.append(a + s * (b - a))
    return np.asarray(out).reshape(-1, 2)


def _max_angular_gap(rhos: np.ndarray) -> float:
    ang = np.sort(np.mod(np.arctan2(rhos[:, 1], rhos[:, 0]), 2 * np.pi))
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
    return float(gaps.max())


def halfplane_intersection(samples, bbox=None, clip: bool = False) -> np.ndarray:
    """Intersect the half-planes ``{x : x . rho <= h}``.

    Parameters
    ----------
    samples : sequence of (rho, h)
        Unit normals and support values.
    bbox : (xmin, ymin, xmax, ymax), optional
        Clipping box; required when ``clip`` is set.
    clip : bool
        If the directions leave the intersection unbounded, clip it to ``bbox``
        instead of raising :class:`UnboundedResult`.

    Returns
    -------
    ndarray of shape (m, 2)
        Counter-clockwise vertices of the convex polygon, possibly empty.
    """
    rhos = np.asarray([s[0] for s in samples], dtype=float).reshape(-1, 2)
    hs = np.asarray([s[1] for s in samples], dtype=float)
    if len(rhos) < 3 or _max_angular_gap(rhos) >= np.pi - 1e-12:
        if not clip:
            raise UnboundedResult("directions do not span more than a half circle")
        if bbox is None:
            raise UnboundedResult("clipping requested without a bounding box")
    if bbox is None:
        big = 10.0 * (np.abs(hs).max() + 1.0)
        bbox = (-big, -big, big, big)
    x0, y0, x1, y1 = bbox
    poly = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)
    for rho, h in zip(rhos, hs):
        poly = _clip(poly, rho / np.linalg.norm(rho), h)
        if len(poly) == 0:
            break
    return poly


def polygon_area(v: np.ndarray) -> float:
    v = np.asarray(v, dtype=float)
    return _signed_area(v) if len(v) >= 3 else 0.0


def polygon_contains_shape(poly: np.ndarray, shape: Shape, tol: float = 1e-9) -> bool:
    """True when the convex polygon contains the shape (up to ``tol``)."""
    if len(poly) < 3:
        return False
    pts = _boundary_samples(shape, 2048) if isinstance(shape, Circle) else shape.array
    edges = np.roll(poly, -1, axis=0) - poly
    normals = np.column_stack([edges[:, 1], -edges[:, 0]])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    offs = np.einsum("ij,ij->i", normals, poly)
    if isinstance(shape, Circle):
        # exact: support of the circle along each outward edge normal
        return bool(np.all(shape.support(normals) <= offs + tol))
    return bool(np.all(pts @ normals.T <= offs + tol))


def hausdorff_distance(poly: np.ndarray, shape: Shape, densify: float = 0.05) -> float:
    a = sg.Polygon(poly)
    b = shape.to_shapely(1024)
    return float(shapely.hausdorff_distance(a.boundary, b.boundary, densify=densify))


def polygon_csv(poly: np.ndarray) -> str:
    lines = ["x,y"] + [f"{x:.12g},{y:.12g}" for x, y in np.asarray(poly)]
    return "\n".join(lines) + "\n"


def _svg_path(points: np.ndarray, tf) -> str:
    pts = [tf(p) for p in points]
    return "M " + " L ".join(f"{x:.4f},{y:.4f}" for x, y in pts) + " Z"


def overlay_svg(
    scenario: Scenario,
    polygon: np.ndarray | None = None,
    points: np.ndarray | None = None,
    size: int = 480,
) -> str:
    """SVG showing the domain, the true inclusions, and a recovered polygon or point cloud."""
    x0, y0, x1, y1 = scenario.domain.bbox()
    pad = 0.05 * max(x1 - x0, y1 - y0)
    x0, y0, x1, y1 = x0 - pad, y0 - pad, x1 + pad, y1 + pad
    scale = size / max(x1 - x0, y1 - y0)

    def tf(pt):
        return (pt[0] - x0) * scale, (y1 - pt[1]) * scale

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">']
    out.append(f'<path d="{_svg_path(_boundary_samples(scenario.domain, 256), tf)}" fill="none" stroke="black"/>')
    for comp in scenario.inclusions:
        colour = "#1f77b4" if comp.kind == Kind.SUPERCONDUCTING else "#d62728"
        out.append(
            f'<path d="{_svg_path(_boundary_samples(comp.shape, 256), tf)}" fill="{colour}" '
            'fill-opacity="0.3" stroke="none"/>'
        )
    if polygon is not None and len(polygon) >= 3:
        out.append(f'<path d="{_svg_path(polygon, tf)}" fill="none" stroke="#2ca02c" stroke-width="1.5"/>')
    if points is not None:
        for pt in np.asarray(points).reshape(-1, 2):
            cx, cy = tf(pt)
            out.append(f'<circle cx="{cx:.4f}" cy="{cy:.4f}" r="2" fill="#2ca02c"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
