"""Core geometric types and low-level predicates.

Coordinates are meters in a local Cartesian frame (x east, y north, z up).
Points are plain numpy arrays; the small value types below carry the
extra structure (plane equations, segment provenance, polygon rings).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import Polygon as ShapelyPolygon

from .errors import DegenerateInput

#: Length tolerance for point identity and incidence tests.
EPS_GEOM = 1e-6

#: Planes with |n_z| below this are considered vertical.
VERTICAL_FLOOR = 0.1


@dataclass(frozen=True)
class Plane3:
    """Plane ``n . p + d = 0`` with unit normal ``n``."""

    normal: tuple[float, float, float]
    d: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if n.shape != (3,) or not np.all(np.isfinite(n)) or not np.isfinite(self.d):
            raise DegenerateInput("plane coefficients must be finite 3-vectors")
        norm = np.linalg.norm(n)
        if abs(norm - 1.0) > 1e-12:
            if norm == 0:
                raise DegenerateInput("zero plane normal")
            object.__setattr__(self, "normal", tuple(float(v) for v in n / norm))
            object.__setattr__(self, "d", float(self.d) / norm)
        else:
            object.__setattr__(self, "normal", tuple(float(v) for v in n))
            object.__setattr__(self, "d", float(self.d))

    @classmethod
    def from_height(cls, a: float, b: float, c: float) -> "Plane3":
        """Plane ``z = a x + b y + c`` (upward normal)."""
        n = np.array([-a, -b, 1.0])
        k = np.linalg.norm(n)
        return cls(tuple(n / k), -c / k)

    @property
    def n(self) -> np.ndarray:
        return np.asarray(self.normal)

    def non_vertical(self, floor: float = VERTICAL_FLOOR) -> bool:
        return abs(self.normal[2]) > floor

    def height_form(self) -> tuple[float, float, float]:
        nx, ny, nz = self.normal
        if nz == 0.0:
            raise DegenerateInput("vertical plane has no height form")
        return -nx / nz, -ny / nz, -self.d / nz

    def z_at(self, x, y):
        a, b, c = self.height_form()
        return a * np.asarray(x) + b * np.asarray(y) + c

    def signed_distance(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self.n + self.d

    def translated(self, t) -> "Plane3":
        """The plane moved by vector ``t``."""
        return Plane3(self.normal, self.d - float(np.dot(self.n, t)))


@dataclass(frozen=True)
class Segment2:
    p: tuple[float, float]
    q: tuple[float, float]
    kind: str = "footprint"
    sources: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "p", (float(self.p[0]), float(self.p[1])))
        object.__setattr__(self, "q", (float(self.q[0]), float(self.q[1])))

    @property
    def length(self) -> float:
        return float(np.hypot(self.q[0] - self.p[0], self.q[1] - self.p[1]))

    @property
    def direction(self) -> np.ndarray:
        d = np.subtract(self.q, self.p)
        return d / np.linalg.norm(d)


@dataclass(frozen=True)
class Segment3:
    p: tuple[float, float, float]
    q: tuple[float, float, float]
    kind: str = "intersection"
    sources: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(float(v) for v in self.p))
        object.__setattr__(self, "q", tuple(float(v) for v in self.q))

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.subtract(self.q, self.p)))

    def to_plan(self) -> Segment2:
        return Segment2(self.p[:2], self.q[:2], self.kind, self.sources)


def ring_signed_area(ring) -> float:
    r = np.asarray(ring, dtype=float)
    x, y = r[:, 0], r[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _open_ring(ring) -> np.ndarray:
    r = np.asarray(ring, dtype=float).reshape(-1, 2)
    if len(r) > 1 and np.allclose(r[0], r[-1], atol=0.0, rtol=0.0):
        r = r[:-1]
    return r


@dataclass(frozen=True, eq=False)
class Polygon2:
    """Polygon with a counter-clockwise outer ring and clockwise holes.

    Rings are stored open (first vertex not repeated).
    """

    outer: np.ndarray
    holes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        outer = _open_ring(self.outer)
        if len(outer) < 3:
            raise DegenerateInput("polygon ring needs at least 3 vertices")
        if ring_signed_area(outer) < 0:
            outer = outer[::-1].copy()
        holes = []
        for h in self.holes:
            h = _open_ring(h)
            if len(h) < 3:
                raise DegenerateInput("hole ring needs at least 3 vertices")
            if ring_signed_area(h) > 0:
                h = h[::-1].copy()
            holes.append(h)
        object.__setattr__(self, "outer", outer)
        object.__setattr__(self, "holes", tuple(holes))

    @property
    def area(self) -> float:
        return ring_signed_area(self.outer) + sum(ring_signed_area(h) for h in self.holes)

    @property
    def rings(self):
        return (self.outer, *self.holes)

    def to_shapely(self) -> ShapelyPolygon:
        return ShapelyPolygon(self.outer, [h for h in self.holes])

    @classmethod
    def from_shapely(cls, poly) -> "Polygon2":
        return cls(
            np.asarray(poly.exterior.coords)[:-1],
            tuple(np.asarray(r.coords)[:-1] for r in poly.interiors),
        )

    def is_valid(self) -> bool:
        return self.area > 0 and bool(self.to_shapely().is_valid)

    def edges(self):
        """Yield ``(p, q)`` for every ring edge, outer ring first."""
        for ring in self.rings:
            n = len(ring)
            for i in range(n):
                yield ring[i], ring[(i + 1) % n]

    def translated(self, t) -> "Polygon2":
        t = np.asarray(t, dtype=float)[:2]
        return Polygon2(self.outer + t, tuple(h + t for h in self.holes))

    def bounds(self) -> tuple[float, float, float, float]:
        return (
            float(self.outer[:, 0].min()),
            float(self.outer[:, 1].min()),
            float(self.outer[:, 0].max()),
            float(self.outer[:, 1].max()),
        )

    def centroid(self) -> np.ndarray:
        c = self.to_shapely().centroid
        return np.array([c.x, c.y])


def fit_plane(points) -> Plane3:
    """Total-least-squares plane through ``points``.

    The normal is oriented upward whenever it has a vertical component.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 3:
        raise DegenerateInput("fit_plane needs at least 3 points in 3D")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    scale = max(s[0], 1e-300)
    if s[1] <= 1e-12 * scale or s[0] == 0.0:
        raise DegenerateInput("points are collinear")
    normal = vt[2]
    if normal[2] < 0 or (normal[2] == 0 and (normal[1] < 0 or (normal[1] == 0 and normal[0] < 0))):
        normal = -normal
    return Plane3(tuple(normal), -float(normal @ centroid))


def segment_intersection_2d(s1, s2, eps: float = EPS_GEOM):
    """Transversal intersection point of two segments, or ``None``.

    Segments are ``Segment2`` or ``(p, q)`` pairs. Endpoints count as part of
    a segment up to ``eps``. Parallel and collinear pairs give ``None``. The
    result is bitwise symmetric in the two arguments.
    """
    p1, q1 = _seg_points(s1)
    p2, q2 = _seg_points(s2)
    d1 = q1 - p1
    d2 = q2 - p2
    l1 = np.hypot(*d1)
    l2 = np.hypot(*d2)
    if l1 == 0 or l2 == 0:
        return None
    den = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(den) <= 1e-12 * l1 * l2:
        return None
    w = p2 - p1
    t = (w[0] * d2[1] - w[1] * d2[0]) / den
    u = (w[0] * d1[1] - w[1] * d1[0]) / den
    if t < -eps / l1 or t > 1 + eps / l1 or u < -eps / l2 or u > 1 + eps / l2:
        return None
    a = p1 + t * d1
    b = p2 + u * d2
    return (a + b) / 2.0


def _seg_points(s):
    if isinstance(s, Segment2):
        return np.asarray(s.p, dtype=float), np.asarray(s.q, dtype=float)
    p, q = s
    return np.asarray(p, dtype=float), np.asarray(q, dtype=float)


def point_segment_distance(pt, p, q) -> float:
    pt, p, q = (np.asarray(v, dtype=float) for v in (pt, p, q))
    d = q - p
    L2 = float(d @ d)
    if L2 == 0:
        return float(np.hypot(*(pt - p)))
    t = min(1.0, max(0.0, float((pt - p) @ d) / L2))
    return float(np.linalg.norm(pt - (p + t * d)))


def line_angle(p, q) -> float:
    """Orientation of the line through ``p`` and ``q`` in [0, pi)."""
    a = np.arctan2(q[1] - p[1], q[0] - p[0])
    return float(a % np.pi)


def plane_frame(plane: Plane3):
    """Orthonormal in-plane axes ``(u, v)`` and an origin point on the plane."""
    n = plane.n
    ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(n, ref)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    origin = -plane.d * n
    return origin, u, v


def as_polygon(geom):
    """Largest polygon of a shapely geometry, or ``None``."""
    if geom is None or geom.is_empty:
        return None
    if geom.geom_type == "Polygon":
        return geom
    polys = [g for g in getattr(geom, "geoms", []) if g.geom_type == "Polygon"]
    if not polys:
        return None
    return max(polys, key=lambda g: g.area)


def union_all(geoms):
    return shapely.union_all(list(geoms))


BUILDING_CLASS = 6
GROUND_CLASS = 2


@dataclass(eq=False)
class PointCloud:
    """3D points with optional per-point class codes (ASPRS numbering)."""

    xyz: np.ndarray
    classes: np.ndarray | None = None

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.xyz)):
            raise DegenerateInput("point coordinates must be finite")
        if self.classes is not None:
            self.classes = np.asarray(self.classes, dtype=np.int64).reshape(-1)
            if len(self.classes) != len(self.xyz):
                raise DegenerateInput("class array length differs from point count")

    def __len__(self):
        return len(self.xyz)

    def subset(self, mask) -> "PointCloud":
        cls = None if self.classes is None else self.classes[mask]
        return PointCloud(self.xyz[mask], cls)

    def translated(self, t) -> "PointCloud":
        return PointCloud(self.xyz + np.asarray(t, dtype=float), self.classes)
