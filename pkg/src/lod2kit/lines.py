"""Line-segment soup seeding the kinetic partition.

Three sources: intersections of adjacent primitive planes (ridges, hips,
valleys), contour edges across which point heights jump (step walls), and the
footprint outline itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import shapely
from scipy.spatial import cKDTree
from shapely.geometry import LineString

from .geom import EPS_GEOM, Polygon2, Segment2, Segment3

KIND_ORDER = {"footprint": 0, "intersection": 1, "discontinuity": 2}


@dataclass(frozen=True)
class LineExtractionParams:
    adjacency_dist: float = 0.5  # 2 * epsilon + 0.3 with the default epsilon
    simplify_tol: float = 0.5  # above the alpha-shape notch depth at 20 pts/m2
    discontinuity_height: float = 0.5
    side_band: float = 0.75
    merge_angle: float = 1.0  # degrees
    merge_offset: float = 0.05
    footprint_snap_dist: float = 0.5
    bbox_margin: float = 1.0

    def __post_init__(self):
        for name in ("adjacency_dist", "simplify_tol", "discontinuity_height", "side_band"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def for_epsilon(cls, eps: float, **kw):
        return cls(adjacency_dist=2 * eps + 0.3, **kw)


@dataclass
class SegmentSoup2:
    segments: list = field(default_factory=list)

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def of_kind(self, kind):
        return [s for s in self.segments if s.kind == kind]


def _ring_samples(rings, step):
    out = []
    for r in rings:
        r = np.asarray(r, dtype=float)
        q = np.roll(r, -1, axis=0)
        for a, b in zip(r, q):
            n = max(1, int(np.ceil(np.linalg.norm(b - a) / step)))
            t = np.arange(n)[:, None] / n
            out.append(a + t * (b - a))
    return np.concatenate(out)


def contour_distance(p1, p2, step: float = 0.05) -> float:
    """Approximate 3D distance between two primitives' contours (sampled)."""
    a = _ring_samples(p1.contour_3d(), step)
    b = _ring_samples(p2.contour_3d(), step)
    d, _ = cKDTree(b).query(a, k=1)
    return float(d.min())


def plane_pair_line(pl1, pl2):
    """Point and unit direction of the intersection line of two planes, or None."""
    n1, n2 = pl1.n, pl2.n
    d = np.cross(n1, n2)
    s = np.linalg.norm(d)
    if s < 0.02:
        return None
    d = d / s
    # closest point to the origin on both planes
    A = np.stack([n1, n2, d])
    b = np.array([-pl1.d, -pl2.d, 0.0])
    p = np.linalg.solve(A, b)
    return p, d


def _clip_line(p, d, region):
    """Longest piece of the plan line (p, d) inside ``region``."""
    d2 = d[:2] / np.linalg.norm(d[:2])
    minx, miny, maxx, maxy = region.bounds
    R = np.hypot(maxx - minx, maxy - miny) + np.linalg.norm(p[:2] - [(minx + maxx) / 2, (miny + maxy) / 2])
    c = p[:2]
    line = LineString([c - R * d2, c + R * d2])
    inter = line.intersection(region)
    pieces = [g for g in getattr(inter, "geoms", [inter]) if g.geom_type == "LineString" and not g.is_empty]
    if not pieces:
        return None
    best = max(pieces, key=lambda g: g.length)
    xy = np.asarray(best.coords)
    return xy[0], xy[-1]


def intersection_lines(primitives, adjacency_dist: float):
    """Plane intersection segments of adjacent, non-parallel primitive pairs."""
    out = []
    prims = sorted(primitives, key=lambda p: p.id)
    for p1, p2 in combinations(prims, 2):
        line = plane_pair_line(p1.plane, p2.plane)
        if line is None:
            continue
        if contour_distance(p1, p2) > adjacency_dist:
            continue
        region = p1.plan_shape().buffer(adjacency_dist).intersection(p2.plan_shape().buffer(adjacency_dist))
        if region.is_empty:
            continue
        clip = _clip_line(*line, region)
        if clip is None:
            continue
        a, b = clip
        if np.hypot(*(b - a)) <= EPS_GEOM:
            continue
        za = float(p1.plane.z_at(*a))
        zb = float(p1.plane.z_at(*b))
        out.append(Segment3((a[0], a[1], za), (b[0], b[1], zb), "intersection", (p1.id, p2.id)))
    return out


def side_means(p, q, xy, z, band):
    """Mean heights of points in the bands left and right of edge p->q (plan view)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    d = q - p
    L = float(np.hypot(*d))
    if L == 0:
        return None, None
    t = d / L
    nrm = np.array([-t[1], t[0]])  # left normal
    rel = xy - p
    s = rel @ t
    o = rel @ nrm
    along = (s >= 0) & (s <= L)
    left = along & (o > 0) & (o <= band)
    right = along & (o < 0) & (o >= -band)
    ml = float(z[left].mean()) if left.any() else None
    mr = float(z[right].mean()) if right.any() else None
    return ml, mr


def simplified_contour(primitive, tol: float) -> Polygon2:
    sh = primitive.plan_shape().simplify(tol, preserve_topology=True)
    sh = sh if sh.geom_type == "Polygon" else max(sh.geoms, key=lambda g: g.area)
    return Polygon2.from_shapely(sh)


def discontinuity_lines(primitive, cloud, params: LineExtractionParams = LineExtractionParams()):
    """Simplified contour edges whose inside is higher than the outside by the threshold.

    Only the upper side emits, so a step between two primitives yields a single edge.
    """
    poly = simplified_contour(primitive, params.simplify_tol)
    xyz = cloud.xyz
    out = []
    for ri, ring in enumerate(poly.rings):
        n = len(ring)
        lo = ring.min(axis=0) - params.side_band
        hi = ring.max(axis=0) + params.side_band
        near = np.all((xyz[:, :2] >= lo) & (xyz[:, :2] <= hi), axis=1)
        xy, z = xyz[near, :2], xyz[near, 2]
        for k in range(n):
            p, q = ring[k], ring[(k + 1) % n]
            inside, outside = side_means(p, q, xy, z, params.side_band)
            primitive.mean_height_samples[(ri, k)] = (inside, outside)
            if inside is None or outside is None:
                continue
            if inside - outside > params.discontinuity_height:
                zp = float(primitive.plane.z_at(*p))
                zq = float(primitive.plane.z_at(*q))
                out.append(Segment3((p[0], p[1], zp), (q[0], q[1], zq), "discontinuity", (primitive.id,)))
    return out


def _canon_key(s: Segment2):
    a, b = sorted([tuple(np.round(s.p, 9)), tuple(np.round(s.q, 9))])
    return (KIND_ORDER.get(s.kind, 9), a, b, s.sources)


def _collinear_close(s1: Segment2, s2: Segment2, max_angle, max_offset):
    d1 = s1.direction
    d2 = s2.direction
    if abs(d1[0] * d2[1] - d1[1] * d2[0]) > np.sin(np.radians(max_angle)):
        return False
    nrm = np.array([-d1[1], d1[0]])
    off = max(abs((np.subtract(s2.p, s1.p)) @ nrm), abs((np.subtract(s2.q, s1.p)) @ nrm))
    return off < max_offset


def _overlap_interval(base: Segment2, other: Segment2):
    t = base.direction
    s0 = 0.0
    s1 = base.length
    a = float(np.subtract(other.p, base.p) @ t)
    b = float(np.subtract(other.q, base.p) @ t)
    return s0, s1, min(a, b), max(a, b)


def merge_collinear(segments, max_angle=1.0, max_offset=0.05):
    """Merge overlapping near-collinear segments of the same kind (iterated)."""
    segs = sorted(segments, key=_canon_key)
    changed = True
    while changed:
        changed = False
        for i in range(len(segs)):
            for j in range(i + 1, len(segs)):
                a, b = segs[i], segs[j]
                if a.kind != b.kind:
                    continue
                base, other = (a, b) if a.length >= b.length else (b, a)
                if not _collinear_close(base, other, max_angle, max_offset):
                    continue
                s0, s1, o0, o1 = _overlap_interval(base, other)
                if o1 < s0 - EPS_GEOM or o0 > s1 + EPS_GEOM:
                    continue
                t = base.direction
                lo, hi = min(s0, o0), max(s1, o1)
                p = np.asarray(base.p) + lo * t
                q = np.asarray(base.p) + hi * t
                merged = Segment2(p, q, base.kind, tuple(sorted(set(a.sources) | set(b.sources))))
                segs = [s for k, s in enumerate(segs) if k not in (i, j)] + [merged]
                segs.sort(key=_canon_key)
                changed = True
                break
            if changed:
                break
    return segs


def _absorbed_by_footprint(s: Segment2, boundary_zone):
    """True if the whole segment lies in the band around the footprint outline."""
    return bool(LineString([s.p, s.q]).difference(boundary_zone).is_empty)


def _clip_to_box(s: Segment2, box):
    minx, miny, maxx, maxy = box
    g = shapely.clip_by_rect(LineString([s.p, s.q]), minx, miny, maxx, maxy)
    if g.is_empty or g.geom_type != "LineString":
        return None
    xy = np.asarray(g.coords)
    return Segment2(xy[0], xy[-1], s.kind, s.sources)


def build_soup(primitives, footprint: Polygon2, cloud, params: LineExtractionParams = LineExtractionParams()):
    """Plan-view soup of intersection, discontinuity and footprint segments."""
    prims = sorted(primitives, key=lambda p: p.id)
    segs = []
    if len(prims) >= 2:
        segs += [s.to_plan() for s in intersection_lines(prims, params.adjacency_dist)]
    for p in prims:
        segs += [s.to_plan() for s in discontinuity_lines(p, cloud, params)]
    fp_edges = [Segment2(p, q, "footprint") for p, q in footprint.edges() if np.hypot(*(q - p)) > EPS_GEOM]
    segs = [s for s in segs if s.length > EPS_GEOM]
    zone = footprint.to_shapely().boundary.buffer(params.footprint_snap_dist)
    segs = [s for s in segs if s.kind != "discontinuity" or not _absorbed_by_footprint(s, zone)]
    segs = merge_collinear(segs, params.merge_angle, params.merge_offset)
    minx, miny, maxx, maxy = footprint.bounds()
    m = params.bbox_margin
    box = (minx - m, miny - m, maxx + m, maxy + m)
    clipped = []
    for s in segs:
        c = _clip_to_box(s, box)
        if c is not None and c.length > EPS_GEOM:
            clipped.append(c)
    out = sorted(fp_edges, key=_canon_key) + sorted(clipped, key=_canon_key)
    return SegmentSoup2(out)
