"""Constrained Delaunay triangulation of planar polygons with holes.

Holes are bridged into the outer ring, the resulting weakly simple ring is
ear-clipped, and non-boundary edges are then flipped until every one of them
is locally Delaunay. Boundary edges are the constraints and are never flipped.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInput


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _segments_cross(p1, p2, p3, p4, tol):
    """True if the closed segments share a point other than a common endpoint."""
    d1 = _cross(p3, p4, p1)
    d2 = _cross(p3, p4, p2)
    d3 = _cross(p1, p2, p3)
    d4 = _cross(p1, p2, p4)
    if ((d1 > tol and d2 < -tol) or (d1 < -tol and d2 > tol)) and (
        (d3 > tol and d4 < -tol) or (d3 < -tol and d4 > tol)
    ):
        return True

    def on_seg(a, b, p, d):
        if abs(d) > tol:
            return False
        return (
            min(a[0], b[0]) - tol <= p[0] <= max(a[0], b[0]) + tol
            and min(a[1], b[1]) - tol <= p[1] <= max(a[1], b[1]) + tol
        )

    def same(a, b):
        return abs(a[0] - b[0]) <= tol and abs(a[1] - b[1]) <= tol

    for a, b, p, d in ((p3, p4, p1, d1), (p3, p4, p2, d2), (p1, p2, p3, d3), (p1, p2, p4, d4)):
        if on_seg(a, b, p, d) and not any(same(p, e) for e in (a, b)):
            return True
    return False


def _point_in_ring(pt, ring_pts):
    x, y = pt
    inside = False
    n = len(ring_pts)
    for i in range(n):
        x1, y1 = ring_pts[i]
        x2, y2 = ring_pts[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if xi > x:
                inside = not inside
    return inside


def _bridge_holes(pts, outer, holes, tol):
    """Splice holes into the outer ring; returns a list of point indices."""
    ring = list(outer)
    all_rings = [list(outer)] + [list(h) for h in holes]
    order = sorted(range(len(holes)), key=lambda k: -max(pts[i][0] for i in holes[k]))
    for k in order:
        hole = list(holes[k])
        # start from the hole's rightmost vertex
        m_pos = max(range(len(hole)), key=lambda j: (pts[hole[j]][0], -pts[hole[j]][1]))
        m = hole[m_pos]
        pm = pts[m]
        edges = []
        for r in all_rings:
            for a, b in zip(r, r[1:] + r[:1]):
                edges.append((a, b))
        candidates = sorted(
            range(len(ring)), key=lambda j: (pts[ring[j]][0] - pm[0]) ** 2 + (pts[ring[j]][1] - pm[1]) ** 2
        )
        chosen = None
        for j in candidates:
            p = ring[j]
            pp = pts[p]
            if abs(pp[0] - pm[0]) <= tol and abs(pp[1] - pm[1]) <= tol:
                continue
            ok = True
            for a, b in edges:
                if a in (p, m) or b in (p, m):
                    continue
                if _segments_cross(pm, pp, pts[a], pts[b], tol):
                    ok = False
                    break
            if not ok:
                continue
            mid = ((pm[0] + pp[0]) / 2, (pm[1] + pp[1]) / 2)
            if not _point_in_ring(mid, [pts[i] for i in outer]):
                continue
            if any(_point_in_ring(mid, [pts[i] for i in h]) for h in holes):
                continue
            chosen = j
            break
        if chosen is None:
            raise DegenerateInput("could not bridge hole into outer ring")
        hole_seq = hole[m_pos:] + hole[:m_pos] + [m]
        ring = ring[: chosen + 1] + hole_seq + ring[chosen:]
    return ring


def _ear_clip(pts, ring, tol):
    ring = list(ring)
    tris = []
    guard = 0
    while len(ring) > 3:
        guard += 1
        if guard > 10 * len(pts) ** 2 + 100:
            raise DegenerateInput("ear clipping did not terminate")
        n = len(ring)
        best = None
        for i in range(n):
            a, b, c = ring[i - 1], ring[i], ring[(i + 1) % n]
            pa, pb, pc = pts[a], pts[b], pts[c]
            cr = _cross(pa, pb, pc)
            if cr <= tol:
                continue
            corners = (pa, pb, pc)
            blocked = False
            for r in ring:
                pr = pts[r]
                if any(abs(pr[0] - q[0]) <= tol and abs(pr[1] - q[1]) <= tol for q in corners):
                    continue
                if (
                    _cross(pa, pb, pr) >= -tol
                    and _cross(pb, pc, pr) >= -tol
                    and _cross(pc, pa, pr) >= -tol
                ):
                    blocked = True
                    break
            if not blocked:
                best = i
                break
        if best is None:
            # drop a degenerate spike if one exists, otherwise give up
            for i in range(n):
                a, b, c = ring[i - 1], ring[i], ring[(i + 1) % n]
                if abs(_cross(pts[a], pts[b], pts[c])) <= tol:
                    d1 = np.subtract(pts[b], pts[a])
                    d2 = np.subtract(pts[c], pts[b])
                    if float(d1 @ d2) < 0:
                        best = i
                        break
            if best is None:
                raise DegenerateInput("no ear found")
            del ring[best]
            continue
        n = len(ring)
        tris.append((ring[best - 1], ring[best], ring[(best + 1) % n]))
        del ring[best]
    if len(ring) == 3 and _cross(pts[ring[0]], pts[ring[1]], pts[ring[2]]) > tol:
        tris.append(tuple(ring))
    return tris


def _in_circle(pa, pb, pc, pd):
    """Positive if ``pd`` lies inside the circumcircle of ccw triangle abc."""
    m = np.array(
        [
            [pa[0] - pd[0], pa[1] - pd[1], (pa[0] - pd[0]) ** 2 + (pa[1] - pd[1]) ** 2],
            [pb[0] - pd[0], pb[1] - pd[1], (pb[0] - pd[0]) ** 2 + (pb[1] - pd[1]) ** 2],
            [pc[0] - pd[0], pc[1] - pd[1], (pc[0] - pd[0]) ** 2 + (pc[1] - pd[1]) ** 2],
        ]
    )
    return float(np.linalg.det(m))


def _lawson(pts, tris, constrained, scale):
    tris = [list(t) for t in tris]
    tol = 1e-12 * scale**4
    for _ in range(len(tris) ** 2 + 100):
        edge_map = {}
        for ti, t in enumerate(tris):
            for k in range(3):
                a, b = t[k], t[(k + 1) % 3]
                edge_map[(a, b)] = (ti, t[(k + 2) % 3])
        flipped = False
        for (a, b), (ti, c) in list(edge_map.items()):
            if (min(a, b), max(a, b)) in constrained or (b, a) not in edge_map:
                continue
            tj, d = edge_map[(b, a)]
            if ti == tj or c == d:
                continue
            if _in_circle(pts[a], pts[b], pts[c], pts[d]) <= tol:
                continue
            # the quad a-d-b-c must be strictly convex to flip
            if _cross(pts[c], pts[a], pts[d]) <= 0 or _cross(pts[d], pts[b], pts[c]) <= 0:
                continue
            tris[ti] = [c, a, d]
            tris[tj] = [d, b, c]
            flipped = True
            break
        if not flipped:
            break
    return [tuple(t) for t in tris]


def triangulate_polygon(points2d, rings):
    """Constrained Delaunay triangulation of a polygon with holes.

    ``points2d`` maps vertex ids to 2D coordinates (array-like indexed by id);
    ``rings`` is ``[outer, hole, ...]`` with the outer ring counter-clockwise
    and holes clockwise, each a list of vertex ids. Returns counter-clockwise
    triangles as id triples, reusing only the given vertices.
    """
    pts = {int(i): (float(points2d[i][0]), float(points2d[i][1])) for r in rings for i in r}
    allp = np.array(list(pts.values()))
    scale = float(np.ptp(allp, axis=0).max()) or 1.0
    tol = 1e-12 * scale * scale
    outer = [int(i) for i in rings[0]]
    holes = [[int(i) for i in h] for h in rings[1:]]
    ring = _bridge_holes(pts, outer, holes, tol) if holes else outer
    tris = _ear_clip(pts, ring, tol)
    constrained = set()
    for r in [outer] + holes:
        for a, b in zip(r, r[1:] + r[:1]):
            constrained.add((min(a, b), max(a, b)))
    return _lawson(pts, tris, constrained, scale)
