"""Planar subdivisions: storage, validation, arrangement construction, loop tracing."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidPartition
from .geom import EPS_GEOM, Plane3, Polygon2, ring_signed_area, segment_intersection_2d

GROUND = 0
EXTERIOR = -1

#: edge provenance, strongest first
KIND_RANK = {"bbox": 0, "footprint": 1, "intersection": 2, "discontinuity": 3, "other": 4}


@dataclass
class Cell:
    loops: list  # vertex-id loops, outer counter-clockwise first, then clockwise holes
    label: int | None = None
    plane: Plane3 | None = None

    @property
    def outer(self):
        return self.loops[0]


@dataclass
class Partition2D:
    vertices: np.ndarray
    cells: list = field(default_factory=list)
    bbox: tuple | None = None  # (minx, miny, maxx, maxy) when the cells tile a rectangle
    edge_kinds: dict = field(default_factory=dict)  # (a, b) with a < b -> provenance
    footprint: Polygon2 | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 2)

    # -- derived structure -------------------------------------------------
    def halfedges(self) -> dict:
        """Directed edge (u, v) -> cell on its left."""
        out = {}
        for ci, c in enumerate(self.cells):
            for loop in c.loops:
                n = len(loop)
                for k in range(n):
                    out[(loop[k], loop[(k + 1) % n])] = ci
        return out

    def edges(self) -> dict:
        """Undirected edge (a, b), a < b -> (cell left of a->b, cell left of b->a).

        ``EXTERIOR`` (-1) stands for the unbounded outside.
        """
        he = self.halfedges()
        out = {}
        for (u, v), c in he.items():
            a, b = min(u, v), max(u, v)
            if (a, b) in out:
                continue
            left = he.get((a, b), EXTERIOR)
            right = he.get((b, a), EXTERIOR)
            out[(a, b)] = (left, right)
        return out

    def edge_kind(self, a, b) -> str:
        return self.edge_kinds.get((min(a, b), max(a, b)), "other")

    def cell_polygon(self, ci) -> Polygon2:
        c = self.cells[ci]
        V = self.vertices
        return Polygon2(V[c.loops[0]], tuple(V[h] for h in c.loops[1:]))

    def cell_area(self, ci) -> float:
        V = self.vertices
        return sum(ring_signed_area(V[l]) for l in self.cells[ci].loops)

    def cell_shape(self, ci):
        from shapely.geometry import Polygon as ShapelyPolygon

        c = self.cells[ci]
        V = self.vertices
        return ShapelyPolygon(V[c.loops[0]], [V[h] for h in c.loops[1:]])

    def neighbors(self) -> dict:
        nb = defaultdict(set)
        for (a, b), (l, r) in self.edges().items():
            if l >= 0 and r >= 0 and l != r:
                nb[l].add(r)
                nb[r].add(l)
        return nb

    def used_vertices(self):
        return sorted({v for c in self.cells for l in c.loops for v in l})

    def copy(self) -> "Partition2D":
        return Partition2D(
            self.vertices.copy(),
            [Cell([list(l) for l in c.loops], c.label, c.plane) for c in self.cells],
            self.bbox,
            dict(self.edge_kinds),
            self.footprint,
        )

    def compact(self) -> "Partition2D":
        """Drop unused vertices and renumber (order preserved)."""
        used = self.used_vertices()
        remap = {v: i for i, v in enumerate(used)}
        cells = [Cell([[remap[v] for v in l] for l in c.loops], c.label, c.plane) for c in self.cells]
        kinds = {}
        for (a, b), k in self.edge_kinds.items():
            if a in remap and b in remap:
                ra, rb = remap[a], remap[b]
                kinds[(min(ra, rb), max(ra, rb))] = k
        return Partition2D(self.vertices[used], cells, self.bbox, kinds, self.footprint)


# -- validation ------------------------------------------------------------


def _components(n_nodes, edges):
    parent = list(range(n_nodes))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return [find(i) for i in range(n_nodes)]


def _segments_conflict(p1, p2, p3, p4, tol):
    """Closed segments share a point that is not a common endpoint."""
    d1 = p2 - p1
    d2 = p4 - p3
    den = d1[0] * d2[1] - d1[1] * d2[0]
    scale = max(np.hypot(*d1), np.hypot(*d2), 1e-300)
    if abs(den) > 1e-14 * scale * scale:
        w = p3 - p1
        t = (w[0] * d2[1] - w[1] * d2[0]) / den
        u = (w[0] * d1[1] - w[1] * d1[0]) / den
        lt = tol / np.hypot(*d1)
        lu = tol / np.hypot(*d2)
        if -lt <= t <= 1 + lt and -lu <= u <= 1 + lu:
            x = p1 + t * d1
            ends = (p1, p2, p3, p4)
            near_end = [np.hypot(*(x - e)) <= tol for e in ends]
            # allowed only if x is an endpoint of both segments
            if (near_end[0] or near_end[1]) and (near_end[2] or near_end[3]):
                return False
            return True
        return False
    # parallel: conflict only if collinear and overlapping beyond a point
    nrm = np.array([-d1[1], d1[0]]) / np.hypot(*d1)
    if abs((p3 - p1) @ nrm) > tol:
        return False
    t = d1 / np.hypot(*d1)
    a0, a1 = 0.0, float(d1 @ t)
    b0, b1 = sorted([float((p3 - p1) @ t), float((p4 - p1) @ t)])
    return min(a1, b1) - max(a0, b0) > tol


def find_crossings(vertices, edges, tol=EPS_GEOM, limit=None):
    """Pairs of edges that meet other than at a shared endpoint vertex."""
    E = list(edges)
    if not E:
        return []
    V = np.asarray(vertices, dtype=float)
    P = V[[a for a, _ in E]]
    Q = V[[b for _, b in E]]
    lo = np.minimum(P, Q) - tol
    hi = np.maximum(P, Q) + tol
    order = np.argsort(lo[:, 0], kind="stable")
    out = []
    for ii, i in enumerate(order):
        for j in order[ii + 1 :]:
            if lo[j, 0] > hi[i, 0]:
                break
            if lo[j, 1] > hi[i, 1] or lo[i, 1] > hi[j, 1]:
                continue
            a, b = E[i]
            c, d = E[j]
            shared = {a, b} & {c, d}
            if len(shared) == 2:
                out.append((E[i], E[j]))
                continue
            if shared:
                s = shared.pop()
                o1 = b if a == s else a
                o2 = d if c == s else c
                # edges from a common vertex conflict only if they overlap
                u = V[o1] - V[s]
                w = V[o2] - V[s]
                cr = u[0] * w[1] - u[1] * w[0]
                if abs(cr) <= tol * max(np.hypot(*u), np.hypot(*w)) and u @ w > 0:
                    out.append((E[i], E[j]))
                continue
            if _segments_conflict(V[a], V[b], V[c], V[d], tol):
                out.append((E[i], E[j]))
                if limit and len(out) >= limit:
                    return out
    return out


def validate_partition(p: Partition2D, check_crossings: bool = True) -> dict:
    """Check the subdivision invariants; returns counts and worst violations."""
    V = p.vertices
    if not np.all(np.isfinite(V)):
        raise InvalidPartition("finite coordinates")
    seen = {}
    for ci, c in enumerate(p.cells):
        if not c.loops or len(c.loops[0]) < 3:
            raise InvalidPartition("cell loops", f"cell {ci} has fewer than 3 vertices")
        for li, loop in enumerate(c.loops):
            if len(loop) < 3:
                raise InvalidPartition("cell loops", f"cell {ci} loop {li} has fewer than 3 vertices")
            n = len(loop)
            for k in range(n):
                e = (loop[k], loop[(k + 1) % n])
                if e[0] == e[1]:
                    raise InvalidPartition("dangling edge", f"zero-length edge at vertex {e[0]} in cell {ci}")
                if e in seen:
                    if seen[e] == ci:
                        raise InvalidPartition("dangling edge", f"cell {ci} traverses edge {e} twice")
                    raise InvalidPartition("two-sided edges", f"half-edge {e} used by cells {seen[e]} and {ci}")
                seen[e] = ci
    edges = p.edges()
    degree = defaultdict(int)
    for (a, b), (l, r) in edges.items():
        if l == r:
            raise InvalidPartition("dangling edge", f"edge {(a, b)} has cell {l} on both sides")
        degree[a] += 1
        degree[b] += 1
    for v, d in degree.items():
        if d < 2:
            raise InvalidPartition("dangling edge", f"vertex {v} has degree {d}")
    worst_orient = math.inf
    for ci, c in enumerate(p.cells):
        a0 = ring_signed_area(V[c.loops[0]])
        worst_orient = min(worst_orient, a0)
        if a0 <= 0:
            raise InvalidPartition("orientation", f"cell {ci} outer loop is not counter-clockwise ({a0:.3e})")
        for h in c.loops[1:]:
            if ring_signed_area(V[h]) >= 0:
                raise InvalidPartition("orientation", f"cell {ci} hole is not clockwise")
    if check_crossings:
        cr = find_crossings(V, list(edges), limit=1)
        if cr:
            raise InvalidPartition("crossing edges", f"{cr[0][0]} and {cr[0][1]}")
    used = sorted(degree)
    index = {v: i for i, v in enumerate(used)}
    comp = _components(len(used), [(index[a], index[b]) for a, b in edges])
    n_comp = len(set(comp))
    # faces = cells + uncovered regions; the unbounded region is always one of them
    he = p.halfedges()
    empty = [(b, a) for (a, b) in he if (b, a) not in he]
    bounded_empty = sum(1 for l in trace_loops(V, empty) if ring_signed_area(V[l]) > 0) if empty else 0
    nV, nE, nF = len(used), len(edges), len(p.cells) + 1 + bounded_empty
    if nV - nE + nF != 1 + n_comp:
        raise InvalidPartition("euler", f"V-E+F = {nV}-{nE}+{nF} != 1+{n_comp}")
    area_err = 0.0
    if p.bbox is not None:
        minx, miny, maxx, maxy = p.bbox
        box = (maxx - minx) * (maxy - miny)
        tot = sum(p.cell_area(ci) for ci in range(len(p.cells)))
        area_err = abs(tot - box) / box
        if area_err > 1e-6:
            raise InvalidPartition("area", f"cells cover {tot:.9g} of bbox area {box:.9g}")
    return {"V": nV, "E": nE, "F": nF, "C": n_comp, "cells": len(p.cells), "area_rel_err": area_err, "min_outer_area": worst_orient}


# -- arrangement construction ---------------------------------------------


def _snap(points, priority, tol):
    """Cluster points closer than ``tol``; representative = highest priority, then first."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    if n:
        for i, j in sorted(cKDTree(pts).query_pairs(tol)):
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
    groups = defaultdict(list)
    for i in range(n):
        groups[find(i)].append(i)
    rep = np.empty(n, dtype=np.int64)
    coords = []
    for root in sorted(groups):
        members = groups[root]
        best = min(members, key=lambda m: (priority[m], m))
        for m in members:
            rep[m] = len(coords)
        coords.append(pts[best])
    return rep, np.array(coords).reshape(-1, 2)


def trace_loops(vertices, halfedges):
    """Trace closed loops from directed edges, each face on the left.

    At every vertex the walk leaves along the first outgoing edge clockwise
    from the reversed incoming edge, which keeps loops of adjacent faces
    separate at pinch vertices.
    """
    V = np.asarray(vertices, dtype=float)
    out_by_v = defaultdict(list)
    for u, v in halfedges:
        ang = math.atan2(V[v][1] - V[u][1], V[v][0] - V[u][0])
        out_by_v[u].append((ang, v))
    for u in out_by_v:
        out_by_v[u].sort()
    remaining = set(halfedges)
    loops = []
    for start in sorted(halfedges):
        if start not in remaining:
            continue
        loop = []
        e = start
        guard = 0
        while e in remaining:
            remaining.discard(e)
            loop.append(e[0])
            u, v = e
            back = math.atan2(V[u][1] - V[v][1], V[u][0] - V[v][0])
            cands = out_by_v[v]
            # first outgoing edge clockwise from the reversed edge
            nxt = None
            best = None
            for ang, w in cands:
                if w == u and len(cands) > 1:
                    continue
                delta = (back - ang) % (2 * math.pi)
                if delta == 0:
                    delta = 2 * math.pi
                if best is None or delta < best:
                    best = delta
                    nxt = w
            e = (v, nxt)
            guard += 1
            if guard > len(halfedges) + 1:
                raise InvalidPartition("loop tracing", "walk did not close")
        if e != start:
            raise InvalidPartition("loop tracing", f"open walk from {start}")
        loops.append(loop)
    return loops


def point_in_ring(pt, ring):
    x, y = pt
    inside = False
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if xi > x:
                inside = not inside
    return inside


def cells_from_loops(vertices, loops):
    """Group traced loops into cells: positive loops are outer rings, negative ones holes.

    Each hole is attached to the smallest outer ring of another connected
    component that contains it. Holes with no container bound the unbounded
    face and are returned separately.
    """
    V = np.asarray(vertices, dtype=float)
    ids = sorted({v for l in loops for v in l})
    index = {v: i for i, v in enumerate(ids)}
    links = [(index[l[k]], index[l[(k + 1) % len(l)]]) for l in loops for k in range(len(l))]
    comp = _components(len(ids), links)
    outers = []
    holes = []
    for loop in loops:
        a = ring_signed_area(V[loop])
        if a > 0:
            outers.append((a, loop))
        elif a < 0:
            holes.append(loop)
        else:
            raise InvalidPartition("loop tracing", "zero-area loop")
    outers.sort(key=lambda t: (t[0], t[1]))
    cell_loops = [[o] for _, o in outers]
    unbounded = []
    for h in holes:
        ch = comp[index[h[0]]]
        pt = V[h[0]]
        home = None
        for k, (_, o) in enumerate(outers):
            if comp[index[o[0]]] == ch:
                continue
            if point_in_ring(pt, V[o]):
                home = k
                break
        if home is None:
            unbounded.append(h)
        else:
            cell_loops[home].append(h)
    return cell_loops, unbounded


def build_arrangement(segments, bbox=None, snap_tol=EPS_GEOM, footprint=None):
    """Planar subdivision induced by ``segments`` (Segment2 or (p, q, kind) triples).

    Segments are split at all mutual intersections and at endpoints lying on
    other segments; nearby points are snapped together; dangling edges are
    pruned; faces are traced. With ``bbox`` the cells tile the rectangle.
    """
    segs = []
    for s in segments:
        if hasattr(s, "p"):
            segs.append((np.asarray(s.p, float), np.asarray(s.q, float), s.kind))
        else:
            p, q, k = s
            segs.append((np.asarray(p, float), np.asarray(q, float), k))
    if bbox is not None:
        minx, miny, maxx, maxy = bbox
        corners = [(minx, miny), (maxx, miny), (maxx, maxy), (minx, maxy)]
        for i in range(4):
            segs.append((np.array(corners[i], float), np.array(corners[(i + 1) % 4], float), "bbox"))
    segs = [s for s in segs if np.hypot(*(s[1] - s[0])) > snap_tol]

    # split parameters per segment
    params = [[(0.0, s[0]), (1.0, s[1])] for s in segs]
    P = np.array([s[0] for s in segs])
    Q = np.array([s[1] for s in segs])
    lo = np.minimum(P, Q) - snap_tol
    hi = np.maximum(P, Q) + snap_tol
    for i in range(len(segs)):
        cand = np.nonzero(
            np.all(lo[i + 1 :] <= hi[i], axis=1) & np.all(hi[i + 1 :] >= lo[i], axis=1)
        )[0] + i + 1
        pi, qi, _ = segs[i]
        di = qi - pi
        li2 = float(di @ di)
        for j in cand:
            pj, qj, _ = segs[j]
            x = segment_intersection_2d((pi, qi), (pj, qj), snap_tol)
            if x is not None:
                params[i].append((float((x - pi) @ di) / li2, x))
                dj = qj - pj
                params[j].append((float((x - pj) @ dj) / float(dj @ dj), x))
                continue
            # collinear overlap / endpoint touching: split each at the other's endpoints
            dj = qj - pj
            lj2 = float(dj @ dj)
            for (a, da, la2, idx), (e0, e1) in (((pi, di, li2, i), (pj, qj)), ((pj, dj, lj2, j), (pi, qi))):
                for e in (e0, e1):
                    t = float((e - a) @ da) / la2
                    if -1e-12 <= t <= 1 + 1e-12:
                        foot = a + t * da
                        if np.hypot(*(foot - e)) <= snap_tol:
                            params[idx].append((t, e))

    pts, prio, owner = [], [], []
    for si, plist in enumerate(params):
        kind = segs[si][2]
        rank = KIND_RANK.get(kind, 4)
        for t, x in plist:
            endpoint = t in (0.0, 1.0)
            pts.append(x)
            prio.append((0 if endpoint and rank <= 1 else 1, rank))
            owner.append(si)
    rep, coords = _snap(pts, prio, snap_tol)

    # keep snapped points exactly on the single barrier line they lie on
    on_barrier = defaultdict(set)
    for r, si in zip(rep, owner):
        if segs[si][2] in ("footprint", "bbox"):
            on_barrier[int(r)].add(si)
    for r, sis in on_barrier.items():
        if len(sis) != 1:
            continue
        (si,) = sis
        a, b = segs[si][0], segs[si][1]
        d = b - a
        t = float((coords[r] - a) @ d) / float(d @ d)
        coords[r] = a + t * d

    # edges
    kinds = {}
    k = 0
    for si, plist in enumerate(params):
        ids = []
        order = sorted(range(len(plist)), key=lambda m: plist[m][0])
        for m in order:
            r = int(rep[k + m])
            if not ids or ids[-1] != r:
                ids.append(r)
        k += len(plist)
        kind = segs[si][2]
        for a, b in zip(ids, ids[1:]):
            if a == b:
                continue
            e = (min(a, b), max(a, b))
            old = kinds.get(e)
            if old is None or KIND_RANK.get(kind, 4) < KIND_RANK.get(old, 4):
                kinds[e] = kind

    # prune dangling edges
    adj = defaultdict(set)
    for a, b in kinds:
        adj[a].add(b)
        adj[b].add(a)
    stack = [v for v in adj if len(adj[v]) == 1]
    while stack:
        v = stack.pop()
        if len(adj[v]) != 1:
            continue
        (w,) = adj[v]
        adj[v].discard(w)
        adj[w].discard(v)
        kinds.pop((min(v, w), max(v, w)), None)
        if len(adj[w]) == 1:
            stack.append(w)

    halfedges = [(a, b) for a, b in kinds] + [(b, a) for a, b in kinds]
    loops = trace_loops(coords, halfedges)
    cell_loops, _ = cells_from_loops(coords, loops)
    cells = [Cell(cl) for cl in cell_loops]
    part = Partition2D(coords, cells, bbox, kinds, footprint)
    return part.compact()


def remove_collinear_vertices(p: Partition2D, angle_tol: float = 1e-9, protect=(), return_map: bool = False):
    """Drop degree-2 vertices whose two edges are collinear (within ``angle_tol`` rad).

    With ``return_map`` also returns ``{old vertex: new vertex}`` for surviving vertices.
    """
    p = p.copy()
    V = p.vertices
    protect = set(protect)
    changed = True
    while changed:
        changed = False
        adj = defaultdict(set)
        for c in p.cells:
            for loop in c.loops:
                n = len(loop)
                for k in range(n):
                    a, b = loop[k], loop[(k + 1) % n]
                    adj[a].add(b)
                    adj[b].add(a)
        for v in sorted(adj):
            if len(adj[v]) != 2 or v in protect:
                continue
            a, b = sorted(adj[v])
            u = V[a] - V[v]
            w = V[b] - V[v]
            nu, nw = np.hypot(*u), np.hypot(*w)
            if nu == 0 or nw == 0:
                continue
            sin = abs(float(u[0] * w[1] - u[1] * w[0])) / (nu * nw)
            if float(u @ w) >= 0 or sin > angle_tol:
                continue
            # refuse if any loop would drop below 3 vertices
            if any(v in l and len(l) <= 3 for c in p.cells for l in c.loops):
                continue
            for c in p.cells:
                c.loops = [[x for x in l if x != v] for l in c.loops]
            ka = p.edge_kinds.pop((min(a, v), max(a, v)), "other")
            kb = p.edge_kinds.pop((min(b, v), max(b, v)), "other")
            p.edge_kinds[(min(a, b), max(a, b))] = ka if KIND_RANK.get(ka, 4) <= KIND_RANK.get(kb, 4) else kb
            changed = True
            break
    if return_map:
        used = p.used_vertices()
        return p.compact(), {v: i for i, v in enumerate(used)}
    return p.compact()


def partition_from_rects(nx, ny, w=1.0, h=1.0):
    """Regular grid partition of ``nx`` by ``ny`` rectangles (test helper)."""
    verts = [(i * w, j * h) for j in range(ny + 1) for i in range(nx + 1)]
    cells = []
    for j in range(ny):
        for i in range(nx):
            v0 = j * (nx + 1) + i
            cells.append(Cell([[v0, v0 + 1, v0 + nx + 2, v0 + nx + 1]]))
    return Partition2D(np.array(verts, float), cells, (0.0, 0.0, nx * w, ny * h))
