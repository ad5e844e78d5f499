"""Polygon surface mesh with per-facet planes, and its validity checks."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import Polygon as ShapelyPolygon

from .errors import AssemblyFailure
from .geom import Plane3
from .triangulate import triangulate_polygon

PLANARITY_TOL = 1e-9


@dataclass
class Facet:
    loops: list  # outer loop first, then holes; counter-clockwise seen from the normal side
    role: str  # roof | wall | ground
    plane: Plane3
    cell: int | None = None

    @property
    def outer(self):
        return self.loops[0]


@dataclass
class BuildingMesh:
    vertices: np.ndarray
    facets: list = field(default_factory=list)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def edges(self) -> dict:
        """Undirected edge -> list of (facet index, directed edge)."""
        out = defaultdict(list)
        for fi, f in enumerate(self.facets):
            for loop in f.loops:
                n = len(loop)
                for k in range(n):
                    a, b = loop[k], loop[(k + 1) % n]
                    out[(min(a, b), max(a, b))].append((fi, (a, b)))
        return out

    def translated(self, t) -> "BuildingMesh":
        t = np.asarray(t, dtype=float)
        facets = [Facet([list(l) for l in f.loops], f.role, f.plane.translated(t), f.cell) for f in self.facets]
        return BuildingMesh(self.vertices + t, facets)

    def triangles(self) -> list:
        """Constrained Delaunay triangles of every facet, as ``(facet, (a, b, c))``."""
        if getattr(self, "_tri_cache", None) is not None:
            return self._tri_cache
        out = []
        for fi, f in enumerate(self.facets):
            for tri in triangulate_facet(self, f):
                out.append((fi, tri))
        self._tri_cache = out
        return out

    def invalidate(self):
        self._tri_cache = None

    def area(self) -> float:
        tot = 0.0
        for _, (a, b, c) in self.triangles():
            p = self.vertices
            tot += 0.5 * np.linalg.norm(np.cross(p[b] - p[a], p[c] - p[a]))
        return tot

    def roles(self) -> dict:
        out = defaultdict(int)
        for f in self.facets:
            out[f.role] += 1
        return dict(out)


def facet_frame(plane: Plane3):
    """Axes ``(u, v)`` spanning the plane with ``u x v`` equal to the normal."""
    n = plane.n
    ref = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(ref, n)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v


def triangulate_facet(mesh: BuildingMesh, facet: Facet):
    u, v = facet_frame(facet.plane)
    ids = sorted({i for loop in facet.loops for i in loop})
    p3 = mesh.vertices[ids]
    uv = np.stack([p3 @ u, p3 @ v], axis=1)
    lookup = {vid: uv[k] for k, vid in enumerate(ids)}
    return triangulate_polygon(lookup, facet.loops)


# -- validity checks -------------------------------------------------------


def check_watertight(mesh: BuildingMesh):
    """Every edge bounds exactly two facets, traversed in opposite directions."""
    problems = []
    for e, uses in mesh.edges().items():
        if len(uses) != 2:
            problems.append(f"edge {e} used by {len(uses)} facets")
            continue
        (f1, d1), (f2, d2) = uses
        if f1 == f2:
            problems.append(f"edge {e} used twice by facet {f1}")
        elif d1 == d2:
            problems.append(f"edge {e} has inconsistent orientation")
    return problems


def check_manifold(mesh: BuildingMesh):
    """The facets around every vertex form a single fan cycle."""
    link = defaultdict(list)
    for fi, f in enumerate(mesh.facets):
        for loop in f.loops:
            n = len(loop)
            for k in range(n):
                prev, cur, nxt = loop[k - 1], loop[k], loop[(k + 1) % n]
                link[cur].append((nxt, prev))
    problems = []
    used = set(link)
    for vid in range(mesh.n_vertices):
        if vid not in used:
            problems.append(f"vertex {vid} is isolated")
    for vid, arcs in link.items():
        succ = {}
        bad = False
        for a, b in arcs:
            if a in succ:
                bad = True
                break
            succ[a] = b
        if bad:
            problems.append(f"vertex {vid} has a non-manifold fan")
            continue
        start = arcs[0][0]
        cur = start
        steps = 0
        while True:
            if cur not in succ:
                bad = True
                break
            cur = succ[cur]
            steps += 1
            if cur == start or steps > len(arcs):
                break
        if bad or steps != len(arcs) or cur != start:
            problems.append(f"vertex {vid} fan is not a single cycle")
    return problems


def check_planarity(mesh: BuildingMesh, tol: float = PLANARITY_TOL):
    problems = []
    worst = 0.0
    for fi, f in enumerate(mesh.facets):
        ids = [i for loop in f.loops for i in loop]
        dist = np.abs(f.plane.signed_distance(mesh.vertices[ids]))
        m = float(dist.max())
        worst = max(worst, m)
        if m > tol:
            problems.append(f"facet {fi} ({f.role}) off its plane by {m:.3e} m")
    return problems, worst


def _seg_tri_hit(p, q, tri, eps):
    """Intersection point of segment pq with triangle (non-coplanar case)."""
    a, b, c = tri
    n = np.cross(b - a, c - a)
    nn = np.linalg.norm(n)
    if nn == 0:
        return None
    n = n / nn
    dp = float(n @ (p - a))
    dq = float(n @ (q - a))
    if (dp > eps and dq > eps) or (dp < -eps and dq < -eps):
        return None
    if abs(dp) <= eps and abs(dq) <= eps:
        return None
    t = dp / (dp - dq)
    x = p + t * (q - p)
    for u, v in ((a, b), (b, c), (c, a)):
        if float(np.cross(v - u, x - u) @ n) < -eps * max(1.0, np.linalg.norm(v - u)):
            return None
    return x


def _coplanar_overlap(t1, t2, eps):
    n = np.cross(t1[1] - t1[0], t1[2] - t1[0])
    n /= np.linalg.norm(n)
    if np.max(np.abs((t2 - t1[0]) @ n)) > eps:
        return False
    u = t1[1] - t1[0]
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    a = ShapelyPolygon(np.stack([(t1 - t1[0]) @ u, (t1 - t1[0]) @ v], axis=1))
    b = ShapelyPolygon(np.stack([(t2 - t1[0]) @ u, (t2 - t1[0]) @ v], axis=1))
    return a.intersection(b).area > 1e-10


def check_intersection_free(mesh: BuildingMesh, eps: float = 1e-9):
    """Triangle-triangle tests between facets; shared-edge pairs are skipped."""
    tris = mesh.triangles()
    if not tris:
        return []
    V = mesh.vertices
    idx = np.array([t for _, t in tris])
    fac = np.array([f for f, _ in tris])
    P = V[idx]
    lo = P.min(axis=1) - 1e-7
    hi = P.max(axis=1) + 1e-7
    overlap = np.all((lo[:, None, :] <= hi[None, :, :]) & (lo[None, :, :] <= hi[:, None, :]), axis=2)
    iu, ju = np.nonzero(np.triu(overlap, 1))
    problems = []
    for i, j in zip(iu, ju):
        if fac[i] == fac[j]:
            continue
        shared = set(idx[i]) & set(idx[j])
        if len(shared) >= 2:
            continue
        t1, t2 = P[i], P[j]
        shared_pts = [V[s] for s in shared]
        hit = False
        if _coplanar_overlap(t1, t2, eps) if len(shared) == 0 else False:
            hit = True
        else:
            for A, B in ((t1, t2), (t2, t1)):
                for k in range(3):
                    x = _seg_tri_hit(A[k], A[(k + 1) % 3], B, eps)
                    if x is None:
                        continue
                    if any(np.linalg.norm(x - s) <= 1e-7 for s in shared_pts):
                        continue
                    hit = True
                    break
                if hit:
                    break
            if not hit and len(shared) == 1:
                hit = _coplanar_overlap(t1, t2, eps)
        if hit:
            problems.append(f"facets {fac[i]} and {fac[j]} intersect")
            if len(problems) > 20:
                break
    return problems


def validate_mesh(mesh: BuildingMesh, check_intersections: bool = True) -> dict:
    """Run all checks; raise AssemblyFailure naming the first violated invariant."""
    report = {}
    w = check_watertight(mesh)
    report["watertight"] = not w
    if w:
        raise AssemblyFailure("watertight", w[0])
    m = check_manifold(mesh)
    report["manifold"] = not m
    if m:
        raise AssemblyFailure("2-manifold", m[0])
    p, worst = check_planarity(mesh)
    report["planarity"] = worst
    if p:
        raise AssemblyFailure("planarity", p[0])
    if check_intersections:
        x = check_intersection_free(mesh)
        report["intersection_free"] = not x
        if x:
            raise AssemblyFailure("intersection-free", x[0])
    return report


def facet_polygon_area(mesh: BuildingMesh, facet: Facet) -> float:
    u, v = facet_frame(facet.plane)
    rings = []
    for loop in facet.loops:
        p = mesh.vertices[loop]
        rings.append(np.stack([p @ u, p @ v], axis=1))
    return float(shapely.area(ShapelyPolygon(rings[0], rings[1:])))
