"""Lifting the regularized partition to 3D and assembling the closed building mesh.

Each cell is extruded onto its plane. Incidences of one plan corner whose
heights are within ``tau_v`` are merged, and the plane coefficients and the
merged heights are then solved jointly so that every roof facet is exactly
planar and every merged transition exactly continuous. Walls fill the
remaining height gaps and the footprint boundary; a ground facet closes the
solid.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import AssemblyFailure, MissingPlane, RankDeficient
from .geom import Plane3, ring_signed_area
from .mesh import BuildingMesh, Facet, validate_mesh
from .partition import EXTERIOR, Partition2D, cells_from_loops, trace_loops

log = logging.getLogger(__name__)

FLAT_SLOPE = math.tan(math.radians(2.0))
Z_TOL = 1e-9


@dataclass(frozen=True)
class ExtrudeParams:
    tau_v: float = 0.5
    ground_z: float | None = None  # None: estimated from ground points

    def __post_init__(self):
        if self.tau_v < 0:
            raise ValueError("tau_v must be non-negative")


@dataclass
class RoofGraph:
    corners: np.ndarray  # (V, 2) plan positions
    cell_loops: list  # per cell: vertex loops (outer first)
    incidences: list  # (corner, cell)
    z: np.ndarray  # height per incidence
    klass: np.ndarray  # merge class per incidence
    planes: np.ndarray  # (F, 3) current (a, b, c) per cell
    prior: np.ndarray  # (F, 3) detected (a, b, c)
    weights: np.ndarray  # per-cell area
    flat: np.ndarray  # per-cell bool: constrained horizontal
    rank_deficient: set = field(default_factory=set)

    @property
    def n_classes(self) -> int:
        return int(self.klass.max()) + 1 if len(self.klass) else 0

    def incidence_index(self) -> dict:
        return {inc: k for k, inc in enumerate(self.incidences)}

    def class_heights(self) -> np.ndarray:
        out = np.zeros(self.n_classes)
        cnt = np.zeros(self.n_classes)
        np.add.at(out, self.klass, self.z)
        np.add.at(cnt, self.klass, 1)
        return out / np.maximum(cnt, 1)

    def copy(self) -> "RoofGraph":
        return RoofGraph(
            self.corners.copy(),
            [[list(l) for l in c] for c in self.cell_loops],
            list(self.incidences),
            self.z.copy(),
            self.klass.copy(),
            self.planes.copy(),
            self.prior.copy(),
            self.weights.copy(),
            self.flat.copy(),
            set(self.rank_deficient),
        )

    def planarity_residual(self) -> float:
        """Largest |z - (a x + b y + c)| over all incidences."""
        worst = 0.0
        for k, (v, f) in enumerate(self.incidences):
            a, b, c = self.planes[f]
            x, y = self.corners[v]
            worst = max(worst, abs(self.z[k] - (a * x + b * y + c)))
        return worst


def _cell_rank_ok(corners, loops):
    pts = corners[sorted({v for l in loops for v in l})]
    if len(pts) < 3:
        return False
    c = pts - pts.mean(axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    return s[0] > 0 and s[1] > 1e-9 * max(1.0, s[0])


def extrude_cells(partition: Partition2D) -> RoofGraph:
    """One height incidence per (corner, cell), read off the cell's detected plane."""
    V = partition.vertices
    incid, z, planes, weights, flat = [], [], [], [], []
    deficient = set()
    for f, cell in enumerate(partition.cells):
        if cell.plane is None:
            raise MissingPlane(f"cell {f} has no plane")
        a, b, c = cell.plane.height_form()
        planes.append((a, b, c))
        weights.append(max(partition.cell_area(f), 0.0))
        flat.append(abs(a) < FLAT_SLOPE and abs(b) < FLAT_SLOPE)
        if not _cell_rank_ok(V, cell.loops):
            deficient.add(f)
        for loop in cell.loops:
            for v in loop:
                incid.append((v, f))
                z.append(a * V[v, 0] + b * V[v, 1] + c)
    P = np.array(planes, dtype=float).reshape(-1, 3)
    return RoofGraph(
        V.copy(),
        [[list(l) for l in c.loops] for c in partition.cells],
        incid,
        np.array(z, dtype=float),
        np.arange(len(incid)),
        P.copy(),
        P.copy(),
        np.array(weights, dtype=float),
        np.array(flat, dtype=bool),
        deficient,
    )


def single_linkage_1d(values, threshold):
    """Cluster labels of 1D values: neighbours closer than ``threshold`` share a cluster."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    labels = np.empty(len(values), dtype=np.int64)
    cur = 0
    for k, i in enumerate(order):
        if k and values[i] - values[order[k - 1]] >= threshold:
            cur += 1
        labels[i] = cur
    return labels


def merge_vertical(graph: RoofGraph, tau_v: float) -> RoofGraph:
    """Single-linkage merge of the incidences at each corner; merged heights take the mean."""
    g = graph.copy()
    by_corner = defaultdict(list)
    for k, (v, f) in enumerate(g.incidences):
        by_corner[v].append(k)
    klass = np.empty(len(g.incidences), dtype=np.int64)
    nxt = 0
    for v in sorted(by_corner):
        ks = [k for k in by_corner[v] if g.incidences[k][1] not in g.rank_deficient]
        lone = [k for k in by_corner[v] if g.incidences[k][1] in g.rank_deficient]
        if ks:
            lab = single_linkage_1d(g.z[ks], tau_v)
            for k, l in zip(ks, lab):
                klass[k] = nxt + l
            nxt += int(lab.max()) + 1
        for k in lone:
            klass[k] = nxt
            nxt += 1
    g.klass = klass
    zc = g.class_heights()
    g.z = zc[klass]
    return g


def height_system(graph: RoofGraph):
    """Objective weights and equality constraints of the height optimization.

    Variables are ``[a_0, b_0, c_0, ..., a_F, b_F, c_F, z_0, ..., z_K]``.
    Returns (H diagonal, target vector, A, b).
    """
    F = len(graph.planes)
    K = graph.n_classes
    n = 3 * F + K
    h = np.zeros(n)
    t = np.zeros(n)
    for f in range(F):
        h[3 * f : 3 * f + 3] = graph.weights[f]
        t[3 * f : 3 * f + 3] = graph.prior[f]
    rows, rhs = [], []
    for k, (v, f) in enumerate(graph.incidences):
        x, y = graph.corners[v]
        r = np.zeros(n)
        r[3 * F + graph.klass[k]] = 1.0
        r[3 * f : 3 * f + 3] = (-x, -y, -1.0)
        rows.append(r)
        rhs.append(0.0)
    for f in range(F):
        if f in graph.rank_deficient:
            fixed = (0, 1, 2)
        elif graph.flat[f]:
            fixed = (0, 1)
        else:
            fixed = ()
        for j in fixed:
            r = np.zeros(n)
            r[3 * f + j] = 1.0
            rows.append(r)
            rhs.append(graph.prior[f, j] if f in graph.rank_deficient else 0.0)
    A = np.array(rows).reshape(-1, n)
    return h, t, A, np.array(rhs)


def height_objective(graph: RoofGraph) -> float:
    d = graph.planes - graph.prior
    return float(np.sum(graph.weights[:, None] * d * d))


def optimize_heights(graph: RoofGraph, strict: bool = False, tol: float = 1e-9) -> RoofGraph:
    """Area-weighted closest planes such that every merge class lies on all its cells' planes.

    Cells too degenerate to carry a plane keep their detected plane (and are
    listed in ``rank_deficient``); ``strict=True`` raises ``RankDeficient``.
    """
    if strict and graph.rank_deficient:
        raise RankDeficient(f"cells {sorted(graph.rank_deficient)} cannot carry a plane")
    g = graph.copy()
    h, t, A, b = height_system(g)
    n = len(h)
    m = len(b)
    # KKT of min sum h_i (x_i - t_i)^2  s.t.  A x = b
    Kmat = np.zeros((n + m, n + m))
    Kmat[:n, :n] = np.diag(2.0 * h)
    Kmat[:n, n:] = A.T
    Kmat[n:, :n] = A
    rhs = np.concatenate([2.0 * h * t, b])
    sol = np.linalg.lstsq(Kmat, rhs, rcond=None)[0]
    x = sol[:n]
    F = len(g.planes)
    # coefficients pinned by a constraint take their value exactly, not up to round-off
    for f in range(F):
        if f in g.rank_deficient:
            x[3 * f : 3 * f + 3] = g.prior[f]
        elif g.flat[f]:
            x[3 * f : 3 * f + 2] = 0.0
    g.planes = x[: 3 * F].reshape(-1, 3)
    zc = x[3 * F :]
    g.z = zc[g.klass]
    res = g.planarity_residual()
    if res > tol:
        raise RankDeficient(f"height constraints not satisfiable (residual {res:.3e})")
    return g


# -- mesh assembly -----------------------------------------------------------------


def _split_crossing_edges(graph: RoofGraph, partition: Partition2D):
    """Insert a corner where two unmerged roof profiles along an edge cross.

    Returns updated (graph, partition); the new corner gets one merged class
    whose height lies on both planes.
    """
    g = graph.copy()
    p = partition.copy()
    inc = g.incidence_index()
    for (a, b), (left, right) in sorted(p.edges().items()):
        if left == EXTERIOR or right == EXTERIOR:
            continue
        ka, kb = inc[(a, left)], inc[(a, right)]
        la, lb = inc[(b, left)], inc[(b, right)]
        if g.klass[ka] == g.klass[kb] or g.klass[la] == g.klass[lb]:
            continue
        da = g.z[ka] - g.z[kb]
        db = g.z[la] - g.z[lb]
        if not (da * db < 0 and abs(da) > Z_TOL and abs(db) > Z_TOL):
            continue
        s = da / (da - db)
        x = (1 - s) * g.corners[a] + s * g.corners[b]
        nv = len(g.corners)
        g.corners = np.vstack([g.corners, x])
        p.vertices = np.vstack([p.vertices, x])
        for ci in (left, right):
            for loops in (g.cell_loops[ci], p.cells[ci].loops):
                for loop in loops:
                    n = len(loop)
                    for k in range(n):
                        u, w = loop[k], loop[(k + 1) % n]
                        if {u, w} == {a, b}:
                            loop.insert(k + 1, nv)
                            break
        kind = p.edge_kinds.pop((a, b), "other")
        p.edge_kinds[(min(a, nv), max(a, nv))] = kind
        p.edge_kinds[(min(b, nv), max(b, nv))] = kind
        cl = g.n_classes
        A_, B_, C_ = g.planes[left]
        zx = A_ * x[0] + B_ * x[1] + C_
        g.incidences += [(nv, left), (nv, right)]
        g.z = np.append(g.z, [zx, zx])
        g.klass = np.append(g.klass, [cl, cl])
        inc = g.incidence_index()
        log.debug("split edge %s at crossing", (a, b))
        return _split_crossing_edges(g, p)
    return g, p


class _VertexTable:
    def __init__(self):
        self.points = []
        self.index = {}

    def get(self, corner, level, xyz):
        key = (corner, level)
        if key not in self.index:
            self.index[key] = len(self.points)
            self.points.append(xyz)
        return self.index[key]


def _levels(graph: RoofGraph, ground_z, boundary_corners):
    """Per corner: sorted distinct heights and the level of each merge class."""
    heights = defaultdict(list)
    for k, (v, f) in enumerate(graph.incidences):
        heights[v].append((float(graph.z[k]), int(graph.klass[k])))
    levels = {}
    class_level = {}
    for v, hs in heights.items():
        zs = sorted(z for z, _ in hs)
        if v in boundary_corners:
            zs.append(ground_z)
            zs.sort()
        uniq = []
        for z in zs:
            if not uniq or z - uniq[-1] > Z_TOL:
                uniq.append(z)
        levels[v] = uniq
        for z, kl in hs:
            class_level[(v, kl)] = int(np.argmin([abs(z - u) for u in uniq]))
    return levels, class_level


def _trace_directed(edges):
    """Loops from a set of directed edges; None if some vertex has two exits."""
    nxt = {}
    for a, b in edges:
        if a in nxt:
            return None
        nxt[a] = b
    loops = []
    seen = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        cur = nxt[start]
        while cur != start:
            if cur in seen or cur not in nxt:
                return None
            loop.append(cur)
            seen.add(cur)
            cur = nxt[cur]
        loops.append(loop)
    return loops


def _merge_coplanar_walls(walls, points):
    """Union of wall pieces in one vertical plane that share an edge."""
    groups = defaultdict(list)
    for w in walls:
        n = w.plane.n
        groups[(round(n[0], 9), round(n[1], 9), round(w.plane.d, 9))].append(w)
    out = []
    for key in sorted(groups):
        ws = groups[key]
        parent = list(range(len(ws)))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        owner = {}
        for i, w in enumerate(ws):
            loop = w.loops[0]
            for k in range(len(loop)):
                e = (loop[k], loop[(k + 1) % len(loop)])
                twin = owner.get((e[1], e[0]))
                if twin is not None:
                    ri, rj = find(i), find(twin)
                    if ri != rj:
                        parent[max(ri, rj)] = min(ri, rj)
                owner[e] = i
        comps = defaultdict(list)
        for i in range(len(ws)):
            comps[find(i)].append(i)
        for root in sorted(comps):
            members = comps[root]
            if len(members) == 1:
                out.append(ws[members[0]])
                continue
            directed = set()
            for i in members:
                loop = ws[i].loops[0]
                for k in range(len(loop)):
                    e = (loop[k], loop[(k + 1) % len(loop)])
                    if (e[1], e[0]) in directed:
                        directed.discard((e[1], e[0]))
                    else:
                        directed.add(e)
            loops = _trace_directed(directed)
            if loops is None or len(loops) != 1:
                out.extend(ws[i] for i in members)
                continue
            out.append(Facet([loops[0]], "wall", ws[members[0]].plane))
    return out


def _is_straight(points, a, v, b, tol=1e-9):
    u = points[a] - points[v]
    w = points[b] - points[v]
    nu, nw = np.linalg.norm(u), np.linalg.norm(w)
    if nu == 0 or nw == 0:
        return False
    sin = np.linalg.norm(np.cross(u, w)) / (nu * nw)
    return float(u @ w) < 0 and sin <= tol


def assemble_mesh(graph: RoofGraph, partition: Partition2D, footprint=None, ground_z: float = 0.0, check_intersections: bool = True) -> BuildingMesh:
    """Roof facets, vertical walls and the ground facet as one closed mesh."""
    graph, part = _split_crossing_edges(graph, partition)
    edges = part.edges()
    boundary = {v for (a, b), (l, r) in edges.items() if l == EXTERIOR or r == EXTERIOR for v in (a, b)}
    levels, class_level = _levels(graph, ground_z, boundary)
    inc = graph.incidence_index()
    C = graph.corners
    table = _VertexTable()

    def vid(v, level):
        return table.get(v, level, (C[v, 0], C[v, 1], levels[v][level]))

    def level_of(v, cell):
        if cell == EXTERIOR:
            return 0  # ground is the lowest level of a boundary corner
        return class_level[(v, int(graph.klass[inc[(v, cell)]]))]

    for v in boundary:
        if levels[v][0] != ground_z:
            raise AssemblyFailure("watertight", f"roof at corner {v} does not rise above the ground")

    facets = []
    for f, loops in enumerate(graph.cell_loops):
        a, b, c = graph.planes[f]
        floops = [[vid(v, level_of(v, f)) for v in loop] for loop in loops]
        facets.append(Facet(floops, "roof", Plane3.from_height(a, b, c), cell=f))

    walls = []
    for (a, b), (left, right) in sorted(edges.items()):
        la, lb = level_of(a, left), level_of(b, left)
        ra, rb = level_of(a, right), level_of(b, right)
        if la == ra and lb == rb:
            continue
        if la >= ra and lb >= rb:
            p, q, hp, lp, hq, lq = a, b, la, ra, lb, rb
        elif la <= ra and lb <= rb:
            p, q, hp, lp, hq, lq = b, a, rb, lb, ra, la
        else:
            raise AssemblyFailure("intersection-free", f"roof profiles cross along edge {(a, b)}")
        loop = [vid(p, lp)]
        loop += [vid(q, k) for k in range(lq, hq + 1)]
        loop += [vid(p, k) for k in range(hp, lp, -1)]
        d = C[q] - C[p]
        n = np.array([d[1], -d[0], 0.0]) / np.hypot(*d)
        walls.append(Facet([loop], "wall", Plane3(tuple(n), -float(n[:2] @ C[p]))))
    points = np.array(table.points)
    facets += _merge_coplanar_walls(walls, points)

    # ground: the roof region outline at ground level, seen from below
    he = part.halfedges()
    outside = [(b, a) for (a, b) in he if (b, a) not in he]
    loops = trace_loops(C, outside)
    up = [l[::-1] for l in loops]
    cell_loops, _ = cells_from_loops(C, up)
    for cl in cell_loops:
        facets.append(Facet([[vid(v, 0) for v in l[::-1]] for l in cl], "ground", Plane3((0.0, 0.0, -1.0), ground_z)))

    mesh = BuildingMesh(np.array(table.points), facets)
    mesh = _drop_straight_ground_vertices(mesh, ground_z)
    validate_mesh(mesh, check_intersections=check_intersections)
    return mesh


def _drop_straight_ground_vertices(mesh: BuildingMesh, ground_z):
    """Remove ground-level vertices that sit on a straight run in every loop using them."""
    P = mesh.vertices
    users = defaultdict(list)
    for fi, f in enumerate(mesh.facets):
        for li, loop in enumerate(f.loops):
            for k, v in enumerate(loop):
                users[v].append((fi, li, k))
    drop = set()
    for v, uses in users.items():
        if abs(P[v, 2] - ground_z) > Z_TOL:
            continue
        ok = True
        for fi, li, k in uses:
            loop = mesh.facets[fi].loops[li]
            a, b = loop[k - 1], loop[(k + 1) % len(loop)]
            if abs(P[a, 2] - ground_z) > Z_TOL or abs(P[b, 2] - ground_z) > Z_TOL or not _is_straight(P, a, v, b):
                ok = False
                break
        if ok:
            drop.add(v)
    if not drop:
        return mesh
    used = sorted(set(users) - drop)
    remap = {v: i for i, v in enumerate(used)}
    facets = []
    for f in mesh.facets:
        loops = [[remap[v] for v in loop if v not in drop] for loop in f.loops]
        facets.append(Facet(loops, f.role, f.plane, f.cell))
    return BuildingMesh(P[used], facets)


def triangulate_facets(mesh: BuildingMesh) -> list:
    """Per facet, its constrained Delaunay triangles as vertex-index triples."""
    out = [[] for _ in mesh.facets]
    for fi, tri in mesh.triangles():
        out[fi].append(tri)
    return out


def extrude(partition: Partition2D, params: ExtrudeParams, ground_z: float, check_intersections: bool = True):
    """extrude_cells -> merge_vertical -> optimize_heights -> assemble_mesh."""
    g = extrude_cells(partition)
    g = merge_vertical(g, params.tau_v)
    g = optimize_heights(g)
    mesh = assemble_mesh(g, partition, partition.footprint, ground_z, check_intersections)
    return mesh, g
