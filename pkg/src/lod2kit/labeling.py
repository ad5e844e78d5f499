"""Cell labeling by greedy descent on a data + pairwise + complexity energy.

Each partition cell takes a primitive id, or 0 for ground. The energy is

    E(X) = w_d * sum_i D_i(x_i) + w_p * sum_ij P_ij(x_i, x_j) + w_c * #{ij : x_i != x_j}

where D measures how poorly the label's contour covers the cell, P the mean
height gap of the two labels' planes along the shared edge, and the last
term counts the edges left between differently labelled cells.
"""

from __future__ import annotations

import csv
import heapq
import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely import contains_xy

from .errors import NonConvergence
from .geom import PointCloud, Polygon2
from .partition import (
    EXTERIOR,
    GROUND,
    Cell,
    Partition2D,
    cells_from_loops,
    point_in_ring,
    remove_collinear_vertices,
    trace_loops,
)

log = logging.getLogger(__name__)

DESCENT_TOL = 1e-12


@dataclass(frozen=True)
class EnergyWeights:
    w_d: float = 1.0
    w_p: float = 0.05
    w_c: float | None = None  # None -> 0.05 * median contour perimeter / primitive count
    ridge_tol: float = 0.1

    def __post_init__(self):
        ws = [self.w_d, self.w_p] + ([self.w_c] if self.w_c is not None else [])
        if any(w < 0 for w in ws):
            raise ValueError("energy weights must be non-negative")
        if self.w_c is not None and not any(w > 0 for w in ws):
            raise ValueError("at least one weight must be positive")


def ground_elevation(cloud: PointCloud, footprint: Polygon2, ring: float = 2.0, pct: float = 5.0) -> float:
    """Low percentile of point heights just outside the footprint."""
    shape = footprint.to_shapely()
    xyz = cloud.xyz
    outer = shape.buffer(ring)
    near = contains_xy(outer, xyz[:, 0], xyz[:, 1]) & ~contains_xy(shape, xyz[:, 0], xyz[:, 1])
    if near.any():
        return float(np.percentile(xyz[near, 2], pct))
    inside = contains_xy(shape, xyz[:, 0], xyz[:, 1])
    if inside.any():
        return float(xyz[inside, 2].min())
    return float(xyz[:, 2].min()) if len(xyz) else 0.0


def default_complexity_weight(primitives) -> float:
    per = [p.plan_shape().length for p in primitives]
    if not per:
        return 0.0
    return 0.05 * float(np.median(per)) / len(per)


# -- energy terms ------------------------------------------------------------


def coverage(cell_shape, label, primitives, union=None) -> float:
    """Fraction of the cell covered by the label's contour (label 0: by no contour)."""
    area = cell_shape.area
    if area <= 0:
        return 0.0
    if label == GROUND:
        if union is None:
            union = shapely.union_all([p.plan_shape() for p in primitives])
        return 1.0 - cell_shape.intersection(union).area / area
    prim = next(p for p in primitives if p.id == label)
    return cell_shape.intersection(prim.plan_shape()).area / area


def data_term(cell_shape, label, primitives, inside=True, union=None) -> float:
    if not inside:
        return 0.0 if label == GROUND else np.inf
    return cell_shape.area * (1.0 - coverage(cell_shape, label, primitives, union))


def mean_abs_linear(g0: float, g1: float) -> float:
    """Mean of |g| over [0, 1] for g linear from g0 to g1."""
    if g0 * g1 >= 0:
        return (abs(g0) + abs(g1)) / 2.0
    return (g0 * g0 + g1 * g1) / (2.0 * abs(g0 - g1))


def label_height(label, planes, z0):
    if label == GROUND:
        return lambda x, y: z0
    pl = planes[label]
    return lambda x, y: float(pl.z_at(x, y))


def pairwise_term(p, q, label_i, label_j, planes, z0=0.0, ridge_tol=0.1) -> float:
    """Edge length times the mean height gap between the two labels along the edge."""
    if label_i == label_j:
        return 0.0
    zi = label_height(label_i, planes, z0)
    zj = label_height(label_j, planes, z0)
    g0 = zi(*p) - zj(*p)
    g1 = zi(*q) - zj(*q)
    m = mean_abs_linear(g0, g1)
    if m < ridge_tol:
        return 0.0
    return float(np.hypot(q[0] - p[0], q[1] - p[1])) * m


# -- problem ------------------------------------------------------------------


@dataclass
class LabelProblem:
    """Array form of the energy.

    ``data[i, l]`` is the (weighted) data cost; ``edges`` lists (i, j, cost matrix)
    for cost-bearing adjacencies; ``adjacency`` lists every cell pair sharing an
    edge (moves may go to any neighbour's label).
    """

    data: np.ndarray
    edges: list
    w_c: float
    adjacency: list = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if not self.adjacency:
            self.adjacency = sorted({(min(i, j), max(i, j)) for i, j, _ in self.edges})
        self._nb = defaultdict(set)
        for i, j in self.adjacency:
            self._nb[i].add(j)
            self._nb[j].add(i)
        self._inc = defaultdict(list)
        for k, (i, j, _) in enumerate(self.edges):
            self._inc[i].append(k)
            self._inc[j].append(k)

    @property
    def n_cells(self):
        return self.data.shape[0]

    @property
    def n_labels(self):
        return self.data.shape[1]

    def terms(self, X):
        X = np.asarray(X)
        ed = float(self.data[np.arange(len(X)), X].sum())
        ep = 0.0
        cut = 0
        for i, j, C in self.edges:
            if X[i] != X[j]:
                ep += C[X[i], X[j]]
                cut += 1
        return ed, ep, self.w_c * cut

    def energy(self, X) -> float:
        return float(sum(self.terms(X)))

    def delta(self, X, cells, label) -> float:
        """Energy change of moving every cell in ``cells`` to ``label``."""
        S = set(cells)
        d = 0.0
        for i in S:
            d += self.data[i, label] - self.data[i, X[i]]
        if not np.isfinite(d):
            return np.inf if d > 0 else d
        seen = set()
        for i in S:
            for k in self._inc[i]:
                if k in seen:
                    continue
                seen.add(k)
                a, b, C = self.edges[k]
                la, lb = X[a], X[b]
                na = label if a in S else la
                nb = label if b in S else lb
                old = (C[la, lb] + self.w_c) if la != lb else 0.0
                new = (C[na, nb] + self.w_c) if na != nb else 0.0
                d += new - old
        return float(d)

    def neighbors(self, i):
        return self._nb[i]


def build_problem(partition: Partition2D, primitives, footprint: Polygon2, z0: float, weights=EnergyWeights()):
    """Geometric energy terms of every cell of a (bbox-tiling) partition."""
    labels = [GROUND] + [p.id for p in primitives]
    col = {l: k for k, l in enumerate(labels)}
    planes = {p.id: p.plane for p in primitives}
    fshape = footprint.to_shapely()
    union = shapely.union_all([p.plan_shape() for p in primitives])
    N = len(partition.cells)
    data = np.zeros((N, len(labels)))
    inside = np.zeros(N, dtype=bool)
    for ci in range(N):
        sh = partition.cell_shape(ci)
        rp = sh.representative_point()
        inside[ci] = bool(fshape.contains(rp))
        for l in labels:
            data[ci, col[l]] = data_term(sh, l, primitives, inside[ci], union)
    data *= weights.w_d
    w_c = weights.w_c if weights.w_c is not None else default_complexity_weight(primitives)
    edges = []
    adjacency = set()
    V = partition.vertices
    for (a, b), (l, r) in sorted(partition.edges().items()):
        if l < 0 or r < 0 or l == r:
            continue
        adjacency.add((min(l, r), max(l, r)))
        if partition.edge_kind(a, b) in ("footprint", "bbox"):
            continue
        if not (inside[l] and inside[r]):
            continue
        C = np.zeros((len(labels), len(labels)))
        for li in labels:
            for lj in labels:
                if li != lj:
                    C[col[li], col[lj]] = weights.w_p * pairwise_term(V[a], V[b], li, lj, planes, z0, weights.ridge_tol)
        edges.append((l, r, C))
    prob = LabelProblem(data, edges, w_c, sorted(adjacency))
    prob.labels = labels
    prob.inside = inside
    return prob


# -- optimization -------------------------------------------------------------


@dataclass
class LabelState:
    X: np.ndarray  # column indices into problem.labels
    E_d: float
    E_p: float
    E_c: float
    trace: list = field(default_factory=list)  # (moves, E_d, E_p, E_c, E)
    moves: int = 0

    @property
    def E(self):
        return self.E_d + self.E_p + self.E_c


def initial_labels(problem: LabelProblem) -> np.ndarray:
    """Label of maximal coverage, i.e. of minimal data cost (lowest id on ties)."""
    return np.argmin(problem.data, axis=1)


def _regions(problem, X):
    """Connected same-label components as sorted tuples."""
    seen = set()
    out = []
    for s in range(problem.n_cells):
        if s in seen:
            continue
        comp = [s]
        seen.add(s)
        stack = [s]
        while stack:
            c = stack.pop()
            for n in problem.neighbors(c):
                if n not in seen and X[n] == X[s]:
                    seen.add(n)
                    comp.append(n)
                    stack.append(n)
        out.append(tuple(sorted(comp)))
    return out


def _band_components(problem, X, region, label):
    """Connected pieces of ``region`` made of cells that touch ``label``."""
    band = {c for c in region if any(X[n] == label for n in problem.neighbors(c))}
    out = []
    while band:
        s = min(band)
        band.discard(s)
        comp, stack = [s], [s]
        while stack:
            c = stack.pop()
            for n in problem.neighbors(c):
                if n in band:
                    band.discard(n)
                    comp.append(n)
                    stack.append(n)
        out.append(tuple(sorted(comp)))
    return out


def _moves_for(problem, X, cells, regions_of):
    """Single-cell, whole-region and boundary-band flips touching ``cells``.

    A band move hands over the connected strip of a region that borders a
    neighbouring label, e.g. one column of cells shifting between two roof
    sections.
    """
    moves = set()
    seen_regions = set()
    for i in cells:
        for n in problem.neighbors(i):
            if X[n] != X[i]:
                moves.add(((i,), int(X[n])))
        reg = regions_of[i]
        if reg in seen_regions:
            continue
        seen_regions.add(reg)
        targets = {int(X[n]) for c in reg for n in problem.neighbors(c) if X[n] != X[i]}
        for lab in targets:
            moves.add((reg, lab))
            for comp in _band_components(problem, X, reg, lab):
                if 1 < len(comp) < len(reg):
                    moves.add((comp, lab))
    return moves


def assign_labels(problem: LabelProblem, X0=None, max_moves=None, trace_path=None) -> LabelState:
    """Greedy best-move descent from ``X0`` (default: max-coverage labels)."""
    X = np.array(initial_labels(problem) if X0 is None else X0, dtype=np.int64)
    N = problem.n_cells
    cap = max_moves if max_moves is not None else 50 * max(N, 1)
    ed, ep, ec = problem.terms(X)
    state = LabelState(X, ed, ep, ec)
    state.trace.append((0, ed, ep, ec, ed + ep + ec))

    def regions_map():
        rm = {}
        for reg in _regions(problem, X):
            for c in reg:
                rm[c] = reg
        return rm

    def push_all(cells, heap, rm):
        for cells_, lab in sorted(_moves_for(problem, X, cells, rm)):
            d = problem.delta(X, cells_, lab)
            if d < -DESCENT_TOL:
                heapq.heappush(heap, (d, len(cells_), cells_, lab))

    heap = []
    rm = regions_map()
    push_all(range(N), heap, rm)
    while True:
        while heap:
            d, _, cells, lab = heapq.heappop(heap)
            if all(X[c] == lab for c in cells):
                continue
            cur = problem.delta(X, cells, lab)
            if cur >= -DESCENT_TOL:
                continue
            if abs(cur - d) > 1e-12:
                heapq.heappush(heap, (cur, len(cells), cells, lab))
                continue
            if state.moves >= cap:
                raise NonConvergence(f"labeling exceeded {cap} moves")
            before = state.E
            for c in cells:
                X[c] = lab
            state.moves += 1
            state.E_d, state.E_p, state.E_c = problem.terms(X)
            state.trace.append((state.moves, state.E_d, state.E_p, state.E_c, state.E))
            if not state.E < before:
                raise NonConvergence("applied move did not decrease the energy")
            rm = regions_map()
            touched = set(cells)
            for c in cells:
                touched |= problem.neighbors(c)
            for c in list(touched):
                touched |= set(rm[c])
            push_all(sorted(touched), heap, rm)
        # queue exhausted: a full rescan confirms the local minimum
        rm = regions_map()
        push_all(range(N), heap, rm)
        if not heap:
            break
    if trace_path is not None:
        with open(trace_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "E_d", "E_p", "E_c", "E"])
            w.writerows(state.trace)
    return state


# -- merging ---------------------------------------------------------------------


def merge_cells(partition: Partition2D, labels, planes) -> Partition2D:
    """Fuse adjacent same-label cells, drop ground, remove collinear degree-2 vertices.

    ``labels`` holds one label id per cell; ``planes`` maps label id -> Plane3.
    """
    N = len(partition.cells)
    labels = [int(l) for l in labels]
    parent = list(range(N))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for (a, b), (l, r) in partition.edges().items():
        if l >= 0 and r >= 0 and labels[l] == labels[r]:
            rl, rr = find(l), find(r)
            if rl != rr:
                parent[max(rl, rr)] = min(rl, rr)
    regions = defaultdict(list)
    for c in range(N):
        regions[find(c)].append(c)
    he = partition.halfedges()
    V = partition.vertices
    cells = []
    for root in sorted(regions):
        members = regions[root]
        lab = labels[members[0]]
        if lab == GROUND:
            continue
        mset = set(members)
        boundary = [e for e, c in he.items() if c in mset and he.get((e[1], e[0]), EXTERIOR) not in mset]
        loops = trace_loops(V, boundary)
        groups, orphans = cells_from_loops(V, loops)
        for h in orphans:
            # a hole pinched to its own outer ring at a vertex
            for g in groups:
                vx = next((v for v in h if v not in set(g[0])), None)
                if vx is not None and point_in_ring(V[vx], V[g[0]]):
                    g.append(h)
                    break
        for g in groups:
            cells.append(Cell(g, lab, planes.get(lab)))
    kinds = {}
    out = Partition2D(V.copy(), cells, None, dict(partition.edge_kinds), partition.footprint)
    live = out.edges()
    for e in live:
        kinds[e] = partition.edge_kinds.get(e, "other")
    out.edge_kinds = kinds
    out = remove_collinear_vertices(out, 1e-9)
    return out


def label_ids(problem: LabelProblem, X) -> list:
    return [problem.labels[x] for x in X]


def plane_table(primitives) -> dict:
    return {p.id: p.plane for p in primitives}
