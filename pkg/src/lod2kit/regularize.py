"""Roof partition regularization: short-edge collapse and parallel/orthogonal snapping.

The regularity graph is built on the merged partition before any collapse.
Each orientation class gets a frozen target direction, which turns every
relation into a linear equality on vertex coordinates; the vertex layout
closest to the input (least squares) is then found by one KKT solve.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import InconsistentClass, InvalidPartition, RegularizationRollback
from .geom import EPS_GEOM, line_angle, ring_signed_area
from .partition import KIND_RANK, Partition2D, validate_partition

log = logging.getLogger(__name__)

FREE, SLIDER, CORNER = 0, 1, 2


@dataclass(frozen=True)
class Regularize2DParams:
    tau_h: float = 0.5
    parallel_tol: float = 5.0  # degrees
    ortho_tol: float = 5.0

    def __post_init__(self):
        if self.tau_h < 0:
            raise ValueError("tau_h must be non-negative")
        for name in ("parallel_tol", "ortho_tol"):
            v = getattr(self, name)
            if not 0 < v <= 15:
                raise ValueError(f"{name} must lie in (0, 15] degrees")


@dataclass
class RegularityGraph:
    nodes: list  # partition edges (a, b), a < b
    lengths: np.ndarray
    angles: np.ndarray  # degrees in [0, 180)
    anchors: set  # node indices fixed by the footprint
    links: list = field(default_factory=list)  # (i, j, "parallel" | "orthogonal")
    classes: list = field(default_factory=list)  # lists of node indices
    targets: list = field(default_factory=list)  # class target angle in [0, 90)
    dropped: list = field(default_factory=list)  # links removed to restore consistency
    released: set = field(default_factory=set)  # nodes whose constraint was given up

    def class_of(self) -> dict:
        return {n: k for k, members in enumerate(self.classes) for n in members}

    def direction(self, node) -> np.ndarray | None:
        """Unit direction the node's edge is snapped to, or None if unconstrained."""
        k = self.class_of().get(node)
        if k is None:
            return None
        return _branch_dir(self.angles[node], self.targets[k])

    def edge_directions(self) -> dict:
        """Constrained edge -> frozen unit direction (anchors and released nodes excluded)."""
        cls = self.class_of()
        out = {}
        for n, k in cls.items():
            if n in self.anchors or n in self.released:
                continue
            out[self.nodes[n]] = _branch_dir(self.angles[n], self.targets[k])
        return out

    def remap(self, vmap) -> "RegularityGraph":
        """Follow a vertex renumbering (e.g. after collapse); vanished edges drop out.

        When several old edges land on the same new edge the longest one wins.
        """
        best = {}
        for i, (a, b) in enumerate(self.nodes):
            na, nb = vmap.get(a), vmap.get(b)
            if na is None or nb is None or na == nb:
                continue
            e = (min(na, nb), max(na, nb))
            if e not in best or self.lengths[i] > self.lengths[best[e]]:
                best[e] = i
        keep = sorted(best.values())
        new_index = {old: k for k, old in enumerate(keep)}
        nodes = []
        for old in keep:
            a, b = self.nodes[old]
            na, nb = vmap[a], vmap[b]
            nodes.append((min(na, nb), max(na, nb)))
        links = [(new_index[i], new_index[j], r) for i, j, r in self.links if i in new_index and j in new_index]
        classes, targets = [], []
        for members, t in zip(self.classes, self.targets):
            m = [new_index[n] for n in members if n in new_index]
            if len(m) >= 1:
                classes.append(m)
                targets.append(t)
        return RegularityGraph(
            nodes,
            self.lengths[keep],
            self.angles[keep],
            {new_index[n] for n in self.anchors if n in new_index},
            links,
            classes,
            targets,
            list(self.dropped),
            {new_index[n] for n in self.released if n in new_index},
        )


def _angdist(a, b, period):
    d = abs(a - b) % period
    return min(d, period - d)


def _branch_dir(theta, target):
    """Direction at ``target`` or ``target + 90`` (degrees), whichever is closer to ``theta``."""
    phi = target if _angdist(theta, target, 180.0) <= 45.0 else target + 90.0
    r = math.radians(phi)
    return np.array([math.cos(r), math.sin(r)])


def weighted_mod90_mean(angles, weights) -> float:
    """Weighted circular mean of angles taken modulo 90 degrees, in [0, 90)."""
    a = np.radians(np.asarray(angles, dtype=float) * 4.0)
    w = np.asarray(weights, dtype=float)
    s = float(w @ np.sin(a))
    c = float(w @ np.cos(a))
    t = (math.degrees(math.atan2(s, c)) / 4.0) % 90.0
    return 0.0 if t >= 90.0 else t  # -1e-16 % 90 rounds to 90.0


# -- footprint constraints ----------------------------------------------------


def _footprint_lines(footprint):
    if footprint is None:
        return []
    lines = []
    for p, q in footprint.edges():
        d = np.asarray(q, float) - np.asarray(p, float)
        L = float(np.hypot(*d))
        if L > EPS_GEOM:
            lines.append((np.asarray(p, float), np.asarray(q, float), d / L))
    return lines


def vertex_roles(partition: Partition2D, tol: float = 1e-6):
    """Per used vertex: (FREE | SLIDER | CORNER, line) w.r.t. the footprint outline.

    A slider carries the (point, unit direction) of the footprint line it lies on.
    """
    lines = _footprint_lines(partition.footprint)
    V = partition.vertices
    out = {}
    for v in partition.used_vertices():
        x = V[v]
        hits = []
        for p, q, d in lines:
            t = float((x - p) @ d)
            L = float((q - p) @ d)
            if -tol <= t <= L + tol and abs(float((x - p) @ np.array([-d[1], d[0]]))) <= tol:
                if not any(abs(d[0] * h[1][1] - d[1] * h[1][0]) < 1e-9 for h in hits):
                    hits.append((p, d))
        if not hits:
            out[v] = (FREE, None)
        elif len(hits) == 1:
            out[v] = (SLIDER, hits[0])
        else:
            out[v] = (CORNER, None)
    return out


def _on_line(x, line, tol=1e-6):
    p, d = line
    return abs(float((x - p) @ np.array([-d[1], d[0]]))) <= tol


# -- regularity graph -----------------------------------------------------------


def build_regularity_graph(partition: Partition2D, params: Regularize2DParams = Regularize2DParams(), strict: bool = False):
    """Near-parallel / near-orthogonal links between partition edges, grouped into classes.

    Edges on the footprint are anchors: they are never linked to each other and,
    when present in a class, they alone define its target angle. Inconsistent
    classes lose their least supported offending link until consistent
    (``strict=True`` raises ``InconsistentClass`` instead).
    """
    V = partition.vertices
    roles = vertex_roles(partition)
    nodes = sorted(partition.edges())
    n = len(nodes)
    lengths = np.array([float(np.hypot(*(V[b] - V[a]))) for a, b in nodes])
    angles = np.array([math.degrees(line_angle(V[a], V[b])) for a, b in nodes])
    anchors = set()
    for i, (a, b) in enumerate(nodes):
        ra, rb = roles[a], roles[b]
        if ra[0] == FREE or rb[0] == FREE:
            continue
        mid = (V[a] + V[b]) / 2
        line = ra[1] if ra[0] == SLIDER else rb[1]
        if line is not None and _on_line(mid, line) and _on_line(V[a], line) and _on_line(V[b], line):
            anchors.add(i)
        elif line is None and partition.footprint is not None:
            # corner to corner: anchored if it runs along a footprint edge
            for p, q, d in _footprint_lines(partition.footprint):
                if _on_line(V[a], (p, d)) and _on_line(V[b], (p, d)):
                    anchors.add(i)
                    break

    links = []
    for i in range(n):
        for j in range(i + 1, n):
            if i in anchors and j in anchors:
                continue
            d = _angdist(angles[i], angles[j], 180.0)
            if d <= params.parallel_tol:
                links.append((i, j, "parallel"))
            elif abs(d - 90.0) <= params.ortho_tol:
                links.append((i, j, "orthogonal"))

    g = RegularityGraph(nodes, lengths, angles, anchors, links)
    limit = max(params.parallel_tol, params.ortho_tol)
    while True:
        _rebuild_classes(g)
        bad = _worst_member(g, limit)
        if bad is None:
            return g
        node, dev = bad
        incident = [k for k, (i, j, _) in enumerate(g.links) if node in (i, j)]
        k = min(incident, key=lambda k: (min(lengths[g.links[k][0]], lengths[g.links[k][1]]), k))
        if strict:
            raise InconsistentClass(f"edge {nodes[node]} deviates {dev:.3g} deg from its class target")
        log.debug("dropping link %s (deviation %.3g deg)", g.links[k], dev)
        g.dropped.append(g.links.pop(k))


def _rebuild_classes(g: RegularityGraph):
    n = len(g.nodes)
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    linked = set()
    for i, j, _ in g.links:
        linked.update((i, j))
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups = defaultdict(list)
    for i in sorted(linked):
        groups[find(i)].append(i)
    g.classes = [groups[r] for r in sorted(groups)]
    g.targets = []
    for members in g.classes:
        anch = [m for m in members if m in g.anchors]
        use = anch if anch else members
        g.targets.append(weighted_mod90_mean(g.angles[use], g.lengths[use]))


def _worst_member(g: RegularityGraph, limit):
    worst = None
    for members, t in zip(g.classes, g.targets):
        for m in members:
            dev = _angdist(g.angles[m], t, 90.0)
            lim = 1e-7 if m in g.anchors else limit
            if dev > lim and (worst is None or dev - lim > worst[1] - worst[2]):
                worst = (m, dev, lim)
    return None if worst is None else worst[:2]


# -- short-edge collapse ----------------------------------------------------------


def _loop_edges(cells):
    out = set()
    for c in cells:
        for loop in c.loops:
            k = len(loop)
            for i in range(k):
                a, b = loop[i], loop[(i + 1) % k]
                out.add((min(a, b), max(a, b)))
    return out


def _dedupe_cyclic(loop):
    out = [v for i, v in enumerate(loop) if v != loop[i - 1]] if len(loop) > 1 else list(loop)
    return out


def collapse_short_edges(partition: Partition2D, tau_h: float, return_map: bool = False):
    """Collapse edges shorter than ``tau_h``, shortest first.

    Footprint vertices hold their position: a free vertex snaps onto them, two
    vertices on one footprint line meet at their midpoint on that line, and a
    vertex on a footprint line snaps to a footprint corner lying on that line.
    Other combinations are skipped, as is any collapse whose result would not
    be a valid partition. A cell that degenerates is removed only if its area
    is below ``tau_h**2``.

    With ``return_map`` also returns ``{old vertex: new vertex}``.
    """
    p = partition.copy()
    V = p.vertices
    roles = vertex_roles(p)
    alias = {v: v for v in range(len(V))}
    skipped = set()
    tiny = tau_h * tau_h

    while True:
        cand = []
        for a, b in _loop_edges(p.cells):
            if (a, b) in skipped:
                continue
            L = float(np.hypot(*(V[b] - V[a])))
            if L < tau_h:
                cand.append((L, a, b))
        if not cand:
            break
        cand.sort()
        _, a, b = cand[0]
        plan = _collapse_target(a, b, V, roles)
        if plan is None:
            skipped.add((a, b))
            continue
        keep, drop, pos, role = plan
        trial = _apply_collapse(p, keep, drop, pos, tiny)
        if trial is None:
            skipped.add((a, b))
            continue
        try:
            validate_partition(trial)
        except InvalidPartition:
            skipped.add((a, b))
            continue
        p = trial
        V = p.vertices
        roles[keep] = role
        roles.pop(drop, None)
        for v, t in alias.items():
            if t == drop:
                alias[v] = keep
        # edges touching the moved vertex get a fresh chance
        skipped = {e for e in skipped if keep not in e}

    out = p.compact()
    if not return_map:
        return out
    used = p.used_vertices()
    index = {v: i for i, v in enumerate(used)}
    vmap = {v: index[t] for v, t in alias.items() if t in index}
    return out, vmap


def _collapse_target(a, b, V, roles):
    (ra, la), (rb, lb) = roles[a], roles[b]
    if ra == FREE and rb == FREE:
        return a, b, (V[a] + V[b]) / 2, (FREE, None)
    if ra == FREE or rb == FREE:
        keep, drop = (b, a) if ra == FREE else (a, b)
        return keep, drop, V[keep].copy(), roles[keep]
    if ra == SLIDER and rb == SLIDER:
        if abs(la[1][0] * lb[1][1] - la[1][1] * lb[1][0]) < 1e-9 and _on_line(V[b], la):
            return a, b, (V[a] + V[b]) / 2, roles[a]
        return None
    if ra == CORNER and rb == CORNER:
        return None
    keep, drop = (a, b) if ra == CORNER else (b, a)
    if _on_line(V[keep], roles[drop][1]):
        return keep, drop, V[keep].copy(), roles[keep]
    return None


def _apply_collapse(p: Partition2D, keep, drop, pos, tiny):
    q = p.copy()
    q.vertices[keep] = pos
    cells = []
    for c in q.cells:
        area = sum(ring_signed_area(p.vertices[l]) for l in c.loops)
        loops = []
        dead = False
        for li, loop in enumerate(c.loops):
            new = _dedupe_cyclic([keep if v == drop else v for v in loop])
            if len(new) != len(set(new)):
                return None  # pinched loop
            if len(new) < 3:
                if abs(ring_signed_area(p.vertices[loop])) >= tiny:
                    return None
                if li == 0:
                    dead = True
                    break
                continue
            loops.append(new)
        if dead:
            if area >= tiny:
                return None
            continue
        c.loops = loops
        cells.append(c)
    q.cells = cells
    kinds = {}
    for (u, w), k in q.edge_kinds.items():
        u = keep if u == drop else u
        w = keep if w == drop else w
        if u == w:
            continue
        e = (min(u, w), max(u, w))
        old = kinds.get(e)
        if old is None or KIND_RANK.get(k, 4) < KIND_RANK.get(old, 4):
            kinds[e] = k
    q.edge_kinds = kinds
    return q


# -- constrained vertex optimization --------------------------------------------


def constraint_system(partition: Partition2D, directions: dict):
    """Linear equalities ``A x = b`` on the stacked vertex coordinates.

    ``directions`` maps an edge (a, b) to its frozen unit direction; footprint
    sliders keep their line, footprint corners stay put. Returns (A, b, rows)
    with ``rows`` naming each constraint as ("edge", e) or ("vertex", v).
    """
    V = partition.vertices
    n = len(V)
    roles = vertex_roles(partition)
    rows, A, rhs = [], [], []
    for (a, b), d in sorted(directions.items()):
        nrm = np.array([-d[1], d[0]])
        r = np.zeros(2 * n)
        r[2 * b : 2 * b + 2] = nrm
        r[2 * a : 2 * a + 2] = -nrm
        A.append(r)
        rhs.append(0.0)
        rows.append(("edge", (a, b)))
    for v in sorted(roles):
        role, line = roles[v]
        if role == SLIDER:
            p, d = line
            nrm = np.array([-d[1], d[0]])
            r = np.zeros(2 * n)
            r[2 * v : 2 * v + 2] = nrm
            A.append(r)
            rhs.append(float(nrm @ p))
            rows.append(("vertex", v))
        elif role == CORNER:
            for k in (0, 1):
                r = np.zeros(2 * n)
                r[2 * v + k] = 1.0
                A.append(r)
                rhs.append(float(V[v, k]))
                rows.append(("vertex", v))
    A = np.array(A).reshape(-1, 2 * n)
    return A, np.array(rhs), rows


def solve_kkt(x0, A, b):
    """argmin ||x - x0||^2 subject to A x = b, via the (possibly rank-deficient) KKT system."""
    n = len(x0)
    m = len(b)
    x0 = np.asarray(x0, dtype=float)
    if m == 0 or np.abs(A @ x0 - b).max() <= 1e-12:
        return x0.copy()  # already feasible: the minimizer is x0 itself
    K = np.zeros((n + m, n + m))
    K[:n, :n] = 2.0 * np.eye(n)
    K[:n, n:] = A.T
    K[n:, :n] = A
    rhs = np.concatenate([2.0 * x0, b])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n]


def optimize_vertices(partition: Partition2D, graph: RegularityGraph, tol: float = 1e-9) -> Partition2D:
    """Move vertices as little as possible so every class edge follows its frozen direction.

    Infeasible constraint sets shed the shortest violated edge constraint
    (recorded in ``graph.released``) until feasible. Raises
    ``RegularizationRollback`` (carrying the untouched input as ``.partition``)
    if the result would not be a valid partition.
    """
    V = partition.vertices
    x0 = V.reshape(-1).copy()
    node_index = {e: i for i, e in enumerate(graph.nodes)}
    while True:
        directions = {e: d for e, d in graph.edge_directions().items() if e in node_index}
        A, b, rows = constraint_system(partition, directions)
        x = solve_kkt(x0, A, b)
        res = np.abs(A @ x - b) if len(b) else np.zeros(0)
        if not len(res) or res.max() <= tol:
            break
        viol = [rows[k][1] for k in np.nonzero(res > tol)[0] if rows[k][0] == "edge"]
        if not viol:
            # only footprint constraints left and they conflict: give up on regularizing
            exc = RegularizationRollback("footprint constraints are inconsistent")
            exc.partition = partition
            raise exc
        e = min(viol, key=lambda e: (float(np.hypot(*(V[e[1]] - V[e[0]]))), e))
        graph.released.add(node_index[e])
        log.debug("released constraint on edge %s", e)

    out = partition.copy()
    out.vertices = x.reshape(-1, 2)
    try:
        validate_partition(out)
    except InvalidPartition as err:
        exc = RegularizationRollback(f"optimized layout is invalid ({err.invariant})")
        exc.partition = partition
        raise exc from err
    return out


def merge_straight_chains(partition: Partition2D, graph: RegularityGraph):
    """Drop free degree-2 vertices whose two edges are snapped to the same direction.

    The solve would make such edges collinear anyway; removing the vertex first
    keeps an infeasible constraint set from leaving a kink behind. Returns the
    new partition and graph.
    """
    p = partition.copy()
    g = graph
    while True:
        roles = vertex_roles(p)
        adj = defaultdict(set)
        for a, b in p.edges():
            adj[a].add(b)
            adj[b].add(a)
        index = {e: i for i, e in enumerate(g.nodes)}
        cls = g.class_of()
        hit = None
        for v in sorted(adj):
            if len(adj[v]) != 2 or roles[v][0] != FREE:
                continue
            a, b = sorted(adj[v])
            i = index.get((min(a, v), max(a, v)))
            j = index.get((min(b, v), max(b, v)))
            if i is None or j is None or cls.get(i) is None or cls.get(i) != cls.get(j):
                continue
            k = cls[i]
            if abs(float(_branch_dir(g.angles[i], g.targets[k]) @ _branch_dir(g.angles[j], g.targets[k]))) < 0.5:
                continue
            if any(v in l and len(l) <= 3 for c in p.cells for l in c.loops):
                continue
            hit = (v, a, b, i, j)
            break
        if hit is None:
            return p, g
        v, a, b, i, j = hit
        trial = p.copy()
        for c in trial.cells:
            c.loops = [[x for x in l if x != v] for l in c.loops]
        ka = trial.edge_kinds.pop((min(a, v), max(a, v)), "other")
        kb = trial.edge_kinds.pop((min(b, v), max(b, v)), "other")
        trial.edge_kinds[(min(a, b), max(a, b))] = ka if KIND_RANK.get(ka, 4) <= KIND_RANK.get(kb, 4) else kb
        try:
            validate_partition(trial)
        except InvalidPartition:
            # the straightened chain would cross something: stop merging
            return p, g
        keep = i if g.lengths[i] >= g.lengths[j] else j
        vmap = {u: u for u in range(len(p.vertices)) if u != v}
        g2 = g.remap(vmap)
        # the surviving longer edge becomes (a, b)
        node = (min(a, b), max(a, b))
        g2.nodes.append(node)
        g2.lengths = np.append(g2.lengths, g.lengths[i] + g.lengths[j])
        g2.angles = np.append(g2.angles, g.angles[keep])
        k = cls[keep]
        tgt = g.targets[k]
        for members, t in zip(g2.classes, g2.targets):
            if t == tgt:
                members.append(len(g2.nodes) - 1)
                break
        else:
            g2.classes.append([len(g2.nodes) - 1])
            g2.targets.append(tgt)
        p, g = trial, g2


def link_residuals(partition: Partition2D, graph: RegularityGraph) -> np.ndarray:
    """|cross| for parallel and |dot| for orthogonal links between constrained edges."""
    V = partition.vertices
    cls = graph.class_of()
    out = []
    for i, j, rel in graph.links:
        if i in graph.released or j in graph.released or i not in cls:
            continue
        a1, b1 = graph.nodes[i]
        a2, b2 = graph.nodes[j]
        if max(a1, b1, a2, b2) >= len(V):
            continue
        d1 = V[b1] - V[a1]
        d2 = V[b2] - V[a2]
        d1 = d1 / np.hypot(*d1)
        d2 = d2 / np.hypot(*d2)
        if rel == "parallel":
            out.append(abs(d1[0] * d2[1] - d1[1] * d2[0]))
        else:
            out.append(abs(float(d1 @ d2)))
    return np.array(out)


def regularize(partition: Partition2D, params: Regularize2DParams = Regularize2DParams()):
    """Graph, collapse, optimize. Returns (partition, graph, degraded_reason or None)."""
    from .partition import remove_collinear_vertices

    graph = build_regularity_graph(partition, params)
    collapsed, vmap = collapse_short_edges(partition, params.tau_h, return_map=True)
    graph = graph.remap(vmap)
    collapsed, graph = merge_straight_chains(collapsed, graph)
    try:
        opt = optimize_vertices(collapsed, graph)
        reason = None
    except RegularizationRollback as exc:
        log.warning("regularization rolled back: %s", exc)
        opt, reason = exc.partition, str(exc)
    out, vmap = remove_collinear_vertices(opt, return_map=True)
    return out, graph.remap(vmap), reason
