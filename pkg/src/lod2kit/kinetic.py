"""Kinetic extension of a segment soup into a polygonal partition.

Every non-footprint segment grows from both tips at unit speed along its
supporting line. A tip stops when it reaches the bounding box, touches a
footprint edge, runs into a collinear segment, or would cross more than K
other segments. Collision times are known in closed form, so the simulation
is a sorted sweep over candidate events rather than time stepping.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptySoup
from .geom import EPS_GEOM, Segment2
from .partition import build_arrangement

BARRIER_KINDS = ("footprint", "bbox")


@dataclass(frozen=True)
class KineticParams:
    max_extensions: float = 1  # K; math.inf for the full line arrangement
    bbox_margin: float = 1.5

    def __post_init__(self):
        if self.max_extensions < 0:
            raise ValueError("K must be non-negative")


def _exit_time(o, u, bbox):
    minx, miny, maxx, maxy = bbox
    t = math.inf
    for k, (lo, hi) in enumerate(((minx, maxx), (miny, maxy))):
        if u[k] > 1e-15:
            t = min(t, (hi - o[k]) / u[k])
        elif u[k] < -1e-15:
            t = min(t, (lo - o[k]) / u[k])
    return max(t, 0.0)


def extend_segments(segments, bbox, K=1, eps=EPS_GEOM):
    """Run the kinetic simulation; returns the frozen segments and the tip freeze times."""
    segs = [s if isinstance(s, Segment2) else Segment2(*s) for s in segments]
    n = len(segs)
    P = np.array([s.p for s in segs], dtype=float).reshape(-1, 2)
    Q = np.array([s.q for s in segs], dtype=float).reshape(-1, 2)
    L = np.hypot(*(Q - P).T)
    D = (Q - P) / L[:, None]
    static = [s.kind in BARRIER_KINDS for s in segs]

    # tip k of segment i: k=0 leaves p along -d, k=1 leaves q along +d
    freeze = np.full((n, 2), math.inf)
    hits = np.zeros((n, 2), dtype=np.int64)
    for i in range(n):
        if static[i]:
            freeze[i] = 0.0

    # events: (time, segment, tip, other segment, type, distance, other tip)
    # type 0 = bbox, 1 = transversal hit, 2 = collinear stop, 3 = collinear meeting
    heap = []
    for i in range(n):
        if static[i]:
            continue
        for k in (0, 1):
            o = P[i] if k == 0 else Q[i]
            u = -D[i] if k == 0 else D[i]
            t_exit = _exit_time(o, u, bbox)
            heap.append((t_exit, i, k, -1, 0, 0.0, -1))
            for j in range(n):
                if j == i:
                    continue
                dj = D[j]
                den = u[0] * dj[1] - u[1] * dj[0]
                w = P[j] - o
                if abs(den) <= 1e-12:
                    # parallel: only collinear segments matter
                    if abs(w[0] * u[1] - w[1] * u[0]) > eps:
                        continue
                    ra = float(w @ u)
                    rb = float((Q[j] - o) @ u)
                    r0, r1 = min(ra, rb), max(ra, rb)
                    if r1 < -eps or r0 > t_exit + eps:
                        continue
                    if r0 <= eps:
                        heap.append((0.0, i, k, j, 2, 0.0, -1))
                    elif static[j]:
                        heap.append((r0, i, k, j, 2, 0.0, -1))
                    else:
                        facing = 0 if float(dj @ u) > 0 else 1
                        heap.append((r0 / 2.0, i, k, j, 3, r0, facing))
                    continue
                tau = (w[0] * dj[1] - w[1] * dj[0]) / den
                sigma = (w[0] * u[1] - w[1] * u[0]) / den
                if tau < -eps or tau > t_exit + eps:
                    continue
                tau = max(tau, 0.0)
                if sigma < -eps:
                    need, jt = -sigma, 0
                elif sigma > L[j] + eps:
                    need, jt = sigma - L[j], 1
                else:
                    need, jt = 0.0, -1
                if need > 0 and (static[j] or need > tau + eps):
                    continue
                heap.append((tau, i, k, j, 1, need, jt))
    heapq.heapify(heap)

    while heap:
        tau, i, k, j, typ, dist, jt = heapq.heappop(heap)
        if freeze[i, k] < math.inf:
            continue
        if typ in (0, 2):
            freeze[i, k] = tau
            continue
        if typ == 3:
            f = freeze[j, jt]
            if f >= tau - eps:
                freeze[i, k] = tau
            else:
                heapq.heappush(heap, (dist - f, i, k, j, 2, 0.0, -1))
            continue
        if dist > 0 and min(tau, freeze[j, jt]) + eps < dist:
            continue  # the other segment never grew this far
        if static[j]:
            freeze[i, k] = tau
            continue
        hits[i, k] += 1
        if hits[i, k] > K:
            freeze[i, k] = tau

    out = []
    for i, s in enumerate(segs):
        if static[i]:
            out.append(s)
            continue
        p = P[i] - freeze[i, 0] * D[i]
        q = Q[i] + freeze[i, 1] * D[i]
        out.append(Segment2(p, q, s.kind, s.sources))
    return out, freeze



def kinetic_bbox(footprint, margin):
    minx, miny, maxx, maxy = footprint.bounds()
    return (minx - margin, miny - margin, maxx + margin, maxy + margin)


def build_partition(soup, bbox, params: KineticParams = KineticParams(), footprint=None):
    """Kinetic partition of ``bbox`` seeded by the soup's segments."""
    segs = list(soup)
    if not segs:
        raise EmptySoup("segment soup is empty")
    grown, _ = extend_segments(segs, bbox, params.max_extensions)
    return build_arrangement(grown, bbox=bbox, footprint=footprint)
