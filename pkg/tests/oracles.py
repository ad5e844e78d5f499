"""Independent reference implementations used to check the library.

Each oracle takes a deliberately different route from the code under test:
brute force instead of spatial indices, time stepping instead of event
sweeps, null-space elimination instead of KKT factorization, exhaustive
enumeration instead of greedy descent.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import shapely
from shapely.geometry import LineString, Polygon, box

# -- linear algebra ------------------------------------------------------------


def eigen_plane(points):
    """TLS plane from the smallest eigenvector of the 3x3 covariance (normal up)."""
    P = np.asarray(points, float)
    c = P.mean(axis=0)
    C = (P - c).T @ (P - c)
    w, V = np.linalg.eigh(C)
    n = V[:, 0]
    if n[2] < 0:
        n = -n
    return n, -float(n @ c)


def height_form(n, d):
    return -n[0] / n[2], -n[1] / n[2], -d / n[2]


def constrained_lsq(H, t, A, b):
    """min sum_i H_i (x_i - t_i)^2 s.t. A x = b, by null-space elimination.

    Returns (x, objective). ``H`` is the diagonal weight vector.
    """
    H = np.asarray(H, float)
    n = len(H)
    A = np.asarray(A, float).reshape(-1, n)
    b = np.asarray(b, float)
    if len(b):
        x_p = scipy.linalg.lstsq(A, b)[0]
        N = scipy.linalg.null_space(A)
    else:
        x_p = np.zeros(n)
        N = np.eye(n)
    if N.shape[1] == 0:
        x = x_p
    else:
        W = np.sqrt(H)
        M = W[:, None] * N
        rhs = W * (t - x_p)
        y = scipy.linalg.lstsq(M, rhs)[0]
        x = x_p + N @ y
    return x, float(np.sum(H * (x - t) ** 2))


# -- point sets ----------------------------------------------------------------


def brute_chamfer(src, dst):
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    total = 0.0
    for p in src:
        best = math.inf
        for q in dst:
            d = math.sqrt((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 + (p[2] - q[2]) ** 2)
            if d < best:
                best = d
        total += best
    return total / len(src)


def ransac_max_inliers(points, eps, trials, seed=0):
    """Largest inlier count over ``trials`` random 3-point planes."""
    rng = np.random.default_rng(seed)
    P = np.asarray(points, float)
    best = 0
    chunk = 2000
    for start in range(0, trials, chunk):
        m = min(chunk, trials - start)
        idx = rng.integers(0, len(P), size=(m, 3))
        a, b, c = P[idx[:, 0]], P[idx[:, 1]], P[idx[:, 2]]
        n = np.cross(b - a, c - a)
        nn = np.linalg.norm(n, axis=1)
        ok = nn > 1e-12
        n = n[ok] / nn[ok, None]
        d = -np.einsum("ij,ij->i", n, a[ok])
        dist = np.abs(P @ n.T + d)
        best = max(best, int((dist <= eps).sum(axis=0).max()) if len(d) else 0)
    return best


def single_linkage_pairs(values, threshold):
    """Cluster labels from an exhaustive pairwise scan + transitive closure."""
    n = len(values)
    lab = list(range(n))
    changed = True
    while changed:
        changed = False
        for i in range(n):
            for j in range(n):
                if abs(values[i] - values[j]) < threshold and lab[i] != lab[j]:
                    m = min(lab[i], lab[j])
                    lab[i] = lab[j] = m
                    changed = True
    return lab


# -- plane geometry --------------------------------------------------------------


def raster_area(shape, res=0.01):
    """Area of a shapely geometry by counting covered cell centres."""
    minx, miny, maxx, maxy = shape.bounds
    xs = np.arange(minx + res / 2, maxx, res)
    ys = np.arange(miny + res / 2, maxy, res)
    X, Y = np.meshgrid(xs, ys)
    inside = shapely.contains_xy(shape, X.ravel(), Y.ravel())
    return float(inside.sum()) * res * res


def parametric_intersection(p1, q1, p2, q2):
    """Intersection of two closed segments via a 2x2 solve, or None if parallel/disjoint."""
    d1 = np.subtract(q1, p1)
    d2 = np.subtract(q2, p2)
    M = np.array([[d1[0], -d2[0]], [d1[1], -d2[1]]])
    if abs(np.linalg.det(M)) < 1e-12:
        return None
    t, u = np.linalg.solve(M, np.subtract(p2, p1))
    if -1e-12 <= t <= 1 + 1e-12 and -1e-12 <= u <= 1 + 1e-12:
        return np.asarray(p1) + t * d1
    return None


def band_means(xy, z, p, q, band):
    """Mean heights left/right of edge p->q within ``band``, by a plain loop."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    d = q - p
    L = np.hypot(*d)
    u = d / L
    nrm = np.array([-u[1], u[0]])
    left, right = [], []
    for (x, y), h in zip(xy, z):
        r = np.array([x, y]) - p
        s = r @ u
        off = r @ nrm
        if 0 <= s <= L:
            if 0 < off <= band:
                left.append(h)
            elif -band <= off < 0:
                right.append(h)
    return (np.mean(left) if left else None), (np.mean(right) if right else None)


# -- arrangements --------------------------------------------------------------


def clip_line_to_box(p, q, bbox):
    """Chord of the full line through p, q inside the box."""
    minx, miny, maxx, maxy = bbox
    p = np.asarray(p, float)
    d = np.subtract(q, p)
    d = d / np.hypot(*d)
    big = 10 * max(maxx - minx, maxy - miny)
    line = LineString([p - big * d, p + big * d])
    return line.intersection(box(*bbox))


def arrangement_faces(lines, bbox):
    """Bounded faces of the union of ``lines`` and the box outline (shapely noding)."""
    geoms = list(lines) + [box(*bbox).exterior]
    noded = shapely.union_all(geoms)
    faces = list(shapely.polygonize(shapely.get_parts(noded)).geoms)
    return faces, noded


def full_arrangement(segments, bbox):
    """(cell count, total edge length) of the clipped line arrangement."""
    chords = [clip_line_to_box(p, q, bbox) for p, q in segments]
    faces, noded = arrangement_faces(chords, bbox)
    return len(faces), float(noded.length)


def stepped_kinetic_k0(segments, bbox, dt=1e-4):
    """Time-stepped K=0 simulation: every tip advances dt per step and stops at the
    first segment (original or grown) it touches, or at the box."""
    P = np.array([s[0] for s in segments], float)
    Q = np.array([s[1] for s in segments], float)
    D = (Q - P) / np.hypot(*(Q - P).T)[:, None]
    n = len(P)
    # tips: (segment, side) with origin and direction
    origin = np.concatenate([P, Q])
    direc = np.concatenate([-D, D])
    owner = np.concatenate([np.arange(n), np.arange(n)])
    ext = np.zeros(2 * n)
    active = np.ones(2 * n, dtype=bool)
    minx, miny, maxx, maxy = bbox

    def exit_t(o, u):
        t = math.inf
        for k, (lo, hi) in enumerate(((minx, maxx), (miny, maxy))):
            if u[k] > 0:
                t = min(t, (hi - o[k]) / u[k])
            elif u[k] < 0:
                t = min(t, (lo - o[k]) / u[k])
        return t

    t_exit = np.array([exit_t(origin[i], direc[i]) for i in range(2 * n)])
    t = 0.0
    while active.any():
        t += dt
        # extents of every segment at the previous step
        A = P - ext[:n, None] * D
        B = Q + ext[n:, None] * D
        f = B - A
        mv = np.nonzero(active)[0]
        new_ext = np.minimum(t, t_exit[mv])
        a = origin[mv] + ext[mv, None] * direc[mv]
        e = (new_ext - ext[mv])[:, None] * direc[mv]
        den = e[:, None, 0] * f[None, :, 1] - e[:, None, 1] * f[None, :, 0]
        w = A[None, :, :] - a[:, None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (w[..., 0] * f[None, :, 1] - w[..., 1] * f[None, :, 0]) / den
            r = (w[..., 0] * e[:, None, 1] - w[..., 1] * e[:, None, 0]) / den
        hit = (np.abs(den) > 1e-15) & (s > 1e-12) & (s <= 1) & (r >= 0) & (r <= 1)
        hit[np.arange(len(mv)), owner[mv]] = False
        s_hit = np.where(hit, s, np.inf).min(axis=1)
        stopped = np.isfinite(s_hit)
        ext[mv] = np.where(stopped, ext[mv] + np.where(stopped, s_hit, 0) * (new_ext - ext[mv]), new_ext)
        active[mv[stopped | (new_ext >= t_exit[mv])]] = False
    A = P - ext[:n, None] * D
    B = Q + ext[n:, None] * D
    return [(A[i], B[i]) for i in range(n)]


def stepped_k0_faces(segments, bbox, dt=1e-4, overshoot=1e-9):
    """(cell count, total edge length) after the stepped simulation.

    Stopped tips are pushed ``overshoot`` past their contact so the noding sees
    the T-junction; the dangling stubs bound no face.
    """
    grown = stepped_kinetic_k0(segments, bbox, dt)
    lines = []
    for a, b in grown:
        d = (b - a) / np.hypot(*(b - a))
        lines.append(LineString([a - overshoot * d, b + overshoot * d]).intersection(box(*bbox)))
    faces, noded = arrangement_faces(lines, bbox)
    return len(faces), float(noded.length)


# -- labeling ------------------------------------------------------------------


def enumerate_labelings(problem, chunk=200_000):
    """Exact minimum of a LabelProblem's energy over all labelings."""
    N, M = problem.n_cells, problem.n_labels
    best_E, best_X = math.inf, None
    combos = itertools.product(range(M), repeat=N)
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=np.int64)
        if not len(block):
            break
        E = problem.data[np.arange(N)[None, :], block].sum(axis=1)
        for i, j, C in problem.edges:
            diff = block[:, i] != block[:, j]
            E = E + np.where(diff, C[block[:, i], block[:, j]] + problem.w_c, 0.0)
        k = int(np.argmin(E))
        if E[k] < best_E:
            best_E, best_X = float(E[k]), block[k]
    return best_E, best_X


def count_label_edges(partition, labels):
    """Partition edges whose two bounded sides carry different labels."""
    n = 0
    for (a, b), (l, r) in partition.edges().items():
        if l >= 0 and r >= 0 and labels[l] != labels[r]:
            n += 1
    return n


@dataclass(eq=False)
class FakePrimitive:
    """Stand-in for a detected primitive: an id, a plane and a plan-view contour."""

    id: int
    plane: object
    shape: Polygon

    def plan_shape(self):
        return self.shape
