"""Planar roof primitives: region growing on the point cloud plus alpha-shape contours."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy.spatial import Delaunay, cKDTree

from .errors import DegenerateInput, NoPlanesFound
from .geom import Plane3, PointCloud, Polygon2, fit_plane, plane_frame

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectionParams:
    epsilon: float = 0.1  # max inlier-to-plane distance
    min_inliers: int = 50
    normal_angle_tol: float = 30.0  # degrees
    knn: int = 16
    alpha: float | None = None  # squared circumradius bound; None -> 4 / density
    refit_every: int = 50
    vertical_floor: float = 0.1

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.min_inliers < 3 or self.knn < 3:
            raise ValueError("min_inliers and knn must be at least 3")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass(eq=False)
class PlanarPrimitive:
    id: int
    plane: Plane3
    inliers: np.ndarray  # sorted point indices into the detection cloud
    contour: Polygon2  # in-plane coordinates w.r.t. ``frame``
    frame: tuple  # (origin, u, v)
    mean_height_samples: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.inliers)

    def contour_3d(self):
        """Contour rings lifted back to 3D, outer ring first."""
        o, u, v = self.frame
        return [o + r[:, :1] * u + r[:, 1:2] * v for r in self.contour.rings]

    @property
    def plan_contour(self) -> Polygon2:
        """Plan-view projection of the contour (cached)."""
        pc = self.__dict__.get("_plan")
        if pc is None:
            rings = [r[:, :2] for r in self.contour_3d()]
            pc = Polygon2(rings[0], tuple(rings[1:]))
            self.__dict__["_plan"] = pc
        return pc

    def plan_shape(self):
        sh = self.__dict__.get("_plan_shape")
        if sh is None:
            sh = self.plan_contour.to_shapely()
            if not sh.is_valid:
                sh = shapely.make_valid(sh)
            self.__dict__["_plan_shape"] = sh
        return sh


def estimate_density(xy, k: int = 8) -> float:
    """Points per square meter from the median k-th neighbour distance in plan."""
    xy = np.asarray(xy, dtype=float)[:, :2]
    if len(xy) <= k:
        return 1.0
    d, _ = cKDTree(xy).query(xy, k=k + 1)
    r = float(np.median(d[:, -1]))
    if r <= 0:
        return 1.0
    return k / (np.pi * r * r)


def point_normals(points, knn: int):
    """Per-point PCA normals and planarity scores (smallest eigenvalue ratio)."""
    pts = np.asarray(points, dtype=float)
    k = min(knn, len(pts))
    tree = cKDTree(pts)
    _, nbr = tree.query(pts, k=k)
    nb = pts[nbr]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    w, vec = np.linalg.eigh(cov)
    normals = vec[:, :, 0]
    normals[normals[:, 2] < 0] *= -1
    score = w[:, 0] / np.maximum(w.sum(axis=1), 1e-300)
    return normals, score, nbr


def _grow(seed, pts, normals, nbr, free, params, cos_tol):
    region = [seed]
    in_region = {seed}
    plane_n = normals[seed]
    plane_d = -float(plane_n @ pts[seed])
    added = 0
    queue = deque([seed])
    while queue:
        cur = queue.popleft()
        for j in nbr[cur]:
            j = int(j)
            if j in in_region or not free[j]:
                continue
            if abs(float(pts[j] @ plane_n) + plane_d) > params.epsilon:
                continue
            if abs(float(normals[j] @ plane_n)) < cos_tol:
                continue
            region.append(j)
            in_region.add(j)
            queue.append(j)
            added += 1
            if added % params.refit_every == 0:
                try:
                    pl = fit_plane(pts[region])
                except DegenerateInput:
                    continue
                plane_n, plane_d = pl.n, pl.d
    return region


ROBUST_FLOOR = 1e-6  # meters; residual noise floor of exact samples


def _refine(region, pts, eps):
    """Refit and drop far inliers until the set is stable."""
    idx = np.array(sorted(region))
    while len(idx) >= 3:
        try:
            pl = fit_plane(pts[idx])
        except DegenerateInput:
            return None, idx
        r = np.abs(pl.signed_distance(pts[idx]))
        # points of a neighbouring plane near the shared edge pass the eps test but
        # bias the fit; drop residual outliers beyond 4 robust sigmas too
        tol = min(eps, max(ROBUST_FLOOR, 4.0 * 1.4826 * float(np.median(r))))
        keep = r <= tol
        if keep.all():
            return pl, idx
        idx = idx[keep]
    return None, idx


def detect_planes(cloud: PointCloud, params: DetectionParams = DetectionParams()):
    """Region-growing plane detection; returns primitives sorted by size, ids 1..M."""
    pts = cloud.xyz
    n = len(pts)
    if n < params.min_inliers or n < 3:
        raise NoPlanesFound(f"{n} points, fewer than min_inliers={params.min_inliers}")
    normals, score, nbr = point_normals(pts, params.knn)
    order = np.argsort(score, kind="stable")
    owner = np.full(n, -1, dtype=np.int64)
    cos_tol = np.cos(np.radians(params.normal_angle_tol))
    found = []  # (plane, indices)
    for seed in order:
        seed = int(seed)
        if owner[seed] >= 0:
            continue
        region = _grow(seed, pts, normals, nbr, owner < 0, params, cos_tol)
        if len(region) < params.min_inliers:
            continue
        plane, idx = _refine(region, pts, params.epsilon)
        if plane is None or len(idx) < params.min_inliers:
            continue
        owner[idx] = len(found)
        found.append([plane, idx])

    # absorb unassigned neighbours lying within epsilon of an adjacent fixed plane
    changed = True
    while changed and found:
        changed = False
        for r, (plane, idx) in enumerate(found):
            grown = list(idx)
            queue = deque(idx.tolist())
            seen = set()
            while queue:
                cur = queue.popleft()
                for j in nbr[cur]:
                    j = int(j)
                    if owner[j] >= 0 or j in seen:
                        continue
                    seen.add(j)
                    if abs(float(plane.signed_distance(pts[j])[0])) <= params.epsilon:
                        owner[j] = r
                        grown.append(j)
                        queue.append(j)
                        changed = True
            found[r][1] = np.array(sorted(grown))

    kept = [(pl, idx) for pl, idx in found if pl.non_vertical(params.vertical_floor)]
    if not kept:
        raise NoPlanesFound("no region reached min_inliers")
    kept.sort(key=lambda t: (-len(t[1]), int(t[1][0])))

    alpha = params.alpha if params.alpha is not None else 4.0 / estimate_density(pts)
    prims = []
    for pl, idx in kept:
        try:
            contour, frame = alpha_contour(pts[idx], pl, alpha, return_frame=True)
        except DegenerateInput:
            continue
        prims.append(PlanarPrimitive(len(prims) + 1, pl, idx, contour, frame))
    if not prims:
        raise NoPlanesFound("no primitive with a valid contour")
    log.debug("detected %d primitives (alpha=%.3f)", len(prims), alpha)
    return prims


def alpha_contour(points, plane: Plane3, alpha: float, return_frame: bool = False, min_hole_area=None):
    """Largest component of the 2D alpha shape of ``points`` projected into ``plane``.

    Delaunay triangles whose squared circumradius is at most ``alpha`` are kept.
    Holes larger than ``min_hole_area`` (default ``max(1, 4 alpha)``) are kept as
    interior rings; smaller ones are treated as sampling gaps.
    """
    pts = np.asarray(points, dtype=float)
    origin, u, v = plane_frame(plane)
    rel = pts - origin
    xy = np.stack([rel @ u, rel @ v], axis=1)
    if len(xy) < 3:
        raise DegenerateInput("alpha contour needs at least 3 points")
    c = xy - xy.mean(axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    if s[0] == 0 or s[1] <= 1e-9 * s[0]:
        raise DegenerateInput("projected points are collinear")
    try:
        tri = Delaunay(xy)
    except Exception as exc:  # qhull errors on degenerate input
        raise DegenerateInput(f"triangulation failed: {exc}") from exc
    P = xy[tri.simplices]
    a = np.linalg.norm(P[:, 1] - P[:, 2], axis=1)
    b = np.linalg.norm(P[:, 0] - P[:, 2], axis=1)
    cc = np.linalg.norm(P[:, 0] - P[:, 1], axis=1)
    area2 = np.abs((P[:, 1, 0] - P[:, 0, 0]) * (P[:, 2, 1] - P[:, 0, 1]) - (P[:, 2, 0] - P[:, 0, 0]) * (P[:, 1, 1] - P[:, 0, 1]))
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = (a * b * cc / (2.0 * area2)) ** 2
    keep = (area2 > 0) & (r2 <= alpha)
    if not keep.any():
        # alpha too small for this sampling: fall back to the convex hull
        keep = area2 > 0
    polys = shapely.polygons(P[keep])
    shape = shapely.union_all(polys)
    comps = [g for g in getattr(shape, "geoms", [shape]) if g.geom_type == "Polygon"]
    if not comps:
        raise DegenerateInput("empty alpha shape")
    best = max(comps, key=lambda g: g.area)
    if min_hole_area is None:
        min_hole_area = max(1.0, 4.0 * alpha)
    holes = [r for r in best.interiors if shapely.Polygon(r).area >= min_hole_area]
    best = shapely.Polygon(best.exterior, holes)
    contour = Polygon2.from_shapely(best)
    if return_frame:
        return contour, (origin, u, v)
    return contour
