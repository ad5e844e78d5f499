"""Synthetic buildings with known ground truth.

Each archetype is written out facet by facet from closed-form geometry, so
the ground-truth meshes do not depend on any reconstruction code. Point
clouds sample the upward-facing facets (near-nadir acquisition) and add a
ring of ground returns around the footprint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from shapely import contains_xy

from .geom import BUILDING_CLASS, GROUND_CLASS, Plane3, PointCloud, Polygon2, ring_signed_area
from .mesh import BuildingMesh, Facet
from .triangulate import triangulate_polygon

ARCHETYPES = (
    "flat",
    "gable",
    "hip",
    "pyramid",
    "step",
    "L-gable",
    "cross-gable",
    "flat-with-superstructure",
)

#: (vertices, polygon facets) of each archetype's ground-truth mesh
EXPECTED_COUNTS = {
    "flat": (8, 6),
    "gable": (10, 7),
    "hip": (10, 9),
    "pyramid": (9, 9),
    "step": (12, 8),
    "L-gable": (15, 11),
    "cross-gable": (30, 19),
    "flat-with-superstructure": (16, 11),
}

GROUND_RING = (0.3, 3.0)  # inner / outer distance of ground returns from the footprint


@dataclass(frozen=True)
class FixtureSpec:
    archetype: str = "gable"
    length: float = 12.0  # along x before rotation
    width: float = 8.0  # along y before rotation
    eave_height: float = 6.0
    pitch: float = 30.0  # degrees
    density: float = 20.0  # points per square meter of plan area
    noise: float = 0.0  # isotropic Gaussian sigma, meters
    rotation: float = 0.0  # degrees, counter-clockwise about the origin
    seed: int = 0
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.archetype not in ARCHETYPES:
            raise ValueError(f"unknown archetype {self.archetype!r}")
        if self.density <= 0 or self.noise < 0:
            raise ValueError("density must be positive and noise non-negative")
        if self.length <= 0 or self.width <= 0 or self.eave_height <= 0:
            raise ValueError("building dimensions must be positive")


class _Builder:
    """Collects facets given as explicit 3D loops and welds their vertices."""

    def __init__(self):
        self.index = {}
        self.vertices = []
        self.facets = []

    def vid(self, p):
        key = tuple(round(float(c), 9) for c in p)
        if key not in self.index:
            self.index[key] = len(self.vertices)
            self.vertices.append([float(c) for c in p])
        return self.index[key]

    def roof(self, ring_xy, height, holes=()):
        ring_xy = [tuple(p) for p in ring_xy]
        if ring_signed_area(ring_xy) < 0:
            ring_xy = ring_xy[::-1]
        loops = [[self.vid((x, y, height(x, y))) for x, y in ring_xy]]
        for h in holes:
            h = [tuple(p) for p in h]
            if ring_signed_area(h) > 0:
                h = h[::-1]
            loops.append([self.vid((x, y, height(x, y))) for x, y in h])
        p0 = np.array(ring_xy[0], dtype=float)
        z0 = height(*p0)
        a = height(p0[0] + 1.0, p0[1]) - z0
        b = height(p0[0], p0[1] + 1.0) - z0
        self.facets.append(Facet(loops, "roof", Plane3.from_height(a, b, z0 - a * p0[0] - b * p0[1])))

    def wall(self, p, q, tops, bottom=0.0):
        """Vertical facet on edge p->q (outward to the right) with roof profile ``tops``.

        ``tops`` lists (x, y, z) points from p to q along the top boundary.
        """
        p = np.asarray(p, float)
        q = np.asarray(q, float)
        loop = [self.vid((p[0], p[1], bottom)), self.vid((q[0], q[1], bottom))]
        loop += [self.vid(t) for t in reversed(tops)]
        d = q - p
        n = np.array([d[1], -d[0], 0.0])
        n /= np.linalg.norm(n)
        self.facets.append(Facet([loop], "wall", Plane3(tuple(n), -float(n[:2] @ p))))

    def ground(self, ring_xy, z=0.0):
        ring_xy = [tuple(p) for p in ring_xy]
        if ring_signed_area(ring_xy) < 0:
            ring_xy = ring_xy[::-1]
        loop = [self.vid((x, y, z)) for x, y in reversed(ring_xy)]
        self.facets.append(Facet([loop], "ground", Plane3((0.0, 0.0, -1.0), z)))

    def mesh(self):
        return BuildingMesh(np.array(self.vertices), self.facets)


def _flat_walls(b, ring, h):
    n = len(ring)
    for i in range(n):
        p, q = ring[i], ring[(i + 1) % n]
        b.wall(p, q, [(p[0], p[1], h), (q[0], q[1], h)])


def _build(spec: FixtureSpec):
    L, W, h = spec.length, spec.width, spec.eave_height
    t = math.tan(math.radians(spec.pitch))
    x0, x1, y0, y1 = -L / 2, L / 2, -W / 2, W / 2
    b = _Builder()
    kind = spec.archetype

    if kind == "flat":
        ring = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
        b.roof(ring, lambda x, y: h)
        _flat_walls(b, ring, h)
        b.ground(ring)

    elif kind == "gable":
        R = h + t * W / 2
        ring = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
        b.roof([(x0, y0), (x1, y0), (x1, 0.0), (x0, 0.0)], lambda x, y: h + t * (y - y0))
        b.roof([(x0, 0.0), (x1, 0.0), (x1, y1), (x0, y1)], lambda x, y: h + t * (y1 - y))
        b.wall((x0, y0), (x1, y0), [(x0, y0, h), (x1, y0, h)])
        b.wall((x1, y0), (x1, y1), [(x1, y0, h), (x1, 0.0, R), (x1, y1, h)])
        b.wall((x1, y1), (x0, y1), [(x1, y1, h), (x0, y1, h)])
        b.wall((x0, y1), (x0, y0), [(x0, y1, h), (x0, 0.0, R), (x0, y0, h)])
        b.ground(ring)

    elif kind == "hip":
        if L < W:
            raise ValueError("hip archetype needs length >= width")
        ring = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
        ra, rb = x0 + W / 2, x1 - W / 2
        b.roof([(x0, y0), (x1, y0), (rb, 0.0), (ra, 0.0)], lambda x, y: h + t * (y - y0))
        b.roof([(x1, y1), (x0, y1), (ra, 0.0), (rb, 0.0)], lambda x, y: h + t * (y1 - y))
        b.roof([(x1, y0), (x1, y1), (rb, 0.0)], lambda x, y: h + t * (x1 - x))
        b.roof([(x0, y1), (x0, y0), (ra, 0.0)], lambda x, y: h + t * (x - x0))
        _flat_walls(b, ring, h)
        b.ground(ring)

    elif kind == "pyramid":
        s = min(L, W) / 2
        ring = [(-s, -s), (s, -s), (s, s), (-s, s)]
        b.roof([(-s, -s), (s, -s), (0.0, 0.0)], lambda x, y: h + t * (y + s))
        b.roof([(s, -s), (s, s), (0.0, 0.0)], lambda x, y: h + t * (s - x))
        b.roof([(s, s), (-s, s), (0.0, 0.0)], lambda x, y: h + t * (s - y))
        b.roof([(-s, s), (-s, -s), (0.0, 0.0)], lambda x, y: h + t * (x + s))
        _flat_walls(b, ring, h)
        b.ground(ring)

    elif kind == "step":
        H = h + 3.0
        xm = x0 + 0.55 * L
        ring = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
        b.roof([(x0, y0), (xm, y0), (xm, y1), (x0, y1)], lambda x, y: H)
        b.roof([(xm, y0), (x1, y0), (x1, y1), (xm, y1)], lambda x, y: h)
        b.wall((x0, y0), (x1, y0), [(x0, y0, H), (xm, y0, H), (xm, y0, h), (x1, y0, h)])
        b.wall((x1, y0), (x1, y1), [(x1, y0, h), (x1, y1, h)])
        b.wall((x1, y1), (x0, y1), [(x1, y1, h), (xm, y1, h), (xm, y1, H), (x0, y1, H)])
        b.wall((x0, y1), (x0, y0), [(x0, y1, H), (x0, y0, H)])
        b.wall((xm, y0), (xm, y1), [(xm, y0, H), (xm, y1, H)], bottom=h)
        b.ground(ring)

    elif kind == "L-gable":
        # main wing along x, second wing along y at the east end; equal widths
        B = W
        ya = y0 - B / 2
        y0, y1 = ya, ya + W
        ye = y1 + B
        yr = y0 + W / 2
        xa, xr = x1 - W, x1 - W / 2
        R = h + t * W / 2
        ring = [(x0, y0), (x1, y0), (x1, ye), (xa, ye), (xa, y1), (x0, y1)]
        b.roof([(x0, y0), (x1, y0), (xr, yr), (x0, yr)], lambda x, y: h + t * (y - y0))
        b.roof([(x0, yr), (xr, yr), (xa, y1), (x0, y1)], lambda x, y: h + t * (y1 - y))
        b.roof([(x1, y0), (x1, ye), (xr, ye), (xr, yr)], lambda x, y: h + t * (x1 - x))
        b.roof([(xa, y1), (xr, yr), (xr, ye), (xa, ye)], lambda x, y: h + t * (x - xa))
        b.wall((x0, y0), (x1, y0), [(x0, y0, h), (x1, y0, h)])
        b.wall((x1, y0), (x1, ye), [(x1, y0, h), (x1, ye, h)])
        b.wall((x1, ye), (xa, ye), [(x1, ye, h), (xr, ye, R), (xa, ye, h)])
        b.wall((xa, ye), (xa, y1), [(xa, ye, h), (xa, y1, h)])
        b.wall((xa, y1), (x0, y1), [(xa, y1, h), (x0, y1, h)])
        b.wall((x0, y1), (x0, y0), [(x0, y1, h), (x0, yr, R), (x0, y0, h)])
        b.ground(ring)

    elif kind == "cross-gable":
        # main gable along x crossed by a narrower, lower gable along y
        W2 = 0.6 * W
        B = 0.5 * W
        R = h + t * W / 2
        R2 = h + t * W2 / 2
        xc = 0.0
        xa, xb = xc - W2 / 2, xc + W2 / 2
        ys, yn = y0 + W2 / 2, y1 - W2 / 2
        main_s = lambda x, y: h + t * (y - y0)  # noqa: E731
        main_n = lambda x, y: h + t * (y1 - y)  # noqa: E731
        wing_w = lambda x, y: h + t * (x - xa)  # noqa: E731
        wing_e = lambda x, y: h + t * (xb - x)  # noqa: E731
        ring = [
            (x0, y0), (xa, y0), (xa, y0 - B), (xb, y0 - B), (xb, y0), (x1, y0),
            (x1, y1), (xb, y1), (xb, y1 + B), (xa, y1 + B), (xa, y1), (x0, y1),
        ]
        b.roof([(x0, y0), (xa, y0), (xc, ys), (xb, y0), (x1, y0), (x1, 0.0), (x0, 0.0)], main_s)
        b.roof([(x0, 0.0), (x1, 0.0), (x1, y1), (xb, y1), (xc, yn), (xa, y1), (x0, y1)], main_n)
        b.roof([(xa, y0 - B), (xc, y0 - B), (xc, ys), (xa, y0)], wing_w)
        b.roof([(xc, y0 - B), (xb, y0 - B), (xb, y0), (xc, ys)], wing_e)
        b.roof([(xa, y1), (xc, yn), (xc, y1 + B), (xa, y1 + B)], wing_w)
        b.roof([(xc, yn), (xb, y1), (xb, y1 + B), (xc, y1 + B)], wing_e)
        flat_edges = {0, 1, 3, 4, 6, 7, 9, 10}
        tops = {
            2: [(xa, y0 - B, h), (xc, y0 - B, R2), (xb, y0 - B, h)],
            5: [(x1, y0, h), (x1, 0.0, R), (x1, y1, h)],
            8: [(xb, y1 + B, h), (xc, y1 + B, R2), (xa, y1 + B, h)],
            11: [(x0, y1, h), (x0, 0.0, R), (x0, y0, h)],
        }
        for i in range(12):
            p, q = ring[i], ring[(i + 1) % 12]
            if i in flat_edges:
                b.wall(p, q, [(p[0], p[1], h), (q[0], q[1], h)])
            else:
                b.wall(p, q, tops[i])
        b.ground(ring)

    elif kind == "flat-with-superstructure":
        H = h + 2.5
        s = 0.35 * min(L, W)
        cx, cy = 0.15 * L, 0.0
        ring = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
        sup = [(cx - s / 2, cy - s / 2), (cx + s / 2, cy - s / 2), (cx + s / 2, cy + s / 2), (cx - s / 2, cy + s / 2)]
        b.roof(ring, lambda x, y: h, holes=[sup])
        b.roof(sup, lambda x, y: H)
        _flat_walls(b, ring, h)
        for i in range(4):
            p, q = sup[i], sup[(i + 1) % 4]
            b.wall(p, q, [(p[0], p[1], H), (q[0], q[1], H)], bottom=h)
        b.ground(ring)
    else:  # pragma: no cover - guarded by FixtureSpec
        raise ValueError(kind)

    return b.mesh(), ring


def _transform(spec, mesh: BuildingMesh, ring):
    th = math.radians(spec.rotation)
    c, s = math.cos(th), math.sin(th)
    rot = np.array([[c, -s], [s, c]])
    o = np.asarray(spec.origin, dtype=float)
    V = mesh.vertices.copy()
    V[:, :2] = V[:, :2] @ rot.T
    V += o
    facets = []
    for f in mesh.facets:
        n = f.plane.n
        n2 = np.concatenate([rot @ n[:2], n[2:]])
        # plane through a rotated facet vertex
        p = V[f.loops[0][0]]
        facets.append(Facet(f.loops, f.role, Plane3(tuple(n2), -float(n2 @ p))))
    ring = np.asarray(ring, dtype=float) @ rot.T + o[:2]
    return BuildingMesh(V, facets), Polygon2(ring)


def _sample_roofs(mesh: BuildingMesh, density, rng):
    tris = []
    for f in mesh.facets:
        if f.plane.normal[2] <= 0.2:
            continue
        xy = {i: mesh.vertices[i][:2] for loop in f.loops for i in loop}
        for tri in triangulate_polygon(xy, f.loops):
            tris.append(mesh.vertices[list(tri)])
    tris = np.array(tris)
    plan = 0.5 * np.abs(
        (tris[:, 1, 0] - tris[:, 0, 0]) * (tris[:, 2, 1] - tris[:, 0, 1])
        - (tris[:, 2, 0] - tris[:, 0, 0]) * (tris[:, 1, 1] - tris[:, 0, 1])
    )
    n = rng.poisson(density * plan.sum())
    which = rng.choice(len(tris), size=n, p=plan / plan.sum())
    r1 = rng.random(n)
    r2 = rng.random(n)
    flip = r1 + r2 > 1
    r1[flip], r2[flip] = 1 - r1[flip], 1 - r2[flip]
    T = tris[which]
    return T[:, 0] + r1[:, None] * (T[:, 1] - T[:, 0]) + r2[:, None] * (T[:, 2] - T[:, 0])


def _sample_ground(footprint: Polygon2, density, z, rng):
    poly = footprint.to_shapely()
    inner = poly.buffer(GROUND_RING[0], join_style="mitre")
    outer = poly.buffer(GROUND_RING[1], join_style="mitre")
    ring = outer.difference(inner)
    minx, miny, maxx, maxy = outer.bounds
    box_area = (maxx - minx) * (maxy - miny)
    n = rng.poisson(density * box_area)
    xy = np.stack([rng.uniform(minx, maxx, n), rng.uniform(miny, maxy, n)], axis=1)
    xy = xy[contains_xy(ring, xy[:, 0], xy[:, 1])]
    return np.column_stack([xy, np.full(len(xy), z)])


def generate(spec: FixtureSpec):
    """Return ``(PointCloud, footprint Polygon2, ground-truth BuildingMesh)``."""
    mesh, ring = _build(spec)
    mesh, footprint = _transform(spec, mesh, ring)
    rng = np.random.default_rng(spec.seed)
    roof = _sample_roofs(mesh, spec.density, rng)
    ground = _sample_ground(footprint, spec.density, float(spec.origin[2]), rng)
    xyz = np.concatenate([roof, ground])
    if spec.noise > 0:
        xyz = xyz + rng.normal(0.0, spec.noise, size=xyz.shape)
    classes = np.concatenate(
        [np.full(len(roof), BUILDING_CLASS), np.full(len(ground), GROUND_CLASS)]
    )
    return PointCloud(xyz, classes), footprint, mesh


def random_spec(rng, archetype=None, noise=None) -> FixtureSpec:
    """A randomized but well-formed spec, used for batch robustness runs."""
    arch = archetype or ARCHETYPES[int(rng.integers(len(ARCHETYPES)))]
    width = float(rng.uniform(6.0, 10.0))
    length = float(rng.uniform(width * 1.1, width * 1.8))
    return FixtureSpec(
        archetype=arch,
        length=length,
        width=width,
        eave_height=float(rng.uniform(4.0, 9.0)),
        pitch=float(rng.uniform(20.0, 40.0)),
        density=float(rng.uniform(8.0, 20.0)),
        noise=float(rng.uniform(0.0, 0.04)) if noise is None else noise,
        rotation=float(rng.uniform(0.0, 90.0)),
        seed=int(rng.integers(2**31)),
    )


def with_changes(spec: FixtureSpec, **kw) -> FixtureSpec:
    return replace(spec, **kw)


__all__ = [
    "ARCHETYPES",
    "EXPECTED_COUNTS",
    "FixtureSpec",
    "generate",
    "random_spec",
    "with_changes",
]
