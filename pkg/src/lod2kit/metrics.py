"""Evaluation metrics: mesh complexity and one-sided Chamfer distances."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ZeroArea
from .geom import EPS_GEOM
from .mesh import BuildingMesh

DEFAULT_SAMPLES = 100_000


@dataclass
class ComplexityReport:
    V: int
    F: int
    F_triangles: int
    E_short_ratio: float
    edge_threshold: float = 0.5


@dataclass
class AccuracyReport:
    cd_inp_to_rec: float | None
    cd_rec_to_ref: float | None
    sample_count: int = DEFAULT_SAMPLES
    cd_ref_to_rec: float | None = None


def _triangle_array(mesh: BuildingMesh):
    tris = np.array([t for _, t in mesh.triangles()], dtype=np.int64).reshape(-1, 3)
    return mesh.vertices[tris]


def sample_surface(mesh: BuildingMesh, n: int = DEFAULT_SAMPLES, seed: int = 0) -> np.ndarray:
    """``n`` points drawn uniformly by area over the mesh's triangles."""
    T = _triangle_array(mesh)
    area = 0.5 * np.linalg.norm(np.cross(T[:, 1] - T[:, 0], T[:, 2] - T[:, 0]), axis=1)
    total = float(area.sum())
    if not total > 0:
        raise ZeroArea("mesh has no surface area")
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(T), size=n, p=area / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    A, B, C = T[pick, 0], T[pick, 1], T[pick, 2]
    return (1 - r1)[:, None] * A + (r1 * (1 - r2))[:, None] * B + (r1 * r2)[:, None] * C


def chamfer_one_sided(src, dst, workers: int = 1) -> float:
    """Mean distance from each point of ``src`` to its exact nearest neighbour in ``dst``."""
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if not len(src) or not len(dst):
        raise ValueError("both point sets must be non-empty")
    d, _ = cKDTree(dst).query(src, k=1, workers=workers)
    return float(np.mean(d))


def _weld(points, eps):
    """Cluster index per point; points closer than ``eps`` (transitively) share one."""
    n = len(points)
    parent = np.arange(n)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in cKDTree(points).query_pairs(eps):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(n)])
    _, ids = np.unique(roots, return_inverse=True)
    return ids


def complexity(mesh: BuildingMesh, edge_threshold: float = 0.5, eps: float = EPS_GEOM) -> ComplexityReport:
    """Distinct vertices, polygon and triangle facet counts, and the short-edge ratio."""
    P = mesh.vertices
    ids = _weld(P, eps) if len(P) else np.zeros(0, dtype=np.int64)
    edges = {}
    for f in mesh.facets:
        for loop in f.loops:
            for k in range(len(loop)):
                a, b = ids[loop[k]], ids[loop[(k + 1) % len(loop)]]
                if a == b:
                    continue
                key = (min(a, b), max(a, b))
                edges[key] = float(np.linalg.norm(P[loop[k]] - P[loop[(k + 1) % len(loop)]]))
    short = sum(1 for L in edges.values() if L < edge_threshold)
    return ComplexityReport(
        V=int(ids.max()) + 1 if len(ids) else 0,
        F=len(mesh.facets),
        F_triangles=len(mesh.triangles()),
        E_short_ratio=short / len(edges) if edges else 0.0,
        edge_threshold=edge_threshold,
    )


def accuracy(mesh: BuildingMesh, input_points=None, reference: BuildingMesh | None = None,
             n: int = DEFAULT_SAMPLES, seed: int = 0, ref_to_rec: bool = False) -> AccuracyReport:
    """CD input->reconstruction and reconstruction->reference from ``n`` surface samples each."""
    rec = sample_surface(mesh, n, seed)
    cd_in = cd_ref = cd_back = None
    if input_points is not None and len(input_points):
        cd_in = chamfer_one_sided(input_points, rec)
    if reference is not None:
        ref = sample_surface(reference, n, seed + 1)
        cd_ref = chamfer_one_sided(rec, ref)
        if ref_to_rec:
            cd_back = chamfer_one_sided(ref, rec)
    return AccuracyReport(cd_in, cd_ref, n, cd_back)


def building_report(building_id, comp: ComplexityReport | None, acc: AccuracyReport | None, status: str = "ok") -> dict:
    row = {"building": str(building_id), "status": status}
    if comp is not None:
        row.update(asdict(comp))
    if acc is not None:
        row.update(asdict(acc))
    return row


def write_json(rows, path):
    with open(path, "w") as fh:
        json.dump({"buildings": rows}, fh, indent=2, sort_keys=True)


CSV_FIELDS = ["building", "status", "V", "F", "F_triangles", "E_short_ratio", "cd_inp_to_rec", "cd_rec_to_ref"]


def write_csv(rows, path):
    """One row per building plus a final ``mean`` row over numeric columns."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in CSV_FIELDS})
        mean = {"building": "mean", "status": ""}
        for k in CSV_FIELDS[2:]:
            vals = [r[k] for r in rows if isinstance(r.get(k), (int, float)) and r.get(k) is not None]
            mean[k] = float(np.mean(vals)) if vals else ""
        w.writerow(mean)
