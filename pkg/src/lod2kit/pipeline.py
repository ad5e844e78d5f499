"""Per-building reconstruction driver and batch runner."""

from __future__ import annotations

import logging
import signal
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace

import numpy as np
from shapely import contains_xy

from .config import PipelineConfig
from .errors import DegenerateInput, Lod2Error, NoPlanesFound, RegularizationRollback, Timeout
from .extrude import assemble_mesh, extrude_cells, merge_vertical, optimize_heights
from .geom import BUILDING_CLASS, PointCloud, Polygon2
from .kinetic import build_partition, kinetic_bbox
from .labeling import (
    EnergyWeights,
    assign_labels,
    build_problem,
    default_complexity_weight,
    ground_elevation,
    label_ids,
    merge_cells,
    plane_table,
)
from .lines import build_soup
from .mesh import BuildingMesh
from .metrics import AccuracyReport, ComplexityReport, accuracy, building_report, complexity
from .partition import remove_collinear_vertices
from .planes import detect_planes
from .regularize import (
    build_regularity_graph,
    collapse_short_edges,
    merge_straight_chains,
    optimize_vertices,
)

log = logging.getLogger(__name__)

# timing key -> module reported in a failed/degraded status
STAGES = {
    "detect": "plane_detect",
    "soup": "line_extract",
    "partition": "kinetic2d",
    "labels": "labeling",
    "merge": "labeling",
    "graph": "regularize2d",
    "collapse": "regularize2d",
    "optimize": "regularize2d",
    "extrude": "extrude3d",
    "merge_vertical": "extrude3d",
    "heights": "extrude3d",
    "assemble": "extrude3d",
    "metrics": "metrics",
}


@dataclass(frozen=True)
class Status:
    kind: str  # ok | degraded | failed
    stage: str | None = None
    reason: str | None = None

    def __str__(self):
        return self.kind if self.kind == "ok" else f"{self.kind}({self.stage}, {self.reason})"


OK = Status("ok")


@dataclass(eq=False)
class BuildingJob:
    cloud: PointCloud
    footprint: Polygon2
    config: PipelineConfig = field(default_factory=PipelineConfig)
    id: str = "building"
    reference: BuildingMesh | None = None  # ground truth, for CD_Rec->Ref


@dataclass(eq=False)
class PipelineResult:
    id: str
    status: Status
    mesh: BuildingMesh | None = None  # input coordinates
    complexity: ComplexityReport | None = None
    accuracy: AccuracyReport | None = None
    timings: dict = field(default_factory=dict)
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    local_mesh: BuildingMesh | None = None  # mesh in the centred working frame
    debug: dict = field(default_factory=dict)

    @property
    def reports(self):
        return self.complexity, self.accuracy

    def report(self) -> dict:
        row = building_report(self.id, self.complexity, self.accuracy, str(self.status))
        row["timings"] = {k: round(v, 6) for k, v in self.timings.items()}
        return row


@contextmanager
def _watchdog(seconds):
    """Raise ``Timeout`` in the current (main) thread after ``seconds``."""
    usable = seconds and seconds > 0 and hasattr(signal, "setitimer") and threading.current_thread() is threading.main_thread()
    if not usable:
        yield
        return

    def fire(signum, frame):
        raise Timeout(f"building exceeded {seconds:g} s")

    old = signal.signal(signal.SIGALRM, fire)
    signal.setitimer(signal.ITIMER_REAL, seconds)
    try:
        yield
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0)
        signal.signal(signal.SIGALRM, old)


def associate(cloud: PointCloud, footprint: Polygon2, dilation: float = 1.0) -> PointCloud:
    """Points whose plan projection lies inside the footprint dilated by ``dilation``."""
    shape = footprint.to_shapely().buffer(dilation)
    minx, miny, maxx, maxy = shape.bounds
    xy = cloud.xyz[:, :2]
    box = (xy[:, 0] >= minx) & (xy[:, 0] <= maxx) & (xy[:, 1] >= miny) & (xy[:, 1] <= maxy)
    idx = np.nonzero(box)[0]
    keep = idx[contains_xy(shape, xy[idx, 0], xy[idx, 1])]
    return cloud.subset(keep)


def roof_points(cloud: PointCloud, footprint: Polygon2, z0: float, min_height: float) -> PointCloud:
    """Building-class points, or for unclassified clouds the points well above the ground."""
    if cloud.classes is not None:
        return cloud.subset(cloud.classes == BUILDING_CLASS)
    inside = contains_xy(footprint.to_shapely().buffer(1e-9), cloud.xyz[:, 0], cloud.xyz[:, 1])
    return cloud.subset(inside & (cloud.xyz[:, 2] > z0 + min_height))


def run_pipeline(job: BuildingJob, keep_debug: bool = False) -> PipelineResult:
    """Reconstruct one building. Never raises for pipeline errors; see ``result.status``."""
    cfg = job.config
    res = PipelineResult(job.id, OK)
    stage = "detect"
    t_last = time.perf_counter()

    def tick(name):
        nonlocal t_last
        now = time.perf_counter()
        res.timings[name] = res.timings.get(name, 0.0) + (now - t_last)
        t_last = now

    degraded = []
    try:
        with _watchdog(cfg.run.timeout):
            stage = "detect"
            if not job.footprint.is_valid():
                raise DegenerateInput("footprint is not a valid polygon")
            c2 = job.footprint.centroid()
            z_ref = float(np.median(job.cloud.xyz[:, 2])) if len(job.cloud) else 0.0
            offset = np.array([c2[0], c2[1], 0.0])
            res.offset = offset
            fp = job.footprint.translated(-offset)
            cloud = associate(job.cloud.translated(-offset), fp, cfg.run.dilation)
            z0 = cfg.extrude.ground_z if cfg.extrude.ground_z is not None else (
                ground_elevation(cloud, fp) if len(cloud) else z_ref
            )
            building = roof_points(cloud, fp, z0, cfg.run.min_height)
            prims = detect_planes(building, cfg.detect)
            tick("detect")

            stage = "soup"
            soup = build_soup(prims, fp, building, cfg.lines)
            tick("soup")

            stage = "partition"
            part = build_partition(soup, kinetic_bbox(fp, cfg.kinetic.bbox_margin), cfg.kinetic, footprint=fp)
            tick("partition")

            stage = "labels"
            weights = cfg.energy
            if weights.w_c is None:
                weights = replace(weights, w_c=default_complexity_weight(prims))
            prob = build_problem(part, prims, fp, z0, weights)
            state = assign_labels(prob)
            tick("labels")

            stage = "merge"
            merged = merge_cells(part, label_ids(prob, state.X), plane_table(prims))
            if not merged.cells:
                exc = NoPlanesFound("every cell was labelled ground")
                exc.stage = "labeling"
                raise exc
            tick("merge")
            if keep_debug:
                res.debug.update(partition=part, merged=merged)

            layout = merged
            if cfg.run.regularize:
                stage = "graph"
                graph = build_regularity_graph(merged, cfg.regularize)
                tick("graph")
                stage = "collapse"
                collapsed, vmap = collapse_short_edges(merged, cfg.regularize.tau_h, return_map=True)
                graph = graph.remap(vmap)
                collapsed, graph = merge_straight_chains(collapsed, graph)
                tick("collapse")
                stage = "optimize"
                try:
                    opt = optimize_vertices(collapsed, graph)
                except RegularizationRollback as exc:
                    degraded.append(Status("degraded", "regularize2d", str(exc)))
                    opt = exc.partition
                layout, vmap = remove_collinear_vertices(opt, return_map=True)
                graph = graph.remap(vmap)
                tick("optimize")
                if keep_debug:
                    res.debug.update(graph=graph, regularized=layout)

            stage = "extrude"
            rg = extrude_cells(layout)
            tick("extrude")
            stage = "merge_vertical"
            rg = merge_vertical(rg, cfg.extrude.tau_v if cfg.run.regularize else 0.0)
            tick("merge_vertical")
            stage = "heights"
            rg = optimize_heights(rg)
            if rg.rank_deficient:
                degraded.append(Status("degraded", "extrude3d", f"rank-deficient cells {sorted(rg.rank_deficient)}"))
            tick("heights")
            stage = "assemble"
            local = assemble_mesh(rg, layout, fp, z0, cfg.run.check_intersections)
            tick("assemble")

            stage = "metrics"
            res.local_mesh = local
            res.mesh = local.translated(offset)
            if cfg.metrics.enabled:
                res.complexity = complexity(local, cfg.metrics.edge_threshold)
                ref = job.reference.translated(-offset) if job.reference is not None else None
                res.accuracy = accuracy(local, building.xyz, ref, cfg.metrics.samples, cfg.metrics.seed,
                                        cfg.metrics.ref_to_rec)
            tick("metrics")
    except Lod2Error as exc:
        res.status = Status("failed", _stage_of(exc, stage), f"{type(exc).__name__}: {exc}")
    except Exception as exc:  # never let one building take down a batch
        log.exception("building %s: unexpected error in stage %s", job.id, stage)
        res.status = Status("failed", STAGES.get(stage, stage), f"{type(exc).__name__}: {exc}")
    if res.status.kind == "failed":
        tick(stage)
        res.mesh = res.local_mesh = None
        res.complexity = res.accuracy = None
    elif degraded:
        res.status = degraded[0]
    log.info("building %s: %s (%.2f s)", job.id, res.status, sum(res.timings.values()))
    return res


def _stage_of(exc, stage):
    if isinstance(exc, Timeout):
        return STAGES.get(stage, stage)
    if exc.stage not in ("unknown", "geom_core"):
        return exc.stage
    return STAGES.get(stage, stage)


def make_jobs(cloud: PointCloud, footprints, config: PipelineConfig = PipelineConfig()):
    """One job per ``(id, Polygon2)``, each holding only its associated points."""
    jobs = []
    for fid, fp in footprints:
        jobs.append(BuildingJob(associate(cloud, fp, config.run.dilation), fp, config, str(fid)))
    return jobs


def _run_one(args):
    job, keep_debug = args
    return run_pipeline(job, keep_debug)


def run_batch(jobs, workers: int = 1, keep_debug: bool = False, on_result=None):
    """Run independent jobs, optionally on a process pool; results keep the job order."""
    results = []
    if workers <= 1 or len(jobs) <= 1:
        for job in jobs:
            r = run_pipeline(job, keep_debug)
            if on_result:
                on_result(r)
            results.append(r)
        return results
    import multiprocessing as mp

    with mp.get_context("fork" if hasattr(signal, "SIGALRM") else "spawn").Pool(workers) as pool:
        for r in pool.imap(_run_one, [(j, keep_debug) for j in jobs], chunksize=1):
            if on_result:
                on_result(r)
            results.append(r)
    return results


def fixture_job(spec, config: PipelineConfig = PipelineConfig(), id=None) -> BuildingJob:
    """Job (with reference mesh) for a synthetic fixture."""
    from .fixtures import generate

    cloud, fp, ref = generate(spec)
    return BuildingJob(cloud, fp, config, id or spec.archetype, ref)
