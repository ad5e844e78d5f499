"""Command line: ``reconstruct`` buildings from points + footprints, ``fixtures generate`` test data."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from . import io
from .config import load_config
from .fixtures import ARCHETYPES, FixtureSpec, generate
from .metrics import write_csv
from .pipeline import make_jobs, run_batch

log = logging.getLogger("lod2kit")

# named flags -> config key
SHORTCUTS = {
    "seed": "metrics.seed",
    "tau_h": "regularize.tau_h",
    "tau_v": "extrude.tau_v",
    "eps": "detect.epsilon",
    "min_inliers": "detect.min_inliers",
    "timeout": "run.timeout",
}


def setup_logging(verbose=0):
    level = os.environ.get("LOD2KIT_LOG_LEVEL", "WARNING").upper()
    if verbose:
        level = "INFO" if verbose == 1 else "DEBUG"
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _kv(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected section.key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def reconstruct_parser(prog="reconstruct"):
    p = argparse.ArgumentParser(prog=prog, description="Reconstruct LOD2 building models from a point cloud and footprints.")
    p.add_argument("--points", required=True, help="point cloud (.xyz/.txt with x y z [class], or .ply)")
    p.add_argument("--footprints", required=True, help="GeoJSON footprints; the feature id names the building")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="key = value parameter file ([section] headers)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--seed", type=int, help="seed of the surface sampling used by the metrics")
    p.add_argument("--tau-h", type=float, help="minimum horizontal edge length (m)")
    p.add_argument("--tau-v", type=float, help="vertical merge distance (m)")
    p.add_argument("--eps", type=float, help="plane inlier distance (m)")
    p.add_argument("--min-inliers", type=int, help="minimum points per plane")
    p.add_argument("--timeout", type=float, help="per-building watchdog in seconds (0 = off)")
    p.add_argument("--watchdog", action="store_true", help="enable a 5 minute per-building watchdog")
    p.add_argument("--set", dest="overrides", action="append", type=_kv, default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config key; repeatable")
    p.add_argument("--format", choices=("obj", "ply"), default="obj", help="mesh output format")
    p.add_argument("--emit-debug-svg", action="store_true", help="write partition / regularity drawings")
    p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _config_from_args(args):
    over = dict(args.overrides)
    if args.watchdog:
        over.setdefault("run.timeout", "300")
    for attr, key in SHORTCUTS.items():
        v = getattr(args, attr)
        if v is not None:
            over[key] = v
    if args.eps is not None and "lines.adjacency_dist" not in over:
        over["lines.adjacency_dist"] = 2 * args.eps + 0.3
    return load_config(args.config, over)


def reconstruct_main(argv=None):
    args = reconstruct_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        cfg = _config_from_args(args)
    except (KeyError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    if args.print_config:
        print(cfg.to_text())
        return 0
    try:
        cloud = io.load_point_cloud(args.points)
        footprints = io.load_footprints(args.footprints)
    except (io.ParseError, io.UnsupportedFormat, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)
    jobs = make_jobs(cloud, footprints, cfg)
    rows = []
    t0 = time.perf_counter()

    def handle(res):
        base = os.path.join(args.out, _safe(res.id))
        if res.mesh is not None:
            io.export_mesh(res.local_mesh, f"{base}.{args.format}", name=res.id, offset=res.offset)
        if args.emit_debug_svg and res.debug:
            from .svg import partition_svg

            if "partition" in res.debug:
                partition_svg(res.debug["partition"], path=f"{base}_partition.svg", title=f"{res.id} partition")
            if "regularized" in res.debug:
                partition_svg(res.debug["regularized"], res.debug.get("graph"), path=f"{base}_regularized.svg",
                              title=f"{res.id} regularized")
        row = res.report()
        with open(f"{base}.json", "w") as fh:
            json.dump(row, fh, indent=2, sort_keys=True)
        rows.append(row)
        print(f"{res.id}: {res.status}", flush=True)

    results = run_batch(jobs, args.jobs, keep_debug=args.emit_debug_svg, on_result=handle)
    write_csv(rows, os.path.join(args.out, "report.csv"))
    done = [(r.id, r.mesh) for r in results if r.mesh is not None]
    if args.format == "obj" and done:
        io.export_obj_objects(done, os.path.join(args.out, "buildings.obj"))
    n_failed = sum(r.status.kind == "failed" for r in results)
    summary = {
        "buildings": len(results),
        "ok": sum(r.status.kind == "ok" for r in results),
        "degraded": sum(r.status.kind == "degraded" for r in results),
        "failed": n_failed,
        "seconds": round(time.perf_counter() - t0, 3),
        "statuses": {r.id: str(r.status) for r in results},
    }
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    print(f"{summary['ok']} ok, {summary['degraded']} degraded, {n_failed} failed", file=sys.stderr)
    return 2 if n_failed else 0


def _safe(name):
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in str(name)) or "building"


def fixtures_parser(prog="fixtures"):
    p = argparse.ArgumentParser(prog=prog, description="Synthetic buildings with known ground truth.")
    sub = p.add_subparsers(dest="cmd", required=True)
    g = sub.add_parser("generate", help="write points, footprint and reference mesh")
    g.add_argument("--archetype", choices=ARCHETYPES, default="gable")
    g.add_argument("--out", required=True)
    d = FixtureSpec()
    g.add_argument("--length", type=float, default=d.length)
    g.add_argument("--width", type=float, default=d.width)
    g.add_argument("--eave-height", type=float, default=d.eave_height)
    g.add_argument("--pitch", type=float, default=d.pitch)
    g.add_argument("--density", type=float, default=d.density)
    g.add_argument("--noise", type=float, default=d.noise)
    g.add_argument("--rotation", type=float, default=d.rotation)
    g.add_argument("--seed", type=int, default=d.seed)
    g.add_argument("--points-format", choices=("xyz", "ply"), default="xyz")
    g.add_argument("--id", help="building id (default: the archetype)")
    return p


def fixtures_main(argv=None):
    args = fixtures_parser().parse_args(argv)
    setup_logging()
    spec = FixtureSpec(args.archetype, args.length, args.width, args.eave_height, args.pitch,
                       args.density, args.noise, args.rotation, args.seed)
    cloud, fp, ref = generate(spec)
    os.makedirs(args.out, exist_ok=True)
    fid = args.id or args.archetype
    pts = os.path.join(args.out, f"points.{args.points_format}")
    if args.points_format == "ply":
        io.write_ply_points(cloud, pts)
    else:
        io.write_xyz(cloud, pts)
    io.write_footprints([(fid, fp)], os.path.join(args.out, "footprints.geojson"))
    io.export_obj(ref, os.path.join(args.out, "reference.obj"), name=fid)
    print(f"wrote {len(cloud)} points, footprint and reference mesh ({ref.n_vertices} V / {len(ref.facets)} F) to {args.out}")
    return 0


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "reconstruct":
        return reconstruct_main(argv[1:])
    if argv and argv[0] == "fixtures":
        return fixtures_main(argv[1:])
    print("usage: lod2kit {reconstruct,fixtures} ...", file=sys.stderr)
    return 1


def _entry(fn):
    def run():
        sys.exit(fn())

    return run


console_main = _entry(main)
console_reconstruct = _entry(reconstruct_main)
console_fixtures = _entry(fixtures_main)

if __name__ == "__main__":
    sys.exit(main())
