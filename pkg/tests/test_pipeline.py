import json
import subprocess
import sys

import numpy as np
import pytest

from lod2kit.cli import fixtures_main, reconstruct_main
from lod2kit.config import PipelineConfig, load_config
from lod2kit.fixtures import FixtureSpec, generate
from lod2kit.geom import PointCloud, Polygon2
from lod2kit.io import write_footprints, write_xyz
from lod2kit.mesh import validate_mesh
from lod2kit.pipeline import BuildingJob, fixture_job, run_batch, run_pipeline

NO_METRICS = PipelineConfig().with_overrides({"metrics.enabled": False})


def test_gable_ok():
    r = run_pipeline(fixture_job(FixtureSpec("gable")))
    assert str(r.status) == "ok"
    assert len(r.mesh.facets) == 7 and r.complexity.V == 10
    rep = validate_mesh(r.mesh)
    assert rep["watertight"] and rep["manifold"] and rep["intersection_free"] and rep["planarity"] <= 1e-9


def test_random_points_fail_in_plane_detection():
    rng = np.random.default_rng(0)
    cloud = PointCloud(rng.random((10, 3)) * [10, 10, 8])
    fp = Polygon2(np.array([(0, 0), (10, 0), (10, 10), (0, 10)], float))
    r = run_pipeline(BuildingJob(cloud, fp, NO_METRICS, "rnd"))
    assert r.status.kind == "failed"
    assert r.status.stage == "plane_detect" and r.status.reason.startswith("NoPlanesFound")
    assert r.mesh is None


@pytest.mark.parametrize("sigma", [0.02, 0.05])
def test_flat_accuracy_within_two_sigma(sigma):
    r = run_pipeline(fixture_job(FixtureSpec("flat", noise=sigma, seed=3)))
    assert r.status.kind == "ok"
    assert r.accuracy.cd_inp_to_rec <= 2 * sigma


def test_deterministic_and_translation_invariant():
    a = run_pipeline(fixture_job(FixtureSpec("hip", noise=0.03, seed=5), NO_METRICS))
    b = run_pipeline(fixture_job(FixtureSpec("hip", noise=0.03, seed=5), NO_METRICS))
    assert np.array_equal(a.mesh.vertices, b.mesh.vertices)
    assert [f.loops for f in a.mesh.facets] == [f.loops for f in b.mesh.facets]
    # large georeferenced coordinates: the working frame is centred, output shifted back
    c = run_pipeline(fixture_job(FixtureSpec("hip", noise=0.03, seed=5, origin=(350_000.0, 5_600_000.0, 120.0)), NO_METRICS))
    assert c.status.kind == "ok" and c.mesh.n_vertices == a.mesh.n_vertices
    assert np.abs(c.mesh.vertices.mean(axis=0) - a.mesh.vertices.mean(axis=0) - (350_000, 5_600_000, 120)).max() < 1e-6


def test_run_batch_keeps_order():
    specs = [FixtureSpec(a, seed=k) for k, a in enumerate(["flat", "step", "gable", "pyramid"])]
    jobs = [fixture_job(s, NO_METRICS, id=f"b{k}") for k, s in enumerate(specs)]
    seq = run_batch(jobs)
    par = run_batch(jobs, workers=2)
    assert [r.id for r in seq] == [r.id for r in par] == ["b0", "b1", "b2", "b3"]
    for x, y in zip(seq, par):
        assert np.array_equal(x.mesh.vertices, y.mesh.vertices)


def test_config_overrides(tmp_path):
    cfg = PipelineConfig().with_overrides({"regularize.tau_h": "0.75", "run.regularize": "off", "kinetic.max_extensions": "inf"})
    assert cfg.regularize.tau_h == 0.75 and cfg.run.regularize is False and cfg.kinetic.max_extensions == float("inf")
    with pytest.raises(KeyError):
        PipelineConfig().with_overrides({"nosuch.key": 1})
    with pytest.raises(KeyError):
        PipelineConfig().with_overrides({"detect.nosuch": 1})
    with pytest.raises(ValueError):
        PipelineConfig().with_overrides({"run.regularize": "maybe"})
    p = tmp_path / "c.ini"
    p.write_text("[detect]\nepsilon = 0.2  # meters\n[metrics]\nsamples = 5000\n")
    cfg = load_config(p, {"metrics.samples": "7"})
    assert cfg.detect.epsilon == 0.2 and cfg.metrics.samples == 7
    # the printed config reads back to itself
    (tmp_path / "d.ini").write_text(cfg.to_text())
    assert load_config(tmp_path / "d.ini") == cfg


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    """Two fixture buildings plus one footprint over empty ground."""
    d = tmp_path_factory.mktemp("scene")
    c1, f1, _ = generate(FixtureSpec("gable", seed=1))
    c2, f2, _ = generate(FixtureSpec("hip", seed=2, origin=(40.0, 0.0, 0.0)))
    xyz = np.vstack([c1.xyz, c2.xyz])
    write_xyz(PointCloud(xyz), d / "pts.xyz")
    empty = Polygon2(np.array([(100, 100), (110, 100), (110, 110), (100, 110)], float))
    write_footprints([("g", f1), ("h", f2)], d / "ok.geojson")
    write_footprints([("g", f1), ("h", f2), ("e", empty)], d / "mixed.geojson")
    return d


def test_cli_success(scene, tmp_path):
    out = tmp_path / "o"
    code = reconstruct_main(["--points", str(scene / "pts.xyz"), "--footprints", str(scene / "ok.geojson"),
                             "--out", str(out), "--jobs", "2", "--emit-debug-svg", "--set", "metrics.samples=20000"])
    assert code == 0
    for name in ("g.obj", "h.obj", "buildings.obj", "report.csv", "summary.json", "g.json", "g_partition.svg"):
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())
    assert summary["ok"] == 2 and summary["statuses"] == {"g": "ok", "h": "ok"}


def test_cli_partial_failure(scene, tmp_path):
    code = reconstruct_main(["--points", str(scene / "pts.xyz"), "--footprints", str(scene / "mixed.geojson"),
                             "--out", str(tmp_path), "--set", "metrics.enabled=false"])
    assert code == 2
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["failed"] == 1 and summary["statuses"]["e"].startswith("failed(")
    assert (tmp_path / "g.obj").exists() and not (tmp_path / "e.obj").exists()


def test_cli_input_and_config_errors(scene, tmp_path, capsys):
    bad = tmp_path / "bad.xyz"
    bad.write_text("0 0 0\n1 2\n")
    assert reconstruct_main(["--points", str(bad), "--footprints", str(scene / "ok.geojson"), "--out", str(tmp_path)]) == 1
    assert "line 2" in capsys.readouterr().err
    assert reconstruct_main(["--points", str(scene / "pts.xyz"), "--footprints", str(scene / "ok.geojson"),
                             "--out", str(tmp_path), "--set", "detect.nosuch=1"]) == 1


def test_cli_print_config(capsys):
    assert reconstruct_main(["--points", "x", "--footprints", "y", "--out", "z", "--eps", "0.2", "--print-config"]) == 0
    text = capsys.readouterr().out
    assert "[detect]" in text and "epsilon = 0.2" in text and "adjacency_dist = 0.7" in text


def test_console_entry_point(tmp_path):
    assert fixtures_main(["generate", "--archetype", "step", "--out", str(tmp_path)]) == 0
    res = subprocess.run([sys.executable, "-m", "lod2kit", "reconstruct", "--points", str(tmp_path / "points.xyz"),
                          "--footprints", str(tmp_path / "footprints.geojson"), "--out", str(tmp_path / "o")],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "step: ok" in res.stdout


@pytest.mark.slow
@pytest.mark.parametrize("arch", ["hip", "pyramid", "L-gable", "cross-gable"])
def test_regularization_ablation_complex(arch):
    # on archetypes whose plan edges come from noisy discontinuities, switching
    # regularization off leaves short and near-parallel edges behind
    from test_acceptance import ablation

    res = ablation(arch, range(5))
    (v1, s1, c1), (v0, s0, c0) = res["on"], res["off"]
    assert v0 > v1 and s0 > s1
    assert abs(c0 - c1) < 0.02
