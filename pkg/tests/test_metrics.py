import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_chamfer
from test_acceptance import unit_cube
from lod2kit.errors import ZeroArea
from lod2kit.fixtures import EXPECTED_COUNTS, FixtureSpec, generate
from lod2kit.geom import Plane3
from lod2kit.mesh import BuildingMesh, Facet
from lod2kit.metrics import (
    accuracy,
    building_report,
    chamfer_one_sided,
    complexity,
    sample_surface,
    write_csv,
    write_json,
)

UP = Plane3((0, 0, 1), 0.0)


def square_mesh():
    V = np.array([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)], float)
    return BuildingMesh(V, [Facet([[0, 1, 2, 3]], "roof", UP)])


def test_sample_unit_square():
    pts = sample_surface(square_mesh(), 100_000, seed=1)
    assert pts.shape == (100_000, 3)
    # 5 sigma of the mean of U(0, 1): 5 * sqrt(1/12) / sqrt(n)
    assert np.abs(pts[:, :2].mean(axis=0) - 0.5).max() <= max(0.01, 5 * np.sqrt(1 / 12) / np.sqrt(1e5))
    assert pts[:, :2].min() >= 0 and pts[:, :2].max() <= 1
    assert np.all(pts[:, 2] == 0)


def test_sample_single_triangle():
    V = np.array([(0, 0, 0), (2, 0, 0), (0, 2, 0)], float)
    p = sample_surface(BuildingMesh(V, [Facet([[0, 1, 2]], "roof", UP)]), 1, seed=0)[0]
    assert p[0] >= 0 and p[1] >= 0 and p[0] + p[1] <= 2 + 1e-12


def test_sample_area_share():
    V = np.array([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
                  (5, 0, 0), (8, 0, 0), (8, 1, 0), (5, 1, 0)], float)
    m = BuildingMesh(V, [Facet([[0, 1, 2, 3]], "roof", UP), Facet([[4, 5, 6, 7]], "roof", UP)])
    pts = sample_surface(m, 100_000, seed=2)
    share = float(np.mean(pts[:, 0] >= 5))
    assert abs(share - 0.75) <= 0.01


def test_sample_reproducible_and_zero_area():
    a = sample_surface(unit_cube(), 1000, seed=9)
    b = sample_surface(unit_cube(), 1000, seed=9)
    assert np.array_equal(a, b)
    V = np.array([(0, 0, 0), (1, 0, 0), (2, 0, 0)], float)
    with pytest.raises(ZeroArea):
        sample_surface(BuildingMesh(V, []), 10)


def test_chamfer_examples():
    rng = np.random.default_rng(0)
    A = rng.random((50, 3))
    assert chamfer_one_sided(A, A) == 0.0
    assert chamfer_one_sided([[0, 0, 0]], [[3, 4, 0]]) == 5.0
    B = rng.random((500, 3))
    C = rng.random((500, 3))
    assert abs(chamfer_one_sided(B, C) - brute_chamfer(B, C)) <= 1e-12
    with pytest.raises(ValueError):
        chamfer_one_sided(np.zeros((0, 3)), A)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 100.0))
def test_chamfer_properties(seed, s):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(30, 3))
    B = rng.normal(size=(40, 3))
    assert chamfer_one_sided(A, A) == 0.0
    d = chamfer_one_sided(A, B)
    assert d >= 0
    assert chamfer_one_sided(s * A, s * B) == pytest.approx(s * d, rel=1e-12, abs=1e-12)


def test_cube_complexity():
    c = complexity(unit_cube())
    assert (c.V, c.F, c.F_triangles, c.E_short_ratio) == (8, 6, 12, 0.0)


def test_small_cube_all_short():
    m = unit_cube()
    m = BuildingMesh(m.vertices * 0.4, [Facet(f.loops, f.role, Plane3(f.plane.normal, f.plane.d * 0.4)) for f in m.facets])
    assert complexity(m).E_short_ratio == 1.0


def test_gable_counts():
    _, _, ref = generate(FixtureSpec("gable"))
    c = complexity(ref)
    assert (c.V, c.F) == EXPECTED_COUNTS["gable"] == (10, 7)


def test_vertex_welding():
    m = unit_cube()
    V = np.vstack([m.vertices, m.vertices[0] + 1e-8])  # a duplicate within eps
    facets = list(m.facets)
    loop = [8 if v == 0 else v for v in facets[0].loops[0]]
    facets[0] = Facet([loop], facets[0].role, facets[0].plane)
    c = complexity(BuildingMesh(V, facets))
    assert c.V == 8


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 5.0))
def test_short_ratio_bounded(thr):
    c = complexity(unit_cube(), edge_threshold=thr)
    assert 0.0 <= c.E_short_ratio <= 1.0


def test_accuracy_sampling_floor():
    # two independent uniform samplings of one surface: the mean nearest-neighbour
    # distance of a 2D Poisson process is 0.5 / sqrt(density)
    _, _, ref = generate(FixtureSpec("hip"))
    n = 20_000
    area = ref.area()
    acc = accuracy(ref, sample_surface(ref, n, seed=7), ref, n=n, seed=0, ref_to_rec=True)
    expect = 0.5 * np.sqrt(area / n)
    for v in (acc.cd_inp_to_rec, acc.cd_rec_to_ref, acc.cd_ref_to_rec):
        assert abs(v - expect) <= 0.1 * expect
    acc2 = accuracy(ref, None, None, n=1000)
    assert acc2.cd_inp_to_rec is None and acc2.cd_rec_to_ref is None and acc2.cd_ref_to_rec is None


def test_reports(tmp_path):
    c = complexity(unit_cube())
    a = accuracy(unit_cube(), sample_surface(unit_cube(), 100, 1), None, n=1000)
    rows = [building_report("a", c, a), building_report("b", None, None, "failed(x, y)")]
    write_json(rows, tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())["buildings"][0]["V"] == 8
    write_csv(rows, tmp_path / "r.csv")
    with open(tmp_path / "r.csv") as fh:
        got = list(csv.DictReader(fh))
    assert [r["building"] for r in got][:2] == ["a", "b"]
    assert got[1]["status"] == "failed(x, y)"
