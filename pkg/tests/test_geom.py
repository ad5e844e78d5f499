import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import eigen_plane, height_form, parametric_intersection
from lod2kit.errors import DegenerateInput
from lod2kit.geom import Plane3, PointCloud, Polygon2, Segment2, fit_plane, segment_intersection_2d

coord = st.floats(-50, 50, allow_nan=False)


def test_fit_plane_flat_square():
    pl = fit_plane([(0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0)])
    assert np.allclose(pl.n, (0, 0, 1))
    assert abs(pl.d) < 1e-15


def test_fit_plane_ramp():
    pl = fit_plane([(0, 0, 0), (1, 0, 1), (0, 1, 0), (1, 1, 1)])
    assert np.allclose(pl.n, np.array([-1, 0, 1]) / np.sqrt(2))
    assert abs(pl.d) < 1e-12
    assert np.allclose(pl.height_form(), (1, 0, 0), atol=1e-12)


def test_fit_plane_noisy_matches_eigen_oracle():
    rng = np.random.default_rng(3)
    xy = rng.uniform(-5, 5, (200, 2))
    z = 0.3 * xy[:, 0] + 0.1 * xy[:, 1] + 2 + rng.normal(0, 0.01, 200)
    pts = np.column_stack([xy, z])
    a, b, c = fit_plane(pts).height_form()
    ao, bo, co = height_form(*eigen_plane(pts))
    assert np.allclose((a, b, c), (0.3, 0.1, 2.0), atol=0.01)
    assert np.allclose((a, b, c), (ao, bo, co), atol=1e-9)


def test_fit_plane_rejects_collinear():
    with pytest.raises(DegenerateInput):
        fit_plane([(0, 0, 0), (1, 1, 1), (2, 2, 2)])
    with pytest.raises(DegenerateInput):
        fit_plane([(0, 0, 0), (1, 0, 0)])


planar_pts = st.lists(st.tuples(coord, coord, coord), min_size=4, max_size=30)


@settings(max_examples=60, deadline=None)
@given(planar_pts, st.tuples(coord, coord, coord))
def test_fit_plane_translation_equivariant(pts, t):
    P = np.array(pts)
    try:
        pl = fit_plane(P)
    except DegenerateInput:
        return
    moved = fit_plane(P + np.array(t))
    ref = pl.translated(t)
    # compare as unsigned planes: the normal is unique up to sign
    s = np.sign(moved.n @ ref.n)
    assert np.allclose(moved.n, s * ref.n, atol=1e-9)
    assert abs(moved.d - s * ref.d) <= 1e-9 * max(1.0, np.abs(P).max() + np.abs(t).max())


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_fit_plane_beats_axis_regressions(seed):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(20, 3)) * rng.uniform(0.1, 5, 3)
    pl = fit_plane(P)
    r_tls = np.sum(pl.signed_distance(P) ** 2)
    for k in range(3):
        # regress coordinate k on the other two, then measure orthogonal residual
        o = [i for i in range(3) if i != k]
        M = np.column_stack([P[:, o], np.ones(len(P))])
        coef = np.linalg.lstsq(M, P[:, k], rcond=None)[0]
        n = np.zeros(3)
        n[k] = 1.0
        n[o] = -coef[:2]
        ax = Plane3(tuple(n), -coef[2])
        assert r_tls <= np.sum(ax.signed_distance(P) ** 2) + 1e-9


def test_plane_forms():
    pl = Plane3.from_height(0.5, -0.25, 3.0)
    assert np.isclose(np.linalg.norm(pl.n), 1.0)
    assert np.allclose(pl.height_form(), (0.5, -0.25, 3.0))
    assert np.isclose(pl.z_at(2.0, 4.0), 3.0)
    assert Plane3((0, 0, 2), -4).d == -2.0
    with pytest.raises(DegenerateInput):
        Plane3((0, 0, 0), 1)
    with pytest.raises(DegenerateInput):
        Plane3((1, 0, 0), 0).height_form()


def test_segment_intersection_cross():
    p = segment_intersection_2d(((0, 0), (2, 0)), ((1, -1), (1, 1)))
    assert np.allclose(p, (1, 0))
    p2 = segment_intersection_2d(Segment2((0, 0), (2, 0)), Segment2((1, -1), (1, 1)))
    assert np.allclose(p2, (1, 0))


def test_segment_intersection_disjoint_collinear():
    assert segment_intersection_2d(((0, 0), (1, 0)), ((2, 0), (3, 0))) is None
    assert segment_intersection_2d(((0, 0), (1, 0)), ((0.5, 0), (3, 0))) is None  # overlapping collinear
    assert segment_intersection_2d(((0, 0), (1, 0)), ((0, 1), (1, 1))) is None  # parallel


def test_segment_intersection_random_vs_parametric_oracle():
    rng = np.random.default_rng(0)
    disagree = 0
    for _ in range(10_000):
        p1, q1, p2, q2 = rng.uniform(-1, 1, (4, 2))
        mine = segment_intersection_2d((p1, q1), (p2, q2), eps=0.0)
        ref = parametric_intersection(p1, q1, p2, q2)
        if (mine is None) != (ref is None):
            disagree += 1
        elif mine is not None:
            assert np.allclose(mine, ref, atol=1e-9)
    assert disagree == 0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(coord, coord), min_size=4, max_size=4))
def test_segment_intersection_symmetric(pts):
    a, b, c, d = (np.array(p) for p in pts)
    r1 = segment_intersection_2d((a, b), (c, d))
    r2 = segment_intersection_2d((c, d), (a, b))
    assert (r1 is None) == (r2 is None)
    if r1 is not None:
        assert np.array_equal(r1, r2)


def test_polygon_and_cloud_basics():
    sq = Polygon2(np.array([[0, 0], [0, 1], [1, 1], [1, 0]], float))  # clockwise input
    assert sq.area == pytest.approx(1.0)
    assert sq.is_valid()
    assert np.allclose(sq.centroid(), (0.5, 0.5))
    assert sq.bounds() == (0.0, 0.0, 1.0, 1.0)
    assert len(list(sq.edges())) == 4
    t = sq.translated((2, 3))
    assert t.bounds() == (2.0, 3.0, 3.0, 4.0)
    cloud = PointCloud(np.zeros((3, 3)), [6, 2, 6])
    assert len(cloud.subset(cloud.classes == 6)) == 2
    with pytest.raises(DegenerateInput):
        PointCloud([[0, 0, np.nan]])
    with pytest.raises(DegenerateInput):
        PointCloud(np.zeros((2, 3)), [1])
