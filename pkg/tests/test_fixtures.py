import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lod2kit.cli import fixtures_main
from lod2kit.fixtures import ARCHETYPES, EXPECTED_COUNTS, FixtureSpec, generate, random_spec
from lod2kit.geom import BUILDING_CLASS, GROUND_CLASS
from lod2kit.mesh import validate_mesh


def mesh_volume(m):
    """Divergence theorem over the facet triangulation."""
    vol = 0.0
    for _, (a, b, c) in m.triangles():
        vol += np.dot(m.vertices[a], np.cross(m.vertices[b], m.vertices[c])) / 6.0
    return vol


def mesh_ok(m):
    rep = validate_mesh(m)
    return rep["watertight"] and rep["manifold"] and rep["intersection_free"] and rep["planarity"] <= 1e-9


def test_flat_roof_points():
    cloud, fp, _ = generate(FixtureSpec("flat", length=10, width=10, density=20, seed=4))
    roof = cloud.xyz[cloud.classes == BUILDING_CLASS]
    # Poisson(2000): 5 sigma is ~224
    assert abs(len(roof) - 2000) <= 5 * math.sqrt(2000)
    assert np.all(roof[:, 2] == 6.0)
    assert fp.area == pytest.approx(100.0)
    ground = cloud.xyz[cloud.classes == GROUND_CLASS]
    assert len(ground) > 0 and np.all(ground[:, 2] == 0.0)


def test_gable_ridge_height():
    cloud, _, mesh = generate(FixtureSpec("gable", length=10, width=8, noise=0.02, seed=1))
    ridge = 6.0 + 4.0 * math.tan(math.radians(30))
    assert mesh.vertices[:, 2].max() == pytest.approx(ridge, abs=1e-12)
    roof = cloud.xyz[cloud.classes == BUILDING_CLASS]
    near = roof[np.abs(roof[:, 1]) < 0.1]
    assert abs(near[:, 2].mean() - ridge) < 0.1
    # residuals against the closed-form roof are the injected noise
    z = 6.0 + (4.0 - np.abs(roof[:, 1])) * math.tan(math.radians(30))
    far = np.abs(np.abs(roof[:, 1]) - 4.0) > 0.1
    # away from ridge and eaves, vertical residuals have std of about sigma (slightly above, xy noise on a slope)
    sd = float(np.std((roof[:, 2] - z)[far & (np.abs(roof[:, 1]) > 0.1)]))
    assert 0.018 < sd < 0.02 * math.sqrt(1 + math.tan(math.radians(30)) ** 2) + 0.002


def test_same_seed_same_bytes():
    a, _, _ = generate(FixtureSpec("hip", noise=0.03, seed=11))
    b, _, _ = generate(FixtureSpec("hip", noise=0.03, seed=11))
    c, _, _ = generate(FixtureSpec("hip", noise=0.03, seed=12))
    assert a.xyz.tobytes() == b.xyz.tobytes()
    assert a.xyz.tobytes() != c.xyz.tobytes()


@pytest.mark.parametrize("arch", ARCHETYPES)
@pytest.mark.parametrize("rotation", [0.0, 17.0])
def test_reference_meshes(arch, rotation):
    _, fp, mesh = generate(FixtureSpec(arch, rotation=rotation))
    assert (mesh.n_vertices, len(mesh.facets)) == EXPECTED_COUNTS[arch]
    assert mesh_ok(mesh)
    # closed genus-0 polyhedron; facets with holes count each extra loop (Euler-Poincare)
    loops = sum(len(f.loops) for f in mesh.facets)
    assert mesh.n_vertices - len(mesh.edges()) + 2 * len(mesh.facets) - loops == 2
    ground = [f for f in mesh.facets if f.role == "ground"]
    assert len(ground) == 1
    # loops are oriented outward
    assert mesh_volume(mesh) > 0


CLOSED_FORM_VOLUME = {
    "flat": lambda L, W, h, t: L * W * h,
    "gable": lambda L, W, h, t: L * W * h + L * W * W / 4 * t,
    "hip": lambda L, W, h, t: L * W * h + (W / 2 * t) * (L * W / 2 - W * W / 6),
    # square base of side min(L, W)
    "pyramid": lambda L, W, h, t: min(L, W) ** 2 * (h + min(L, W) / 2 * t / 3),
}


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(sorted(CLOSED_FORM_VOLUME)), st.floats(6, 10), st.floats(1.1, 1.8),
       st.floats(4, 9), st.floats(20, 40), st.floats(0, 90))
def test_volume_closed_form(arch, W, ratio, h, pitch, rot):
    L = W * ratio
    _, _, mesh = generate(FixtureSpec(arch, length=L, width=W, eave_height=h, pitch=pitch, rotation=rot))
    t = math.tan(math.radians(pitch))
    assert mesh_volume(mesh) == pytest.approx(CLOSED_FORM_VOLUME[arch](L, W, h, t), rel=1e-9)


def test_random_specs_valid():
    rng = np.random.default_rng(7)
    for _ in range(40):
        spec = random_spec(rng)
        _, _, mesh = generate(spec)
        assert (mesh.n_vertices, len(mesh.facets)) == EXPECTED_COUNTS[spec.archetype]
        assert mesh_ok(mesh)


def test_bad_spec():
    with pytest.raises(ValueError):
        FixtureSpec("dome")
    with pytest.raises(ValueError):
        FixtureSpec("flat", density=0)


def test_cli_writes_three_files(tmp_path):
    assert fixtures_main(["generate", "--archetype", "L-gable", "--out", str(tmp_path), "--seed", "3"]) == 0
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["footprints.geojson", "points.xyz", "reference.obj"]
    first = hashlib.sha256((tmp_path / "points.xyz").read_bytes()).hexdigest()
    fixtures_main(["generate", "--archetype", "L-gable", "--out", str(tmp_path), "--seed", "3"])
    assert hashlib.sha256((tmp_path / "points.xyz").read_bytes()).hexdigest() == first
