import numpy as np
import pytest

from app.core.errors import ParameterRangeError
from app.core.rng import stream
from app.schemas.foliage_schema import FoliageParams
from app.services.envelope_gen import generate_envelope, mesh_volume
from app.services.mesh_io import export_mesh, export_scene_obj, load_mesh
from app.services.scatter_fill import fill


@pytest.fixture
def crown():
    params = FoliageParams(rho=0.2, v_target=50.0, n_subdiv=1, seed=4)
    envelope = generate_envelope(params, stream(4, "envelope"))
    return envelope, fill(envelope, params, stream(4, "fill"))


def test_ply_round_trip_keeps_vertices(crown, tmp_path):
    envelope, _ = crown
    loaded = load_mesh(export_mesh(envelope, tmp_path / "envelope.ply"))

    assert np.array_equal(loaded.faces, envelope.faces)
    assert np.allclose(loaded.vertices, envelope.vertices, atol=1e-6)


def test_obj_round_trip_keeps_shape(crown, tmp_path):
    envelope, soup = crown
    env = load_mesh(export_mesh(envelope, tmp_path / "envelope.obj"))
    leaves = load_mesh(export_mesh(soup.mesh, tmp_path / "foliage.obj"))

    assert env.n_faces == envelope.n_faces
    assert env.is_watertight()
    assert mesh_volume(env) == pytest.approx(50.0, rel=1e-5)
    assert leaves.n_faces == soup.count == 10


def test_scene_obj_has_both_objects(crown, tmp_path):
    envelope, soup = crown
    path = export_scene_obj(envelope, soup, tmp_path / "scene.obj")
    lines = path.read_text(encoding="utf-8").splitlines()

    assert [line for line in lines if line.startswith("o ")] == ["o envelope", "o foliage"]
    vertices = [line for line in lines if line.startswith("v ")]
    faces = [line for line in lines if line.startswith("f ")]
    assert len(vertices) == envelope.n_vertices + soup.mesh.n_vertices
    assert len(faces) == envelope.n_faces + soup.count
    indices = [int(i.split("/")[0]) for line in faces for i in line.split()[1:]]
    assert min(indices) == 1
    assert max(indices) == len(vertices)
    assert load_mesh(path).n_faces == envelope.n_faces + soup.count


@pytest.mark.parametrize("name", ["crown.stl", "crown.txt"])
def test_unsupported_formats_rejected(crown, tmp_path, name):
    envelope, _ = crown
    with pytest.raises(ParameterRangeError):
        export_mesh(envelope, tmp_path / name)


def test_scene_export_requires_obj(crown, tmp_path):
    envelope, soup = crown
    with pytest.raises(ParameterRangeError):
        export_scene_obj(envelope, soup, tmp_path / "scene.ply")
