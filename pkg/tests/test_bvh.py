import numpy as np
import pytest

from app.core.rng import stream
from app.schemas.foliage_schema import FoliageParams
from app.services.bvh import MIN_DISTANCE, build_bvh, intersect, intersect_brute_force
from app.services.envelope_gen import build_icosphere, generate_envelope
from app.services.scatter_fill import fill


def _soup_scene() -> np.ndarray:
    params = FoliageParams(rho=1.0, v_target=200.0, area=2.0, seed=3)
    envelope = generate_envelope(params, stream(3, "envelope"))
    return fill(envelope, params, stream(3, "fill")).mesh.triangles()


def _sphere_scene() -> np.ndarray:
    return (build_icosphere(3).vertices * 5.0)[build_icosphere(3).faces]


def _tile_scene() -> np.ndarray:
    # Coplanar tiles sharing edges: exercises exact ties on shared edges.
    tris = []
    for i in range(-5, 5):
        for j in range(-5, 5):
            a, b, c, d = [i, j, 0.0], [i + 1, j, 0.0], [i + 1, j + 1, 0.0], [i, j + 1, 0.0]
            tris += [[a, b, c], [a, c, d]]
    return np.asarray(tris, dtype=np.float64)


SCENES = {"soup": _soup_scene, "sphere": _sphere_scene, "tiles": _tile_scene}


def _random_rays(n: int, seed: int, spread: float) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    origins = rng.uniform(-spread, spread, size=(n, 3))
    directions = rng.normal(size=(n, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return origins, directions


@pytest.mark.parametrize("name", sorted(SCENES))
def test_bvh_matches_brute_force(name):
    triangles = SCENES[name]()
    origins, directions = _random_rays(10_000, seed=len(name), spread=8.0)

    bvh_hits = build_bvh(triangles).intersect(origins, directions)
    ref = intersect_brute_force(triangles, origins, directions)

    assert bvh_hits.hit.any()
    assert np.array_equal(bvh_hits.face, ref.face)
    assert np.array_equal(bvh_hits.t, ref.t)


def test_bvh_matches_brute_force_with_distance_limit():
    triangles = _soup_scene()
    origins, directions = _random_rays(2_000, seed=9, spread=6.0)
    limit = np.full(len(origins), 4.0)

    got = build_bvh(triangles).intersect(origins, directions, t_max=limit)
    ref = intersect_brute_force(triangles, origins, directions, t_max=limit)

    assert np.array_equal(got.face, ref.face)
    assert (got.t[got.hit] < 4.0).all()


def test_tile_edge_tie_resolves_to_lowest_face():
    triangles = _tile_scene()
    bvh = build_bvh(triangles)
    # Straight down onto the diagonal shared by the two triangles of one tile.
    hit = intersect(bvh, [0.5, 0.5, 3.0], [0.0, 0.0, -1.0])

    assert hit is not None
    face, t, _, _ = hit
    assert t == pytest.approx(3.0)
    candidates = [f for f in range(len(triangles)) if np.allclose(triangles[f, 0, :2], [0.0, 0.0])]
    assert face == min(candidates)


def test_single_ray_hit_and_miss():
    tri = np.array([[[0.0, 0.0, 5.0], [1.0, 0.0, 5.0], [0.0, 1.0, 5.0]]])
    bvh = build_bvh(tri)

    face, t, u, v = intersect(bvh, [0.2, 0.2, 0.0], [0.0, 0.0, 1.0])
    assert face == 0
    assert t == pytest.approx(5.0)
    assert (u, v) == pytest.approx((0.2, 0.2))
    assert intersect(bvh, [2.0, 2.0, 0.0], [0.0, 0.0, 1.0]) is None


def test_ray_parallel_to_triangle_misses():
    tri = np.array([[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]])
    assert intersect(build_bvh(tri), [-1.0, 0.2, 0.0], [1.0, 0.0, 0.0]) is None


def test_back_face_is_hit_and_origin_face_is_ignored():
    tri = np.array([[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]])
    bvh = build_bvh(tri)

    assert intersect(bvh, [0.2, 0.2, -1.0], [0.0, 0.0, 1.0]) is not None
    assert intersect(bvh, [0.2, 0.2, 1.0], [0.0, 0.0, -1.0]) is not None
    # A ray leaving the surface does not re-hit it.
    assert intersect(bvh, [0.2, 0.2, 0.0], [0.0, 0.0, 1.0]) is None


def test_occluded_respects_segment_length():
    tri = np.array([[[-1.0, -1.0, 2.0], [1.0, -1.0, 2.0], [0.0, 1.0, 2.0]]])
    bvh = build_bvh(tri)
    origins = np.zeros((2, 3))
    directions = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])

    blocked = bvh.occluded(origins, directions, np.array([3.0, 1.5]))
    assert blocked.tolist() == [True, False]
    # The endpoint itself does not count as a blocker.
    assert not bvh.occluded(origins[:1], directions[:1], np.array([2.0 + MIN_DISTANCE / 2]))[0]


def test_empty_bvh_misses_everything():
    bvh = build_bvh(np.zeros((0, 3, 3)))
    hits = bvh.intersect(np.zeros((4, 3)), np.tile([1.0, 0.0, 0.0], (4, 1)))

    assert bvh.n_nodes == 0
    assert not hits.hit.any()
    assert np.isinf(hits.t).all()


def test_every_face_lands_in_one_leaf():
    triangles = _soup_scene()
    bvh = build_bvh(triangles)
    leaves = bvh.count > 0

    owned = np.concatenate([bvh.order[s : s + c] for s, c in zip(bvh.start[leaves], bvh.count[leaves])])
    assert np.array_equal(np.sort(owned), np.arange(len(triangles)))
