"""
Filling the crown envelope with randomly placed, randomly rotated leaves.

Each leaf is an equilateral triangle of area A whose centroid is drawn
uniformly inside the envelope and whose orientation is drawn uniformly from
SO(3). Leaves may stick out of the envelope; only their centroids are inside.
"""

from __future__ import annotations

import logging
import math
import time

import numpy as np
from scipy.spatial.transform import Rotation
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from app.core.errors import (
    AmbiguousCrossingError,
    NonWatertightMeshError,
    ParameterRangeError,
    RejectionBudgetError,
)
from app.schemas.foliage_schema import FoliageParams
from app.schemas.geometry import ScattererSoup, TrianglePrototype, TriMesh

logger = logging.getLogger(__name__)

__all__ = [
    "triangle_prototype",
    "random_rotation",
    "random_rotations",
    "points_inside",
    "sample_point_in_mesh",
    "sample_points_in_mesh",
    "estimate_volume_mc",
    "fill",
]

REJECTION_BUDGET = 1_000_000
ORIGIN_JITTER = 1e-9  # m, applied to containment rays that grazed an edge
EDGE_TOL = 1e-10  # barycentric margin treated as "on an edge"
PARALLEL_TOL = 1e-14
MAX_PARITY_ATTEMPTS = 8
_PAIRS_PER_CHUNK = 1_000_000


def triangle_prototype(area: float) -> TrianglePrototype:
    """Equilateral triangle of the given area, centered at the origin in the xy-plane."""
    if not area > 0:
        raise ParameterRangeError("area", f"must be > 0, got {area}")
    side = math.sqrt(4.0 * area / math.sqrt(3.0))
    local = np.array(
        [
            [0.0, -side / math.sqrt(3.0), 0.0],
            [side / 2.0, side / (2.0 * math.sqrt(3.0)), 0.0],
            [-side / 2.0, side / (2.0 * math.sqrt(3.0)), 0.0],
        ]
    )
    return TrianglePrototype(area=float(area), side=side, local_vertices=local)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """One rotation matrix drawn uniformly (Haar measure) from SO(3)."""
    return random_rotations(rng, 1)[0]


def random_rotations(rng: np.random.Generator, n: int) -> np.ndarray:
    """
    (n, 3, 3) rotation matrices, uniform on SO(3).

    Drawn as uniform unit quaternions (Haar measure) by scipy.
    """
    if n == 0:
        return np.zeros((0, 3, 3))
    return Rotation.random(n, rng).as_matrix().reshape(n, 3, 3)


def _random_directions(rng: np.random.Generator, n: int) -> np.ndarray:
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _parity(triangles: np.ndarray, origins: np.ndarray, directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Crossing parity of each (origin, direction) ray; also flags grazing rays."""
    v0 = triangles[:, 0]
    e1 = triangles[:, 1] - v0
    e2 = triangles[:, 2] - v0
    inside = np.zeros(len(origins), dtype=bool)
    ambiguous = np.zeros(len(origins), dtype=bool)
    step = max(1, _PAIRS_PER_CHUNK // max(len(triangles), 1))

    for lo in range(0, len(origins), step):
        o = origins[lo : lo + step, None, :]
        d = directions[lo : lo + step, None, :]
        pvec = np.cross(d, e2[None])
        det = np.einsum("fk,pfk->pf", e1, pvec)
        usable = np.abs(det) > PARALLEL_TOL
        inv = np.where(usable, 1.0 / np.where(usable, det, 1.0), 0.0)
        tvec = o - v0[None]
        u = np.einsum("pfk,pfk->pf", tvec, pvec) * inv
        qvec = np.cross(tvec, e1[None])
        v = np.einsum("pfk,pfk->pf", d, qvec) * inv
        t = np.einsum("fk,pfk->pf", e2, qvec) * inv
        w = 1.0 - u - v

        crossing = usable & (u >= 0) & (v >= 0) & (w >= 0) & (t > 0)
        margin = np.minimum(np.minimum(u, v), w)
        grazing = usable & (t > -EDGE_TOL) & (margin > -EDGE_TOL) & ((margin < EDGE_TOL) | (t < EDGE_TOL))

        inside[lo : lo + step] = (crossing.sum(axis=1) % 2) == 1
        ambiguous[lo : lo + step] = grazing.any(axis=1)
    return inside, ambiguous


def points_inside(envelope: TriMesh, points: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    Ray-parity containment for a watertight (possibly non-convex) surface.

    Every query casts its own random direction. Rays that graze an edge or
    vertex are re-cast from an origin jittered by ~1e-9 m.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    triangles = envelope.triangles()
    inside = np.zeros(len(points), dtype=bool)
    pending = np.ones(len(points), dtype=bool)
    origins = points.copy()

    for attempt in Retrying(
        reraise=True,
        stop=stop_after_attempt(MAX_PARITY_ATTEMPTS),
        retry=retry_if_exception_type(AmbiguousCrossingError),
    ):
        with attempt:
            idx = np.flatnonzero(pending)
            result, ambiguous = _parity(triangles, origins[idx], _random_directions(rng, len(idx)))
            resolved = idx[~ambiguous]
            inside[resolved] = result[~ambiguous]
            pending[resolved] = False
            if ambiguous.any():
                grazed = idx[ambiguous]
                origins[grazed] += rng.normal(0.0, ORIGIN_JITTER, size=(len(grazed), 3))
                raise AmbiguousCrossingError(f"{len(grazed)} containment rays grazed an edge")
    return inside


def _proposal_batch(n: int) -> int:
    return int(min(max(4 * n, 256), 65_536))


def sample_points_in_mesh(envelope: TriMesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """
    ``n`` points uniform inside the envelope, by rejection from its bounding box.

    Raises RejectionBudgetError after more than 1e6 consecutive rejections.
    """
    if n < 0:
        raise ParameterRangeError("n", f"must be >= 0, got {n}")
    if n == 0:
        return np.zeros((0, 3))
    if not envelope.is_watertight():
        raise NonWatertightMeshError(envelope.open_edge_count())

    lo, hi = envelope.bounds()
    batch = _proposal_batch(n)
    accepted: list[np.ndarray] = []
    have = 0
    consecutive_rejections = 0
    while have < n:
        proposals = rng.uniform(lo, hi, size=(batch, 3))
        mask = points_inside(envelope, proposals, rng)
        hits = np.flatnonzero(mask)
        if len(hits) == 0:
            consecutive_rejections += batch
            if consecutive_rejections > REJECTION_BUDGET:
                raise RejectionBudgetError(
                    f"{consecutive_rejections} consecutive rejections; envelope looks degenerate"
                )
            continue
        # Rejections before the first hit continue the previous run; the run
        # after the last hit starts the next one.
        if consecutive_rejections + hits[0] > REJECTION_BUDGET:
            raise RejectionBudgetError(
                f"{consecutive_rejections + hits[0]} consecutive rejections; envelope looks degenerate"
            )
        consecutive_rejections = batch - 1 - hits[-1]
        take = proposals[hits[: n - have]]
        accepted.append(take)
        have += len(take)
    return np.concatenate(accepted, axis=0)


def sample_point_in_mesh(envelope: TriMesh, rng: np.random.Generator) -> np.ndarray:
    return sample_points_in_mesh(envelope, 1, rng)[0]


def estimate_volume_mc(envelope: TriMesh, n_samples: int, rng: np.random.Generator) -> float:
    """Bounding-box volume times the containment acceptance rate."""
    lo, hi = envelope.bounds()
    proposals = rng.uniform(lo, hi, size=(n_samples, 3))
    rate = float(np.count_nonzero(points_inside(envelope, proposals, rng))) / n_samples
    return float(np.prod(hi - lo)) * rate


def fill(envelope: TriMesh, params: FoliageParams, rng: np.random.Generator) -> ScattererSoup:
    """
    Q = floor(rho * V_target) leaves with vertices s_ij = c_i + R_i p_j.

    Centroids are drawn first, rotations second, from the same stream.
    """
    start_ts = time.perf_counter()
    q = params.triangle_count
    if q == 0:
        return ScattererSoup.empty()

    proto = triangle_prototype(params.area)
    centroids = sample_points_in_mesh(envelope, q, rng)
    rotations = random_rotations(rng, q)
    corners = centroids[:, None, :] + np.einsum("qij,kj->qki", rotations, proto.local_vertices)

    mesh = TriMesh(corners.reshape(-1, 3), np.arange(3 * q, dtype=np.int64).reshape(q, 3))
    logger.debug(
        "soup filled",
        extra={"triangles": q, "elapsed_ms": int((time.perf_counter() - start_ts) * 1000)},
    )
    return ScattererSoup(mesh=mesh, centroids=centroids)
