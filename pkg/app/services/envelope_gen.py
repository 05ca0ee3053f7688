"""
Crown envelope generation.

Pipeline: unit icosphere -> Gaussian vertex perturbation -> uniform rescale to
the target volume. The perturbation is applied before scaling, so ``sigma`` is
expressed in unit-sphere units and large crowns get proportionally larger dents.
"""

from __future__ import annotations

import logging
import time

import numpy as np
import trimesh.creation
import trimesh.remesh

from app.core.errors import DegenerateVolumeError, NonWatertightMeshError, ParameterRangeError
from app.schemas.foliage_schema import MAX_SUBDIVISIONS, FoliageParams
from app.schemas.geometry import TriMesh

logger = logging.getLogger(__name__)

__all__ = [
    "build_icosphere",
    "mesh_volume",
    "volume_centroid",
    "perturb",
    "scale_to_volume",
    "generate_envelope",
    "count_inverted_faces",
    "envelope_diagnostics",
]

MIN_VOLUME = 1e-12


def _signed_tetra_volumes(mesh: TriMesh, origin: np.ndarray) -> np.ndarray:
    tri = mesh.triangles() - origin
    return np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])) / 6.0


def _orient_outward(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    mesh = TriMesh(vertices, faces)
    if _signed_tetra_volumes(mesh, np.zeros(3)).sum() < 0:
        return faces[:, ::-1].copy()
    return faces


def build_icosphere(n_subdiv: int) -> TriMesh:
    """
    Unit icosphere with 10*4^n + 2 vertices and 20*4^n faces.

    Each level splits every face at its edge midpoints (shared midpoints are
    de-duplicated per edge, which keeps the surface watertight) and projects
    the vertices back onto the unit sphere.
    """
    if not isinstance(n_subdiv, (int, np.integer)) or not 0 <= n_subdiv <= MAX_SUBDIVISIONS:
        raise ParameterRangeError("n_subdiv", f"must be an integer in [0, {MAX_SUBDIVISIONS}], got {n_subdiv!r}")

    base = trimesh.creation.icosahedron()
    vertices = np.asarray(base.vertices, dtype=np.float64)
    faces = np.asarray(base.faces, dtype=np.int64)
    vertices = vertices / np.linalg.norm(vertices, axis=1, keepdims=True)

    for _ in range(int(n_subdiv)):
        vertices, faces = trimesh.remesh.subdivide(vertices, faces)[:2]
        vertices = vertices / np.linalg.norm(vertices, axis=1, keepdims=True)

    faces = _orient_outward(vertices, np.asarray(faces, dtype=np.int64))
    return TriMesh(vertices, faces)


def mesh_volume(mesh: TriMesh) -> float:
    """
    Enclosed volume by signed tetrahedra.

    Tetrahedra are taken against the vertex mean rather than the world origin;
    the sum is the same for a closed surface but stays well conditioned for
    meshes far from the origin.
    """
    open_edges = mesh.open_edge_count() if mesh.n_faces else 0
    if mesh.n_faces == 0 or open_edges:
        raise NonWatertightMeshError(open_edges)
    return float(abs(_signed_tetra_volumes(mesh, mesh.centroid()).sum()))


def volume_centroid(mesh: TriMesh) -> np.ndarray:
    """Center of mass of the enclosed solid (uniform density)."""
    origin = mesh.centroid()
    volumes = _signed_tetra_volumes(mesh, origin)
    total = volumes.sum()
    if abs(total) <= MIN_VOLUME:
        raise DegenerateVolumeError(f"enclosed volume {abs(total):.3e} m^3 is degenerate")
    tet_centroids = (mesh.triangles() - origin).sum(axis=1) / 4.0
    return origin + (volumes[:, None] * tet_centroids).sum(axis=0) / total


def perturb(mesh: TriMesh, sigma: float, rng: np.random.Generator) -> TriMesh:
    """Displace every vertex by an independent N(0, sigma^2 I) draw; faces unchanged."""
    if sigma < 0:
        raise ParameterRangeError("sigma", f"must be >= 0, got {sigma}")
    if sigma == 0:
        return TriMesh(mesh.vertices.copy(), mesh.faces.copy())
    delta = rng.normal(0.0, sigma, size=mesh.vertices.shape)
    return TriMesh(mesh.vertices + delta, mesh.faces.copy())


def scale_to_volume(mesh: TriMesh, v_target: float) -> tuple[TriMesh, float]:
    """Scale all vertices about the origin by s = (v_target / V0)^(1/3)."""
    if v_target <= 0:
        raise ParameterRangeError("v_target", f"must be > 0, got {v_target}")
    v0 = mesh_volume(mesh)
    if v0 <= MIN_VOLUME:
        raise DegenerateVolumeError(f"input volume {v0:.3e} m^3 cannot be rescaled")
    scale = float(np.cbrt(v_target / v0))
    if scale == 1.0:
        return TriMesh(mesh.vertices.copy(), mesh.faces.copy()), scale
    return TriMesh(mesh.vertices * scale, mesh.faces.copy()), scale


def count_inverted_faces(mesh: TriMesh) -> int:
    """
    Faces whose outward normal points back toward the volume centroid.

    Zero for any star-shaped surface; a positive count means the perturbation
    folded the surface and it may self-intersect.
    """
    tri = mesh.triangles()
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    outward = tri.mean(axis=1) - mesh.centroid()
    return int(np.count_nonzero(np.einsum("ij,ij->i", normals, outward) < 0))


def envelope_diagnostics(mesh: TriMesh) -> dict:
    return {
        "vertices": mesh.n_vertices,
        "faces": mesh.n_faces,
        "watertight": mesh.is_watertight(),
        "euler_characteristic": mesh.euler_characteristic(),
        "volume_m3": mesh_volume(mesh),
        "inverted_faces": count_inverted_faces(mesh),
    }


def generate_envelope(params: FoliageParams, rng: np.random.Generator) -> TriMesh:
    start_ts = time.perf_counter()
    sphere = build_icosphere(params.n_subdiv)
    perturbed = perturb(sphere, params.sigma, rng)
    envelope, scale = scale_to_volume(perturbed, params.v_target)

    inverted = count_inverted_faces(envelope)
    if inverted:
        logger.warning(
            "envelope surface folded; accepting as-is",
            extra={"inverted_faces": inverted, "sigma": params.sigma},
        )
    logger.debug(
        "envelope generated",
        extra={
            "faces": envelope.n_faces,
            "scale": scale,
            "elapsed_ms": int((time.perf_counter() - start_ts) * 1000),
        },
    )
    return envelope
