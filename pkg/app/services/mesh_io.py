"""OBJ / PLY exchange for envelopes and scatterer soups."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import trimesh

from app.core.errors import MeshError, ParameterRangeError
from app.schemas.geometry import ScattererSoup, TriMesh

logger = logging.getLogger(__name__)

__all__ = ["SUPPORTED_SUFFIXES", "to_trimesh", "export_mesh", "load_mesh", "export_scene_obj"]

SUPPORTED_SUFFIXES = (".obj", ".ply")


def to_trimesh(mesh: TriMesh) -> trimesh.Trimesh:
    # process=False keeps vertex order and the soup's unshared corners.
    return trimesh.Trimesh(vertices=mesh.vertices, faces=mesh.faces, process=False)


def _check_suffix(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix not in SUPPORTED_SUFFIXES:
        raise ParameterRangeError("path", f"unsupported mesh format '{suffix}' (use .obj or .ply)")
    return suffix


def export_mesh(mesh: TriMesh, path: str | Path) -> Path:
    path = Path(path)
    suffix = _check_suffix(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    to_trimesh(mesh).export(path, file_type=suffix[1:])
    logger.debug("mesh exported", extra={"path": str(path), "faces": mesh.n_faces})
    return path


def load_mesh(path: str | Path) -> TriMesh:
    path = Path(path)
    _check_suffix(path)
    loaded = trimesh.load(path, process=False, force="mesh")
    if len(loaded.faces) == 0:
        raise MeshError(f"{path} contains no triangles")
    return TriMesh(np.asarray(loaded.vertices), np.asarray(loaded.faces))


def export_scene_obj(envelope: TriMesh, soup: ScattererSoup, path: str | Path) -> Path:
    """Envelope and leaves in one OBJ, as objects ``envelope`` and ``foliage``."""
    path = Path(path)
    if path.suffix.lower() != ".obj":
        raise ParameterRangeError("path", "merged scene export writes .obj only")
    path.parent.mkdir(parents=True, exist_ok=True)
    geometry = {"envelope": to_trimesh(envelope)}
    if soup.count:
        geometry["foliage"] = to_trimesh(soup.mesh)
    trimesh.Scene(geometry).export(path, file_type="obj", include_normals=False, include_texture=False)
    logger.debug("scene exported", extra={"path": str(path), "faces": envelope.n_faces + soup.count})
    return path
