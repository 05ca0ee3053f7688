"""Numeric containers for meshes and scatterer soups."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from app.core.errors import MeshError

__all__ = ["TriMesh", "TrianglePrototype", "ScattererSoup", "MIN_FACE_AREA"]

MIN_FACE_AREA = 1e-12


@dataclass(frozen=True)
class TriMesh:
    """Indexed triangle mesh; vertices in meters, faces as vertex-index triples."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self) -> None:
        vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "faces", faces)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """(F, 3, 3) corner coordinates."""
        return self.vertices[self.faces]

    def face_areas(self) -> np.ndarray:
        tri = self.triangles()
        if len(tri) == 0:
            return np.zeros(0)
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def edge_counts(self) -> Counter:
        counts: Counter = Counter()
        for a, b, c in self.faces.tolist():
            for u, v in ((a, b), (b, c), (c, a)):
                counts[(u, v) if u < v else (v, u)] += 1
        return counts

    def open_edge_count(self) -> int:
        return sum(1 for n in self.edge_counts().values() if n != 2)

    def is_watertight(self) -> bool:
        return self.n_faces > 0 and self.open_edge_count() == 0

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edge_counts()) + self.n_faces

    def validate(self) -> None:
        """Index range and non-degeneracy checks."""
        if self.n_faces == 0:
            return
        if self.faces.min() < 0 or self.faces.max() >= self.n_vertices:
            raise MeshError("face index out of range")
        f = self.faces
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise MeshError("face with repeated vertex")
        small = int(np.count_nonzero(self.face_areas() <= MIN_FACE_AREA))
        if small:
            raise MeshError(f"{small} faces with area <= {MIN_FACE_AREA} m^2")

    def translated(self, offset) -> "TriMesh":
        return TriMesh(self.vertices + np.asarray(offset, dtype=np.float64), self.faces.copy())

    def transformed(self, matrix) -> "TriMesh":
        return TriMesh(self.vertices @ np.asarray(matrix, dtype=np.float64).T, self.faces.copy())

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)


@dataclass(frozen=True)
class TrianglePrototype:
    """Equilateral triangle centered at the local origin in the z=0 plane."""

    area: float
    side: float
    local_vertices: np.ndarray


@dataclass(frozen=True)
class ScattererSoup:
    """Q free triangles (three private vertices each) plus their placement centroids."""

    mesh: TriMesh
    centroids: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    @property
    def count(self) -> int:
        return self.mesh.n_faces

    @classmethod
    def empty(cls) -> "ScattererSoup":
        return cls(TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)), np.zeros((0, 3)))

    def translated(self, offset) -> "ScattererSoup":
        offset = np.asarray(offset, dtype=np.float64)
        return ScattererSoup(self.mesh.translated(offset), self.centroids + offset)
