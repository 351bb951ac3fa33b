from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


class MeshError(ValueError):
    pass


def _readonly(a, dtype):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle mesh in millimetres.

    ``labels`` holds a per-vertex defect ID (0 = nominal) and ``albedo`` an
    optional per-vertex reflectance used by the synthetic renderer.
    Zero-area triangles are dropped at construction.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    labels: np.ndarray | None = None
    albedo: np.ndarray | None = None

    def __post_init__(self):
        V = _readonly(np.reshape(self.vertices, (-1, 3)), np.float64)
        F = np.array(np.reshape(self.triangles, (-1, 3)), dtype=np.int64)
        if len(F) and (F.min() < 0 or F.max() >= len(V)):
            raise MeshError("triangle index out of range")
        if not np.all(np.isfinite(V)):
            raise MeshError("non-finite vertex coordinates")
        if len(F):
            e1 = V[F[:, 1]] - V[F[:, 0]]
            e2 = V[F[:, 2]] - V[F[:, 0]]
            F = F[np.any(np.cross(e1, e2) != 0, axis=1)]
        F.setflags(write=False)
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "triangles", F)
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != (len(V),):
                raise MeshError("labels must have one entry per vertex")
            if np.any(lab < 0) or np.any(lab > np.iinfo(np.uint16).max):
                raise MeshError("labels must fit in 16 bits")
            object.__setattr__(self, "labels", _readonly(lab, np.uint16))
        if self.albedo is not None:
            alb = np.asarray(self.albedo, dtype=np.float64)
            if alb.shape != (len(V),):
                raise MeshError("albedo must have one entry per vertex")
            object.__setattr__(self, "albedo", _readonly(alb, np.float64))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def is_empty(self) -> bool:
        return self.n_triangles == 0

    @property
    def triangle_vertices(self) -> np.ndarray:
        """``(F, 3, 3)`` corner coordinates."""
        return self.vertices[self.triangles]

    def bounds(self):
        if self.n_vertices == 0:
            raise MeshError("empty mesh has no bounds")
        used = self.vertices[np.unique(self.triangles)] if self.n_triangles else self.vertices
        return used.min(axis=0), used.max(axis=0)

    def face_normals(self) -> np.ndarray:
        t = self.triangle_vertices
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted vertex normals."""
        t = self.triangle_vertices
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        acc = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(acc, self.triangles[:, k], n)
        norm = np.linalg.norm(acc, axis=1, keepdims=True)
        return np.divide(acc, norm, out=np.zeros_like(acc), where=norm > 0)

    def triangle_labels(self) -> np.ndarray:
        """Per-triangle defect ID: the smallest nonzero label among its vertices, else 0."""
        if self.labels is None:
            return np.zeros(self.n_triangles, dtype=np.uint16)
        lab = self.labels[self.triangles].astype(np.int64)
        lab = np.where(lab == 0, np.iinfo(np.int64).max, lab).min(axis=1)
        return np.where(lab == np.iinfo(np.int64).max, 0, lab).astype(np.uint16)

    def with_labels(self, labels) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.triangles, labels, self.albedo)

    def submesh(self, keep_vertices) -> "TriangleMesh":
        """Keep the given vertices (bool mask), drop triangles touching removed ones, compact indices."""
        keep = np.asarray(keep_vertices, dtype=bool)
        remap = np.full(self.n_vertices, -1, dtype=np.int64)
        remap[keep] = np.arange(int(keep.sum()))
        tris = self.triangles[np.all(keep[self.triangles], axis=1)]
        return TriangleMesh(
            self.vertices[keep],
            remap[tris],
            None if self.labels is None else self.labels[keep],
            None if self.albedo is None else self.albedo[keep],
        )


@dataclass(frozen=True, eq=False)
class Plane:
    """``{p : normal . p + d = 0}`` with unit normal."""

    normal: np.ndarray
    d: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        norm = np.linalg.norm(n)
        if n.shape != (3,) or not norm > 0:
            raise MeshError("plane normal must be a nonzero 3-vector")
        object.__setattr__(self, "normal", _readonly(n / norm, np.float64))
        object.__setattr__(self, "d", float(self.d) / norm)

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.normal + self.d

    def flipped(self) -> "Plane":
        return Plane(-self.normal, -self.d)

    def shifted(self, offset: float) -> "Plane":
        """Plane moved by ``offset`` mm along its normal."""
        return Plane(self.normal, self.d - offset)


@dataclass
class BackgroundRemoval:
    mesh: TriangleMesh
    kept_vertices: np.ndarray
    warning: str | None = None


def remove_background(mesh: TriangleMesh, plane: Plane, alpha: float) -> BackgroundRemoval:
    """Drop everything on or below ``plane`` shifted by ``alpha`` mm along its normal.

    Positive ``alpha`` moves the cut toward the object. Vertices are kept when
    strictly above the shifted plane; triangles referencing a removed vertex
    are dropped and indices compacted.
    """
    keep = plane.shifted(alpha).signed_distance(mesh.vertices) > 0
    out = mesh.submesh(keep)
    warning = None
    if out.is_empty:
        warning = "background removal left an empty mesh"
        warnings.warn(warning, stacklevel=2)
    return BackgroundRemoval(out, keep, warning)
