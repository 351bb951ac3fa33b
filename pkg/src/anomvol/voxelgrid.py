"""Voxel grids: placement, point discretization and triangle-mesh voxelization."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .meshops.mesh import TriangleMesh

DEFAULT_VOXEL_SIZE = 2.0


class VoxelGridError(ValueError):
    pass


class SpecMismatchError(VoxelGridError):
    pass


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Axis-aligned grid: voxel ``(i, j, k)`` spans ``origin + [i, i+1) * voxel_size`` per axis."""

    origin: np.ndarray
    voxel_size: float
    dims: tuple

    def __post_init__(self):
        o = np.array(self.origin, dtype=np.float64).reshape(3)
        o.setflags(write=False)
        dims = tuple(int(n) for n in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise VoxelGridError(f"dims must be three counts >= 1, got {self.dims}")
        if not (float(self.voxel_size) > 0 and math.isfinite(self.voxel_size)):
            raise VoxelGridError("voxel_size must be positive")
        if not np.all(np.isfinite(o)):
            raise VoxelGridError("origin must be finite")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        object.__setattr__(self, "dims", dims)

    def __eq__(self, other):
        if not isinstance(other, GridSpec):
            return NotImplemented
        return (self.dims == other.dims and self.voxel_size == other.voxel_size
                and np.array_equal(self.origin, other.origin))

    def __hash__(self):
        return hash((tuple(self.origin), self.voxel_size, self.dims))

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    @property
    def upper(self) -> np.ndarray:
        return self.origin + np.array(self.dims) * self.voxel_size

    def voxel_centers(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=np.float64) + 0.5) * self.voxel_size

    def refined(self, factor: int = 2) -> "GridSpec":
        """Same box, ``factor`` times finer."""
        return GridSpec(self.origin, self.voxel_size / factor, tuple(n * factor for n in self.dims))

    def to_dict(self) -> dict:
        return {"origin": [float(x) for x in self.origin], "voxel_size": self.voxel_size,
                "dims": list(self.dims)}

    @classmethod
    def from_dict(cls, d) -> "GridSpec":
        return cls(d["origin"], d["voxel_size"], d["dims"])


def require_same_spec(a: GridSpec, b: GridSpec):
    if a != b:
        raise SpecMismatchError(f"grid specs differ: {a.to_dict()} vs {b.to_dict()}")


def grid_from_mesh(mesh: TriangleMesh, voxel_size: float = DEFAULT_VOXEL_SIZE, padding: int = 1) -> GridSpec:
    """Smallest grid whose box holds the mesh AABB grown by ``padding`` voxels on every side."""
    if mesh.is_empty:
        raise VoxelGridError("cannot place a grid around an empty mesh")
    if not voxel_size > 0:
        raise VoxelGridError("voxel_size must be positive")
    if padding < 0:
        raise VoxelGridError("padding must be non-negative")
    lo, hi = mesh.bounds()
    origin = lo - padding * voxel_size
    dims = np.maximum(1, np.ceil((hi - lo) / voxel_size + 2 * padding)).astype(np.int64)
    # guard against rounding leaving the far face just short of the padded bound
    while True:
        short = origin + dims * voxel_size < hi + padding * voxel_size
        if not short.any():
            break
        dims += short
    return GridSpec(origin, voxel_size, tuple(dims))


def points_to_voxels(spec: GridSpec, points):
    """Vectorized discretization: ``(idx (N, 3), inside (N,))``. Outside rows are not clamped."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    f = np.floor((p - spec.origin) / spec.voxel_size)
    inside = np.all((f >= 0) & (f < np.array(spec.dims)), axis=1)
    idx = np.where(np.isfinite(f), f, -1).astype(np.int64)
    return idx, inside


def point_to_voxel(spec: GridSpec, p):
    """Voxel index of ``p`` as a tuple, or ``None`` when it falls outside the grid."""
    idx, inside = points_to_voxels(spec, p)
    return tuple(int(i) for i in idx[0]) if inside[0] else None


@dataclass(frozen=True, eq=False)
class GroundTruthVolume:
    """Occupied surface voxels with per-voxel defect blob IDs (0 = nominal)."""

    spec: GridSpec
    occupancy: np.ndarray
    label: np.ndarray

    def __post_init__(self):
        occ = np.array(self.occupancy, dtype=bool)
        lab = np.array(self.label)
        if occ.shape != self.spec.dims or lab.shape != self.spec.dims:
            raise VoxelGridError("volume arrays must match the grid dims")
        if np.any(lab < 0) or np.any(lab > np.iinfo(np.uint16).max):
            raise VoxelGridError("labels must fit in 16 bits")
        lab = lab.astype(np.uint16)
        if np.any((lab != 0) & ~occ):
            raise VoxelGridError("labelled voxels must be occupied")
        occ.setflags(write=False)
        lab.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "label", lab)

    @property
    def blob_ids(self) -> np.ndarray:
        ids = np.unique(self.label)
        return ids[ids != 0]

    @property
    def n_blobs(self) -> int:
        return len(self.blob_ids)

    def blob_sizes(self) -> dict:
        ids, counts = np.unique(self.label[self.label != 0], return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}

    @property
    def nominal_mask(self) -> np.ndarray:
        return self.occupancy & (self.label == 0)

    def relabel_contiguous(self) -> "GroundTruthVolume":
        """Map blob IDs onto ``1..N`` preserving their order."""
        lut = np.zeros(int(self.label.max()) + 1, dtype=np.uint16)
        lut[self.blob_ids] = np.arange(1, self.n_blobs + 1)
        return GroundTruthVolume(self.spec, self.occupancy, lut[self.label])


@dataclass(frozen=True, eq=False)
class AnomalyVolume:
    """Per-voxel anomaly scores; voxels that received no projection are untouched and hold 0."""

    spec: GridSpec
    score: np.ndarray
    touched: np.ndarray

    def __post_init__(self):
        s = np.array(self.score, dtype=np.float64)
        t = np.array(self.touched, dtype=bool)
        if s.shape != self.spec.dims or t.shape != self.spec.dims:
            raise VoxelGridError("volume arrays must match the grid dims")
        if not np.all(np.isfinite(s)):
            raise VoxelGridError("scores must be finite")
        if np.any(s[~t] != 0):
            raise VoxelGridError("untouched voxels must hold the neutral score 0")
        s.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "score", s)
        object.__setattr__(self, "touched", t)

    @classmethod
    def empty(cls, spec: GridSpec) -> "AnomalyVolume":
        return cls(spec, np.zeros(spec.dims), np.zeros(spec.dims, dtype=bool))


# -- voxelization -------------------------------------------------------------------


@njit(cache=True, inline="always")
def _separated(axx, axy, axz, v0, v1, v2, h):
    p0 = axx * v0[0] + axy * v0[1] + axz * v0[2]
    p1 = axx * v1[0] + axy * v1[1] + axz * v1[2]
    p2 = axx * v2[0] + axy * v2[1] + axz * v2[2]
    r = h * (abs(axx) + abs(axy) + abs(axz))
    return min(p0, p1, p2) > r or max(p0, p1, p2) < -r


@njit(cache=True)
def _tri_box_overlap(tri, cx, cy, cz, h):
    """Separating-axis triangle/box test; touching counts as overlap."""
    v0 = np.empty(3)
    v1 = np.empty(3)
    v2 = np.empty(3)
    c = (cx, cy, cz)
    for a in range(3):
        v0[a] = tri[0, a] - c[a]
        v1[a] = tri[1, a] - c[a]
        v2[a] = tri[2, a] - c[a]
    for a in range(3):
        if min(v0[a], v1[a], v2[a]) > h or max(v0[a], v1[a], v2[a]) < -h:
            return False
    e = np.empty((3, 3))
    for a in range(3):
        e[0, a] = v1[a] - v0[a]
        e[1, a] = v2[a] - v1[a]
        e[2, a] = v0[a] - v2[a]
    for i in range(3):
        ex, ey, ez = e[i, 0], e[i, 1], e[i, 2]
        # edge x box-axis cross products
        if _separated(0.0, -ez, ey, v0, v1, v2, h):
            return False
        if _separated(ez, 0.0, -ex, v0, v1, v2, h):
            return False
        if _separated(-ey, ex, 0.0, v0, v1, v2, h):
            return False
    nx = e[0, 1] * e[1, 2] - e[0, 2] * e[1, 1]
    ny = e[0, 2] * e[1, 0] - e[0, 0] * e[1, 2]
    nz = e[0, 0] * e[1, 1] - e[0, 1] * e[1, 0]
    d = nx * v0[0] + ny * v0[1] + nz * v0[2]
    return abs(d) <= h * (abs(nx) + abs(ny) + abs(nz))


@njit(cache=True)
def _voxelize(tri_grid, tri_label, dims, occ, lab):
    NONE = 1 << 30
    for t in range(tri_grid.shape[0]):
        tri = tri_grid[t]
        lo = np.empty(3, np.int64)
        hi = np.empty(3, np.int64)
        for a in range(3):
            mn = min(tri[0, a], tri[1, a], tri[2, a])
            mx = max(tri[0, a], tri[1, a], tri[2, a])
            lo[a] = max(0, int(math.ceil(mn)) - 1)
            hi[a] = min(dims[a] - 1, int(math.floor(mx)))
        L = tri_label[t]
        for i in range(lo[0], hi[0] + 1):
            for j in range(lo[1], hi[1] + 1):
                for k in range(lo[2], hi[2] + 1):
                    if _tri_box_overlap(tri, i + 0.5, j + 0.5, k + 0.5, 0.5):
                        occ[i, j, k] = True
                        if L != 0 and L < lab[i, j, k]:
                            lab[i, j, k] = L
    for i in range(dims[0]):
        for j in range(dims[1]):
            for k in range(dims[2]):
                if lab[i, j, k] == NONE:
                    lab[i, j, k] = 0


def to_grid_units(spec: GridSpec, points) -> np.ndarray:
    """Coordinates in which voxel ``(i, j, k)`` is the unit box at ``(i, j, k)``."""
    return (np.asarray(points, dtype=np.float64) - spec.origin) / spec.voxel_size


def voxelize_labeled_mesh(mesh: TriangleMesh, spec: GridSpec) -> GroundTruthVolume:
    """Occupancy of every voxel touched by a triangle; label = smallest defect ID among them.

    Triangles take the smallest nonzero label of their vertices. Every
    triangle must lie inside the grid box (faces included).
    """
    dims = np.array(spec.dims, dtype=np.int64)
    occ = np.zeros(spec.dims, dtype=np.bool_)
    lab = np.full(spec.dims, 1 << 30, dtype=np.int64)
    if mesh.n_triangles:
        tri = to_grid_units(spec, mesh.triangle_vertices)
        bad = np.flatnonzero(np.any(tri.min(axis=1) < 0, axis=1) | np.any(tri.max(axis=1) > dims, axis=1))
        if len(bad):
            shown = ", ".join(str(i) for i in bad[:20])
            more = f" (+{len(bad) - 20} more)" if len(bad) > 20 else ""
            raise VoxelGridError(f"{len(bad)} triangles outside the grid: {shown}{more}")
        _voxelize(np.ascontiguousarray(tri), mesh.triangle_labels().astype(np.int64), dims, occ, lab)
    else:
        lab[:] = 0
    return GroundTruthVolume(spec, occ, lab.astype(np.uint16))


def max_pool(a, factor: int = 2) -> np.ndarray:
    X, Y, Z = a.shape
    if X % factor or Y % factor or Z % factor:
        raise VoxelGridError("dims must be divisible by the pooling factor")
    return a.reshape(X // factor, factor, Y // factor, factor, Z // factor, factor).max(axis=(1, 3, 5))
