"""Lift per-view 2D anomaly maps into a voxel grid and max-pool them into an anomaly volume."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, FrameChain, GeometryError, unproject_pixels
from .meshops import DepthMap
from .voxelgrid import AnomalyVolume, GridSpec, SpecMismatchError, points_to_voxels


class FusionError(ValueError):
    pass


class EmptyVolumeWarning(UserWarning):
    pass


def as_anomaly_map(scores) -> np.ndarray:
    a = np.asarray(scores, dtype=np.float64)
    if a.ndim != 2:
        raise FusionError("anomaly map must be 2-D")
    if not np.all(np.isfinite(a)):
        raise FusionError("anomaly map has non-finite scores")
    return a


@dataclass
class ViewProjection:
    """Sparse ``(voxel, score)`` entries produced by one view."""

    spec: GridSpec
    voxels: np.ndarray  # (N, 3) int64
    scores: np.ndarray  # (N,)
    n_valid: int = 0
    n_out_of_bounds: int = 0
    view: int | None = None
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.scores)

    def flat_index(self) -> np.ndarray:
        return np.ravel_multi_index(self.voxels.T, self.spec.dims) if len(self) else np.zeros(0, np.int64)

    def diagnostics(self) -> dict:
        return {"view": self.view, "valid_pixels": self.n_valid, "projected": len(self),
                "out_of_bounds": self.n_out_of_bounds}


def project_view(amap, depth: DepthMap, intr: CameraIntrinsics, chain: FrameChain, view: int,
                 spec: GridSpec) -> ViewProjection:
    """One entry per valid-depth pixel whose lifted point lands inside the grid.

    The pixel is unprojected in the camera frame and carried to the mesh
    frame by ``chain.camera_to_mesh(view)``; out-of-grid pixels are counted,
    never clamped.
    """
    a = as_anomaly_map(amap)
    if a.shape != depth.depth.shape:
        raise FusionError(f"anomaly map {a.shape} and depth map {depth.depth.shape} differ in resolution")
    if (depth.width, depth.height) != (intr.width, intr.height):
        raise FusionError("depth map resolution does not match the intrinsics")
    to_mesh = chain.camera_to_mesh(view)
    rows, cols = np.nonzero(depth.valid)
    if len(rows) == 0:
        return ViewProjection(spec, np.zeros((0, 3), np.int64), np.zeros(0), 0, 0, view)
    uv = np.stack([cols, rows], axis=1).astype(np.float64)
    pts = to_mesh.apply(unproject_pixels(intr, uv, depth.depth[rows, cols]))
    idx, inside = points_to_voxels(spec, pts)
    return ViewProjection(spec, idx[inside], a[rows, cols][inside], len(rows), int((~inside).sum()), view)


def fuse_views(projections, spec: GridSpec) -> AnomalyVolume:
    """Voxel-wise maximum over every projected score; voxels without entries stay 0 and untouched."""
    best = np.full(spec.n_voxels, -np.inf)
    for p in projections:
        if p.spec != spec:
            raise SpecMismatchError("projection was made for a different grid")
        if len(p):
            np.maximum.at(best, p.flat_index(), p.scores)
    touched = np.isfinite(best)
    score = np.where(touched, best, 0.0)
    return AnomalyVolume(spec, score.reshape(spec.dims), touched.reshape(spec.dims))


def fuse_volumes(volumes) -> AnomalyVolume:
    """Max-merge partial volumes over the same grid; same result as fusing all their entries at once."""
    volumes = list(volumes)
    if not volumes:
        raise FusionError("nothing to merge")
    spec = volumes[0].spec
    best = np.full(spec.dims, -np.inf)
    for v in volumes:
        if v.spec != spec:
            raise SpecMismatchError("partial volumes use different grids")
        best = np.where(v.touched, np.maximum(best, v.score), best)
    touched = np.isfinite(best)
    return AnomalyVolume(spec, np.where(touched, best, 0.0), touched)


def global_score(vol: AnomalyVolume) -> float:
    """Maximum over touched voxels. An empty volume scores 0 and raises ``EmptyVolumeWarning``."""
    if not vol.touched.any():
        warnings.warn("anomaly volume has no touched voxels; global score set to 0",
                      EmptyVolumeWarning, stacklevel=2)
        return 0.0
    return float(vol.score[vol.touched].max())


def fuse_instance(maps, depths, intr: CameraIntrinsics, chain: FrameChain, spec: GridSpec):
    """Project and fuse all views of one instance; returns ``(volume, per-view diagnostics)``."""
    if len(maps) != len(depths):
        raise FusionError("need one depth map per anomaly map")
    if len(maps) > chain.n_views:
        raise GeometryError(f"{len(maps)} maps but only {chain.n_views} poses")
    projs = [project_view(m, d, intr, chain, i, spec) for i, (m, d) in enumerate(zip(maps, depths))]
    return fuse_views(projs, spec), [p.diagnostics() for p in projs]
