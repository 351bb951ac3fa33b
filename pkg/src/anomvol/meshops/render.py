from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import CameraIntrinsics, GeometryError, RigidTransform, pixel_rays, unproject_pixels
from .bvh import Bvh, RayHits
from .mesh import MeshError, TriangleMesh

SENSOR_RESOLUTION = (4096, 3000)
DOWNSAMPLED_SIZE = 1540


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel camera-z depth in mm; 0 marks pixels without a surface."""

    depth: np.ndarray

    def __post_init__(self):
        d = np.array(self.depth, dtype=np.float64)
        if d.ndim != 2:
            raise MeshError("depth map must be 2-D")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise MeshError("depths must be finite and non-negative")
        d.setflags(write=False)
        object.__setattr__(self, "depth", d)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0


class Sphere:
    """Analytic sphere, traceable like a BVH."""

    def __init__(self, center, radius: float):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)

    def intersect(self, origins, dirs) -> RayHits:
        dirs = np.asarray(dirs, dtype=np.float64)
        oc = np.asarray(origins, dtype=np.float64) - self.center
        a = np.sum(dirs * dirs, axis=-1)
        b = np.sum(oc * dirs, axis=-1)
        c = np.sum(oc * oc, axis=-1) - self.radius**2
        disc = b * b - a * c
        with np.errstate(invalid="ignore"):
            sq = np.sqrt(disc)
            # numerically stable roots of a t^2 + 2 b t + c = 0
            q = -(b + np.copysign(sq, b))
            t1, t2 = q / a, c / q
        lo, hi = np.minimum(t1, t2), np.maximum(t1, t2)
        t = np.where(lo > 0, lo, np.where(hi > 0, hi, np.inf))
        t = np.where(disc >= 0, t, np.inf)
        tri = np.where(np.isfinite(t), 0, -1)
        zeros = np.zeros_like(t)
        return RayHits(t, tri, zeros, zeros)


@dataclass
class ViewTrace:
    """Per-pixel ray cast result for one view."""

    depth: DepthMap
    hits: RayHits
    dirs_mesh: np.ndarray
    origin_mesh: np.ndarray


def _tracer(scene, bvh=None):
    if bvh is not None:
        return bvh
    if isinstance(scene, TriangleMesh):
        return Bvh(scene)
    if hasattr(scene, "intersect"):
        return scene
    raise MeshError(f"cannot trace {type(scene).__name__}")


def trace_view(scene, intr: CameraIntrinsics, cam_pose: RigidTransform, bvh=None, rows=None) -> ViewTrace:
    """Cast one ray through every pixel centre, honouring lens distortion.

    ``cam_pose`` maps mesh coordinates to camera coordinates. Rays whose
    pixel cannot be undistorted are treated as misses.
    """
    tracer = _tracer(scene, bvh)
    H, W = intr.height, intr.width
    rows = np.arange(H) if rows is None else np.asarray(rows)
    uu, vv = np.meshgrid(np.arange(W, dtype=np.float64), rows.astype(np.float64))
    dirs_cam = pixel_rays(intr, np.stack([uu, vv], axis=-1), strict=False)
    R, T = cam_pose.rotation, cam_pose.translation
    dirs_mesh = dirs_cam @ R  # R^T d for row vectors
    origin = -R.T @ T
    hits = tracer.intersect(origin, dirs_mesh)
    depth = np.where(hits.hit, hits.t, 0.0)
    return ViewTrace(DepthMap(depth), hits, dirs_mesh, origin)


def render_depth(scene, intr: CameraIntrinsics, cam_pose: RigidTransform, bvh=None) -> DepthMap:
    """Depth (camera z, mm) of the nearest surface per pixel; 0 where nothing is hit.

    Rays carry unit camera-z, so the hit parameter is the depth itself.
    """
    return trace_view(scene, intr, cam_pose, bvh).depth


def depth_to_pointcloud(d: DepthMap, intr: CameraIntrinsics) -> np.ndarray:
    """Organized ``(H, W, 3)`` camera-frame cloud; invalid pixels are all-zero."""
    if (d.width, d.height) != (intr.width, intr.height):
        raise GeometryError(
            f"depth map is {d.width}x{d.height} but intrinsics are {intr.width}x{intr.height}")
    out = np.zeros((d.height, d.width, 3))
    rows, cols = np.nonzero(d.valid)
    if len(rows):
        uv = np.stack([cols, rows], axis=1).astype(np.float64)
        out[rows, cols] = unproject_pixels(intr, uv, d.depth[rows, cols])
    return out


def valid_points(cloud: np.ndarray) -> np.ndarray:
    """Unorganized ``(N, 3)`` points of an organized cloud."""
    flat = cloud.reshape(-1, 3)
    return flat[np.any(flat != 0, axis=1)]


# -- pad and downsample -------------------------------------------------------------


def _square_padding(width: int, height: int):
    side = max(width, height)
    left = (side - width) // 2
    top = (side - height) // 2
    return side, left, top


def _pad(a, side, left, top):
    out = np.zeros((side, side) + a.shape[2:], dtype=a.dtype)
    out[top:top + a.shape[0], left:left + a.shape[1]] = a
    return out


def _area_resample(a, n_out: int, axis: int) -> np.ndarray:
    """Box-filter ``a`` along ``axis`` to ``n_out`` cells by reading its running sum at fractional edges."""
    a = np.moveaxis(a, axis, 0)
    n_in = a.shape[0]
    cs = np.concatenate([np.zeros((1,) + a.shape[1:]), np.cumsum(a, axis=0)])
    edges = np.arange(n_out + 1) * (n_in / n_out)
    idx = np.minimum(np.floor(edges).astype(np.int64), n_in - 1)
    frac = (edges - idx).reshape((-1,) + (1,) * (a.ndim - 1))
    integral = cs[idx] + frac * (cs[idx + 1] - cs[idx])
    return np.moveaxis(np.diff(integral, axis=0) * (n_out / n_in), 0, axis)


def padded_intrinsics(intr: CameraIntrinsics, size: int = DOWNSAMPLED_SIZE) -> CameraIntrinsics:
    side, left, top = _square_padding(intr.width, intr.height)
    return intr.scaled(size / side, size, size, offset=(left, top))


def pad_and_downsample_image(img, size: int = DOWNSAMPLED_SIZE) -> np.ndarray:
    """Zero-pad to a centred square, then area-average to ``size x size``."""
    img = np.asarray(img, dtype=np.float64)
    side, left, top = _square_padding(img.shape[1], img.shape[0])
    sq = _pad(img, side, left, top)
    return _area_resample(_area_resample(sq, size, 0), size, 1)


def pad_and_downsample_depth(d: DepthMap, size: int = DOWNSAMPLED_SIZE) -> DepthMap:
    """Zero-pad to a centred square, then min-pool valid depths per output cell.

    An input pixel belongs to the output cell containing its centre, so
    foreground and background depths are never averaged together.
    """
    side, left, top = _square_padding(d.width, d.height)
    sq = _pad(d.depth, side, left, top)
    cell = np.floor((np.arange(side) + 0.5) * size / side).astype(np.int64)
    vals = np.where(sq > 0, sq, np.inf)
    starts = np.flatnonzero(np.r_[True, np.diff(cell) > 0])
    out = np.minimum.reduceat(np.minimum.reduceat(vals, starts, axis=0), starts, axis=1)
    if out.shape != (size, size):
        raise MeshError("downsampling target larger than the padded input")
    return DepthMap(np.where(np.isfinite(out), out, 0.0))
