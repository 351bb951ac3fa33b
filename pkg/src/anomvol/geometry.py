"""Camera model, rigid transforms and the sensor/camera/mesh frame chain.

All lengths are millimetres. Pixel coordinates follow the convention that
integer values address pixel centres, so pixel ``(col, row)`` has centre
``(u, v) = (col, row)``.

Distortion uses the Brown-Conrady model with coefficients ordered
``[k1, k2, k3, p1, p2]``::

    r2 = x**2 + y**2
    radial = 1 + k1*r2 + k2*r2**2 + k3*r2**3
    xd = x*radial + 2*p1*x*y + p2*(r2 + 2*x**2)
    yd = y*radial + p1*(r2 + 2*y**2) + 2*p2*x*y
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROTATION_TOL = 1e-9
UNDISTORT_MAX_ITER = 50
UNDISTORT_TOL = 1e-10
UNDISTORT_MAX_RADIUS = 1.5


class GeometryError(ValueError):
    pass


class BehindCameraError(GeometryError):
    pass


class UndistortionError(GeometryError):
    pass


class UnknownViewError(GeometryError, KeyError):
    pass


def _frozen(a, shape=None):
    arr = np.array(a, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    distortion: np.ndarray = field(default_factory=lambda: np.zeros(5))

    def __post_init__(self):
        dist = _frozen(self.distortion)
        if dist.shape != (5,):
            raise GeometryError(f"distortion must have 5 coefficients, got shape {dist.shape}")
        object.__setattr__(self, "distortion", dist)
        for name in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise GeometryError("resolution must be at least 1x1")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point must lie inside the sensor")
        if not np.all(np.isfinite(dist)):
            raise GeometryError("distortion coefficients must be finite")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def has_distortion(self) -> bool:
        return bool(np.any(self.distortion != 0))

    def without_distortion(self) -> "CameraIntrinsics":
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)

    def scaled(self, scale: float, width: int, height: int, offset=(0.0, 0.0)) -> "CameraIntrinsics":
        """Intrinsics after shifting the image by ``offset`` pixels and resampling by ``scale``.

        Pixel centres map as ``u' = (u + offset_x + 0.5) * scale - 0.5``.
        """
        ox, oy = offset
        return CameraIntrinsics(
            self.fx * scale,
            self.fy * scale,
            (self.cx + ox + 0.5) * scale - 0.5,
            (self.cy + oy + 0.5) * scale - 0.5,
            width,
            height,
            self.distortion,
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "dist": [float(c) for c in self.distortion],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"], d.get("dist", [0.0] * 5))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``p -> rotation @ p + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = _frozen(self.rotation)
        T = _frozen(self.translation)
        if R.shape != (3, 3) or T.shape != (3,):
            raise GeometryError(f"bad transform shapes {R.shape}, {T.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(T))):
            raise GeometryError("transform must be finite")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ROTATION_TOL or abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
            raise GeometryError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", T)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, p) -> np.ndarray:
        """Transform a single point ``(3,)`` or an array of points ``(..., 3)``."""
        p = np.asarray(p, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )

    def to_dict(self) -> dict:
        return {
            "rotation": [float(x) for x in self.rotation.ravel()],
            "translation": [float(x) for x in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        return cls(np.reshape(d["rotation"], (3, 3)), d["translation"])


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform applying ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    return t.inverse()


def apply(t: RigidTransform, p) -> np.ndarray:
    return t.apply(p)


@dataclass(frozen=True)
class FrameChain:
    """Sensor-to-camera calibration plus one pose per view.

    ``view_to_ref[i]`` maps the sensor frame of view ``i`` to the sensor frame
    of view 0, which is also the mesh frame: ``p_ref = R_i @ p_view + T_i``.
    """

    sensor_to_camera: RigidTransform
    view_to_ref: tuple

    def __post_init__(self):
        views = tuple(self.view_to_ref)
        if not views:
            raise GeometryError("frame chain needs at least one view")
        if not views[0].allclose(RigidTransform.identity()):
            raise GeometryError("the reference view (index 0) must carry the identity pose")
        object.__setattr__(self, "view_to_ref", views)

    @property
    def n_views(self) -> int:
        return len(self.view_to_ref)

    def _view(self, view_index: int) -> RigidTransform:
        if not 0 <= view_index < len(self.view_to_ref):
            raise UnknownViewError(f"unknown view index {view_index}")
        return self.view_to_ref[view_index]

    def mesh_to_camera(self, view_index: int) -> RigidTransform:
        """Camera pose (mesh frame -> camera frame) of a view."""
        return compose(self.sensor_to_camera, invert(self._view(view_index)))

    def camera_to_mesh(self, view_index: int) -> RigidTransform:
        return compose(self._view(view_index), invert(self.sensor_to_camera))


def mesh_vertex_to_view_camera(chain: FrameChain, view_index: int, p_mesh) -> np.ndarray:
    view = chain._view(view_index)
    return chain.sensor_to_camera.apply(view.inverse().apply(p_mesh))


# -- distortion -------------------------------------------------------------


def distort(xy, dist) -> np.ndarray:
    """Apply Brown-Conrady distortion to normalized coordinates ``(..., 2)``."""
    xy = np.asarray(xy, dtype=np.float64)
    k1, k2, k3, p1, p2 = dist
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def distort_jacobian(xy, dist) -> np.ndarray:
    """d(xd, yd)/d(x, y), shape ``(..., 2, 2)``."""
    xy = np.asarray(xy, dtype=np.float64)
    k1, k2, k3, p1, p2 = dist
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    dradial = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2)  # d radial / d r2
    J = np.empty(xy.shape[:-1] + (2, 2))
    J[..., 0, 0] = radial + 2.0 * x * x * dradial + 2.0 * p1 * y + 6.0 * p2 * x
    J[..., 0, 1] = 2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y
    J[..., 1, 0] = 2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y
    J[..., 1, 1] = radial + 2.0 * y * y * dradial + 6.0 * p1 * y + 2.0 * p2 * x
    return J


def _undistort(flat, dist):
    """Solve ``distort(xy) = flat`` per row; returns ``(xy, ok)``."""
    k1, k2, k3, p1, p2 = dist
    ok = np.hypot(flat[:, 0], flat[:, 1]) <= UNDISTORT_MAX_RADIUS
    xy = flat.copy()
    for _ in range(UNDISTORT_MAX_ITER):
        x, y = xy[:, 0], xy[:, 1]
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        with np.errstate(all="ignore"):
            xy = np.stack([(flat[:, 0] - dx) / radial, (flat[:, 1] - dy) / radial], axis=1)
            res = np.abs(distort(xy, dist) - flat).max(axis=1)
        if np.all((res <= UNDISTORT_TOL) | ~ok):
            return xy, ok
    bad = ~(res <= UNDISTORT_TOL) & ok
    sub, target = xy[bad], flat[bad]
    sub = np.where(np.isfinite(sub), sub, target)
    with np.errstate(all="ignore"):
        for _ in range(20):
            r = distort(sub, dist) - target
            conv = np.abs(r).max(axis=1) <= UNDISTORT_TOL
            if np.all(conv):
                break
            J = distort_jacobian(sub, dist)
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            dx = (J[:, 1, 1] * r[:, 0] - J[:, 0, 1] * r[:, 1]) / det
            dy = (J[:, 0, 0] * r[:, 1] - J[:, 1, 0] * r[:, 0]) / det
            sub = np.where(conv[:, None], sub, sub - np.stack([dx, dy], axis=1))
        conv = np.abs(distort(sub, dist) - target).max(axis=1) <= UNDISTORT_TOL
    xy[bad] = sub
    ok[np.flatnonzero(bad)[~conv]] = False
    return xy, ok


def undistort(xy_d, dist, strict: bool = True) -> np.ndarray:
    """Invert :func:`distort`.

    Fixed-point iteration first; entries still above tolerance after the
    iteration budget get Newton steps. Inputs beyond the supported radius or
    without a solution to ``UNDISTORT_TOL`` raise :class:`UndistortionError`,
    or become NaN when ``strict`` is false.
    """
    xy_d = np.asarray(xy_d, dtype=np.float64)
    dist = np.asarray(dist, dtype=np.float64)
    if not np.any(dist):
        return xy_d.copy()
    xy, ok = _undistort(xy_d.reshape(-1, 2), dist)
    if not np.all(ok):
        if strict:
            raise UndistortionError("undistortion did not converge (normalized radius out of range)")
        xy[~ok] = np.nan
    return xy.reshape(xy_d.shape)


# -- projection ---------------------------------------------------------------


def project_points(intr: CameraIntrinsics, pts) -> np.ndarray:
    """Project camera-frame points ``(..., 3)`` to pixel coordinates ``(..., 2)``."""
    pts = np.asarray(pts, dtype=np.float64)
    z = pts[..., 2]
    if np.any(~(z > 0)):
        raise BehindCameraError("point behind camera (non-positive depth)")
    xy = pts[..., :2] / z[..., None]
    if intr.has_distortion:
        xy = distort(xy, intr.distortion)
    return np.stack([intr.fx * xy[..., 0] + intr.cx, intr.fy * xy[..., 1] + intr.cy], axis=-1)


def project_point(intr: CameraIntrinsics, p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (3,):
        raise GeometryError("project_point expects a single 3-vector")
    return project_points(intr, p)


def pixel_rays(intr: CameraIntrinsics, uv, strict: bool = True) -> np.ndarray:
    """Camera-frame ray directions with unit z for pixel coordinates ``(..., 2)``.

    With ``strict=False`` pixels that cannot be undistorted get NaN rays.
    """
    uv = np.asarray(uv, dtype=np.float64)
    xy = np.stack([(uv[..., 0] - intr.cx) / intr.fx, (uv[..., 1] - intr.cy) / intr.fy], axis=-1)
    if intr.has_distortion:
        xy = undistort(xy, intr.distortion, strict=strict)
    return np.concatenate([xy, np.ones(xy.shape[:-1] + (1,))], axis=-1)


def unproject_pixels(intr: CameraIntrinsics, uv, depth) -> np.ndarray:
    """Lift pixels with z-depth (mm) to camera-frame points."""
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(~(depth > 0)):
        raise BehindCameraError("depth must be positive")
    return pixel_rays(intr, uv) * depth[..., None]


def unproject_pixel(intr: CameraIntrinsics, uv, depth: float) -> np.ndarray:
    return unproject_pixels(intr, np.asarray(uv, dtype=np.float64), np.float64(depth))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_from_axis_angle(omega) -> np.ndarray:
    """Rodrigues formula."""
    omega = np.asarray(omega, dtype=np.float64)
    theta = np.linalg.norm(omega)
    K = skew(omega)
    if theta < 1e-12:
        return np.eye(3) + K
    K = K / theta
    return np.eye(3) + np.sin(theta) * K + (1 - np.cos(theta)) * (K @ K)


def skew(w) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """World-to-camera transform for a camera at ``eye`` looking at ``target``.

    Camera axes: x right, y down, z forward.
    """
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    up = np.asarray(up, dtype=np.float64)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, [1.0, 0.0, 0.0])
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return RigidTransform(R, -R @ eye)
