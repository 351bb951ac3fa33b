"""Sensor-to-camera calibration from dot-pattern views.

Each view provides dot centres detected in the image, the same dots in the
pattern's own frame, and the dots as measured by the 3D sensor. PnP gives
the pattern pose in the camera, which carries the pattern dots into the
camera frame; a rigid absolute-orientation fit over all views then relates
sensor and camera frames.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .geometry import (
    CameraIntrinsics,
    RigidTransform,
    project_points,
    random_rotation,
    rotation_from_axis_angle,
    undistort,
)

log = logging.getLogger(__name__)

PNP_MAX_ITER = 100
PNP_GRAD_TOL = 1e-12
PNP_RESTARTS = 20
_DEGENERATE_TOL = 1e-9
_PLANAR_TOL = 1e-6


class CalibrationError(ValueError):
    pass


class DegenerateConfigurationError(CalibrationError):
    pass


@dataclass(frozen=True, eq=False)
class Correspondences2D3D:
    pixels: np.ndarray
    pattern: np.ndarray

    def __post_init__(self):
        uv = np.asarray(self.pixels, dtype=np.float64).reshape(-1, 2)
        xyz = np.asarray(self.pattern, dtype=np.float64).reshape(-1, 3)
        if len(uv) != len(xyz):
            raise CalibrationError("pixel and pattern counts differ")
        if len(uv) < 6:
            raise CalibrationError(f"PnP needs at least 6 correspondences, got {len(uv)}")
        if len(np.unique(xyz, axis=0)) != len(xyz):
            raise CalibrationError("duplicate pattern points")
        object.__setattr__(self, "pixels", uv)
        object.__setattr__(self, "pattern", xyz)


@dataclass(frozen=True, eq=False)
class Correspondences3D3D:
    source: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.source, dtype=np.float64).reshape(-1, 3)
        b = np.asarray(self.target, dtype=np.float64).reshape(-1, 3)
        if a.shape != b.shape:
            raise CalibrationError("source and target counts differ")
        if len(a) < 3:
            raise DegenerateConfigurationError("absolute orientation needs at least 3 pairs")
        object.__setattr__(self, "source", a)
        object.__setattr__(self, "target", b)


@dataclass(frozen=True, eq=False)
class CalibrationView:
    """One dot-pattern view: image dots, pattern-frame dots, sensor-frame dots."""

    pixels: np.ndarray
    pattern: np.ndarray
    srf: np.ndarray
    view_id: int = 0

    @property
    def pnp_input(self) -> Correspondences2D3D:
        return Correspondences2D3D(self.pixels, self.pattern)


@dataclass
class CalibrationReport:
    estimate: RigidTransform
    residuals: np.ndarray
    rms: float = field(init=False)
    max: float = field(init=False)

    def __post_init__(self):
        self.residuals = np.asarray(self.residuals, dtype=np.float64)
        self.rms = float(np.sqrt(np.mean(self.residuals**2)))
        self.max = float(self.residuals.max())

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate.to_dict(),
            "residuals": [float(r) for r in self.residuals],
            "rms": self.rms,
            "max": self.max,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# -- geometry helpers -----------------------------------------------------------


def _centered_svd(pts):
    c = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - c)
    return c, s, vt


def _check_not_collinear(pts):
    _, s, _ = _centered_svd(pts)
    if s[0] <= 0 or s[1] <= _DEGENERATE_TOL * s[0]:
        raise DegenerateConfigurationError("points are collinear")
    return s


def _proper_rotation(M):
    u, _, vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def _normalize_2d(xy):
    c = xy.mean(axis=0)
    s = np.sqrt(2) / max(np.mean(np.linalg.norm(xy - c, axis=1)), 1e-300)
    T = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1]])
    return (xy - c) * s, T


def kabsch_umeyama(c: Correspondences3D3D) -> RigidTransform:
    """Rigid least-squares fit ``target ~ R @ source + T`` (scale fixed to 1)."""
    a, b = c.source, c.target
    _check_not_collinear(a)
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    H = (a - ca).T @ (b - cb)
    U, _, Vt = np.linalg.svd(H)
    # flip the axis of the smallest singular value when the fit would reflect
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return RigidTransform(R, cb - R @ ca)


# -- PnP ---------------------------------------------------------------------------


def _dlt_pose(xy, X):
    n = len(X)
    Xc = X.mean(axis=0)
    sX = np.sqrt(3) / np.mean(np.linalg.norm(X - Xc, axis=1))
    Xn = (X - Xc) * sX
    xyn, T2 = _normalize_2d(xy)
    Xh = np.hstack([Xn, np.ones((n, 1))])
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -xyn[:, :1] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -xyn[:, 1:] * Xh
    P = np.linalg.svd(A)[2][-1].reshape(3, 4)
    T3 = np.eye(4)
    T3[:3, :3] *= sX
    T3[:3, 3] = -sX * Xc
    P = np.linalg.inv(T2) @ P @ T3
    if np.mean(np.hstack([X, np.ones((n, 1))]) @ P[2]) < 0:
        P = -P
    M = P[:, :3]
    lam = np.mean(np.linalg.svd(M, compute_uv=False))
    return _proper_rotation(M), P[:, 3] / lam


def _homography_pose(xy, X):
    c, _, vt = _centered_svd(X)
    B = np.stack([vt[0], vt[1], np.cross(vt[0], vt[1])], axis=1)
    ab = (X - c) @ B[:, :2]
    abn, Ta = _normalize_2d(ab)
    xyn, Tx = _normalize_2d(xy)
    n = len(X)
    A = np.zeros((2 * n, 9))
    ones = np.ones((n, 1))
    src = np.hstack([abn, ones])
    A[0::2, 0:3] = src
    A[0::2, 6:9] = -xyn[:, :1] * src
    A[1::2, 3:6] = src
    A[1::2, 6:9] = -xyn[:, 1:] * src
    H = np.linalg.svd(A)[2][-1].reshape(3, 3)
    H = np.linalg.inv(Tx) @ H @ Ta
    lam = 2.0 / (np.linalg.norm(H[:, 0]) + np.linalg.norm(H[:, 1]))
    if H[2, 2] * lam < 0:
        lam = -lam
    r1, r2, t = H[:, 0] * lam, H[:, 1] * lam, H[:, 2] * lam
    Rp = _proper_rotation(np.stack([r1, r2, np.cross(r1, r2)], axis=1))
    R = Rp @ B.T
    return R, t - R @ c


@njit(cache=True)
def _project_residuals(fx, fy, cx, cy, dist, R, t, X, uv, pc, r):
    k1, k2, k3, p1, p2 = dist[0], dist[1], dist[2], dist[3], dist[4]
    cost = 0.0
    for i in range(X.shape[0]):
        for a in range(3):
            pc[i, a] = R[a, 0] * X[i, 0] + R[a, 1] * X[i, 1] + R[a, 2] * X[i, 2] + t[a]
        if pc[i, 2] <= 0.0:
            return np.inf
        x = pc[i, 0] / pc[i, 2]
        y = pc[i, 1] / pc[i, 2]
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        r[2 * i] = fx * xd + cx - uv[i, 0]
        r[2 * i + 1] = fy * yd + cy - uv[i, 1]
        cost += r[2 * i] * r[2 * i] + r[2 * i + 1] * r[2 * i + 1]
    return cost


@njit(cache=True)
def _fill_jacobian(fx, fy, dist, R, t, pc, J):
    k1, k2, k3, p1, p2 = dist[0], dist[1], dist[2], dist[3], dist[4]
    for i in range(pc.shape[0]):
        z = pc[i, 2]
        x = pc[i, 0] / z
        y = pc[i, 1] / z
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dr = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2)
        d00 = radial + 2.0 * x * x * dr + 2.0 * p1 * y + 6.0 * p2 * x
        d01 = 2.0 * x * y * dr + 2.0 * p1 * x + 2.0 * p2 * y
        d11 = radial + 2.0 * y * y * dr + 6.0 * p1 * y + 2.0 * p2 * x
        # rows: d(u, v)/d(camera point)
        a = np.empty((2, 3))
        for k, (f, dx, dy) in enumerate(((fx, d00, d01), (fy, d01, d11))):
            a[k, 0] = f * dx / z
            a[k, 1] = f * dy / z
            a[k, 2] = -f * (dx * x + dy * y) / z
        # rotated point (before translation)
        px = pc[i, 0] - t[0]
        py = pc[i, 1] - t[1]
        pz = pc[i, 2] - t[2]
        for k in range(2):
            row = 2 * i + k
            J[row, 0] = -a[k, 1] * pz + a[k, 2] * py
            J[row, 1] = a[k, 0] * pz - a[k, 2] * px
            J[row, 2] = -a[k, 0] * py + a[k, 1] * px
            J[row, 3] = a[k, 0]
            J[row, 4] = a[k, 1]
            J[row, 5] = a[k, 2]


@njit(cache=True)
def _rodrigues(w):
    theta = np.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    K = np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])
    if theta < 1e-12:
        return np.eye(3) + K + 0.5 * (K @ K)
    return np.eye(3) + (np.sin(theta) / theta) * K + ((1.0 - np.cos(theta)) / (theta * theta)) * (K @ K)


@njit(cache=True)
def _lm_refine(fx, fy, cx, cy, dist, X, uv, R, t, max_iter, grad_tol, history):
    n = X.shape[0]
    pc = np.empty((n, 3))
    r = np.empty(2 * n)
    pc_new = np.empty((n, 3))
    r_new = np.empty(2 * n)
    J = np.empty((2 * n, 6))
    R = R.copy()
    t = t.copy()
    cost = _project_residuals(fx, fy, cx, cy, dist, R, t, X, uv, pc, r)
    history[0] = cost
    n_hist = 1
    if not np.isfinite(cost):
        return R, t, n_hist
    lam = 1e-4
    for _ in range(max_iter):
        _fill_jacobian(fx, fy, dist, R, t, pc, J)
        g = J.T @ r
        if np.sqrt(np.sum(g * g)) <= grad_tol:
            break
        JtJ = J.T @ J
        A = JtJ.copy()
        for k in range(6):
            A[k, k] += lam * (JtJ[k, k] + 1e-12)
        step = -np.linalg.solve(A, g)
        tiny = np.sqrt(np.sum(step[:3] ** 2)) < 1e-15 and np.sqrt(np.sum(step[3:] ** 2)) < 1e-15 * (
            1.0 + np.sqrt(np.sum(t * t)))
        if tiny:
            break
        R_new = _rodrigues(step[:3]) @ R
        t_new = t + step[3:]
        c_new = _project_residuals(fx, fy, cx, cy, dist, R_new, t_new, X, uv, pc_new, r_new)
        if c_new < cost:
            rel = (cost - c_new) / max(cost, 1e-300)
            R, t, cost = R_new, t_new, c_new
            pc[:] = pc_new
            r[:] = r_new
            history[n_hist] = cost
            n_hist += 1
            lam = max(lam / 10.0, 1e-12)
            if rel < 1e-14:
                break
        else:
            lam *= 10.0
            if lam > 1e8:
                break
    return R, t, n_hist


@dataclass
class PnPRefinement:
    rotation: np.ndarray
    translation: np.ndarray
    cost_history: list

    @property
    def cost(self) -> float:
        return self.cost_history[-1]


def refine_poses(intr, X, uv, R, t, max_iter=PNP_MAX_ITER, grad_tol=PNP_GRAD_TOL) -> list:
    """Damped Gauss-Newton on the squared pixel reprojection error, one run per start.

    ``R`` is ``(B, 3, 3)`` and ``t`` is ``(B, 3)``. A trial step is kept only
    when it lowers the cost, so each start's cost history is non-increasing.
    Iteration stops at ``grad_tol`` gradient norm, after ``max_iter`` passes,
    or once no step makes progress.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    uv = np.ascontiguousarray(uv, dtype=np.float64)
    dist = np.ascontiguousarray(intr.distortion)
    out = []
    for Rb, tb in zip(np.asarray(R, dtype=np.float64), np.asarray(t, dtype=np.float64)):
        hist = np.empty(max_iter + 1)
        Rr, tr, n = _lm_refine(intr.fx, intr.fy, intr.cx, intr.cy, dist, X, uv, np.ascontiguousarray(Rb),
                               np.ascontiguousarray(tb), max_iter, grad_tol, hist)
        out.append(PnPRefinement(Rr, tr, [float(c) for c in hist[:n]]))
    return out


def refine_pose(intr, X, uv, R, t, **kw) -> PnPRefinement:
    return refine_poses(intr, X, uv, np.asarray(R)[None], np.asarray(t)[None], **kw)[0]


def _initial_pose(intr, c: Correspondences2D3D):
    X = c.pattern
    s = _check_not_collinear(X)
    xy = (c.pixels - [intr.cx, intr.cy]) / [intr.fx, intr.fy]
    if intr.has_distortion:
        xy = undistort(xy, intr.distortion)
    if s[2] <= _PLANAR_TOL * s[0]:
        return _homography_pose(xy, X)
    return _dlt_pose(xy, X)


def mean_reprojection_error(intr, pose: RigidTransform, c: Correspondences2D3D) -> float:
    uv = project_points(intr, pose.apply(c.pattern))
    return float(np.mean(np.linalg.norm(uv - c.pixels, axis=1)))


def solve_pnp(c: Correspondences2D3D, intr: CameraIntrinsics, restarts: int = PNP_RESTARTS,
              seed: int = 0) -> RigidTransform:
    """Pose of the pattern frame in the camera frame.

    A linear initialisation (DLT, or a homography for planar patterns) is
    refined together with ``restarts`` randomly rotated starts about the same
    pattern centroid; the candidate with the lowest reprojection cost wins.
    """
    X, uv = c.pattern, c.pixels
    R0, t0 = _initial_pose(intr, c)
    Rs, ts = [R0], [t0]
    rng = np.random.default_rng(seed)
    centroid = X.mean(axis=0)
    c_cam = R0 @ centroid + t0
    for _ in range(restarts):
        R = random_rotation(rng)
        Rs.append(R)
        ts.append(c_cam - R @ centroid)
    cands = refine_poses(intr, X, uv, np.stack(Rs), np.stack(ts))
    best = min(cands, key=lambda p: p.cost)
    if not np.isfinite(best.cost):
        raise DegenerateConfigurationError("PnP found no pose with all points in front of the camera")
    return RigidTransform(_proper_rotation(best.rotation), best.translation)


# -- sensor-to-camera ---------------------------------------------------------------


def _pnp_view(i, view, intr, restarts):
    try:
        pose = solve_pnp(view.pnp_input, intr, restarts=restarts)
    except CalibrationError as exc:
        raise type(exc)(f"view {view.view_id} (#{i}): {exc}") from exc
    return pose


def camera_frame_dots(views, intr, restarts=PNP_RESTARTS):
    """Per view, PnP-transformed pattern dots in the camera frame."""
    return [_pnp_view(i, v, intr, restarts).apply(v.pattern) for i, v in enumerate(views)]


def estimate_sensor_to_camera(views, intr: CameraIntrinsics, restarts: int = PNP_RESTARTS) -> RigidTransform:
    views = list(views)
    if not views:
        raise CalibrationError("at least one view is required")
    crf = camera_frame_dots(views, intr, restarts)
    srf = np.concatenate([v.srf for v in views])
    try:
        return kabsch_umeyama(Correspondences3D3D(srf, np.concatenate(crf)))
    except DegenerateConfigurationError as exc:
        raise DegenerateConfigurationError(f"sensor-to-camera fit: {exc}") from exc


def assess_calibration(estimate: RigidTransform, holdout, intr: CameraIntrinsics,
                       restarts: int = PNP_RESTARTS) -> CalibrationReport:
    """Per-dot l2 distance between sensor dots mapped by ``estimate`` and PnP dots."""
    holdout = list(holdout)
    if not holdout:
        raise CalibrationError("empty holdout set")
    crf = camera_frame_dots(holdout, intr, restarts)
    res = [np.linalg.norm(estimate.apply(v.srf) - c, axis=1) for v, c in zip(holdout, crf)]
    return CalibrationReport(estimate, np.concatenate(res))


def split_views(views, n_estimate: int = 15):
    views = list(views)
    if not 0 < n_estimate < len(views):
        raise CalibrationError(f"cannot split {len(views)} views with {n_estimate} for estimation")
    return views[:n_estimate], views[n_estimate:]


# -- CSV ---------------------------------------------------------------------------

CSV_FIELDS = ["view_id", "u", "v", "Xp", "Yp", "Zp", "Xs", "Ys", "Zs"]


def read_correspondences_csv(path) -> list:
    rows: dict[int, list] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise CalibrationError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            rows.setdefault(int(row["view_id"]), []).append([float(row[k]) for k in CSV_FIELDS[1:]])
    views = []
    for vid in sorted(rows):
        a = np.array(rows[vid])
        views.append(CalibrationView(a[:, 0:2], a[:, 2:5], a[:, 5:8], view_id=vid))
    return views


def write_correspondences_csv(path, views) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for v in views:
            for uv, p, s in zip(v.pixels, v.pattern, v.srf):
                w.writerow([v.view_id, *map(repr, map(float, uv)), *map(repr, map(float, p)),
                            *map(repr, map(float, s))])


# -- simulation ----------------------------------------------------------------------


def dot_pattern(rows: int = 5, cols: int = 10, spacing: float = 15.0) -> np.ndarray:
    """Planar grid of dot centres in the pattern frame (z = 0), centred on the origin."""
    jj, ii = np.meshgrid(np.arange(cols), np.arange(rows))
    pts = np.stack([jj.ravel() * spacing, ii.ravel() * spacing, np.zeros(rows * cols)], axis=1)
    return pts - pts.mean(axis=0) * [1, 1, 0]


def simulate_views(rng: np.random.Generator, n_views: int, intr: CameraIntrinsics,
                   sensor_to_camera: RigidTransform, pixel_noise: float = 0.0, srf_noise: float = 0.0,
                   standoff: float = 500.0, pattern=None, max_tilt_deg: float = 35.0) -> list:
    """Dot-pattern views observed by the camera and the 3D sensor."""
    pattern = dot_pattern() if pattern is None else np.asarray(pattern, dtype=np.float64)
    cam_to_sensor = sensor_to_camera.inverse()
    views = []
    while len(views) < n_views:
        tilt = np.deg2rad(max_tilt_deg) * rng.uniform(0, 1)
        axis = rng.normal(size=3) * [1, 1, 0]
        axis /= np.linalg.norm(axis)
        spin = rotation_from_axis_angle([0, 0, rng.uniform(-np.pi, np.pi)])
        R = rotation_from_axis_angle(axis * tilt) @ spin
        t = np.array([rng.uniform(-60, 60), rng.uniform(-40, 40), standoff + rng.uniform(-50, 50)])
        crf = pattern @ R.T + t
        uv = project_points(intr, crf)
        if np.any(uv < 0) or np.any(uv[:, 0] > intr.width - 1) or np.any(uv[:, 1] > intr.height - 1):
            continue
        uv = uv + rng.normal(scale=pixel_noise, size=uv.shape) if pixel_noise else uv
        srf = cam_to_sensor.apply(crf)
        srf = srf + rng.normal(scale=srf_noise, size=srf.shape) if srf_noise else srf
        views.append(CalibrationView(uv, pattern.copy(), srf, view_id=len(views)))
    return views
