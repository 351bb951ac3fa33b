"""Synthetic scenes for exercising the pipeline end to end.

Parametric meshes get dents, appearance patches or contamination, are
scanned from rings of cameras on a hemisphere with headlight Lambertian
shading, and a nominal-reference differencing detector turns the scans into
anomaly maps.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, FrameChain, RigidTransform, compose, invert, look_at
from .meshops import Bvh, DepthMap, TriangleMesh, trace_view
from .voxelgrid import DEFAULT_VOXEL_SIZE, grid_from_mesh

BASE_ALBEDO = 0.8
DEFAULT_N_VIEWS = 12


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class Defect:
    """``kind`` is dent, appearance or contamination.

    ``magnitude`` is an inward displacement in mm for dents, an outward one
    for contamination, and an albedo change for appearance defects.
    Contamination also darkens the albedo by ``albedo_delta``.
    """

    kind: str
    center: tuple
    radius: float
    magnitude: float
    albedo_delta: float = -0.3

    def __post_init__(self):
        if self.kind not in ("dent", "appearance", "contamination"):
            raise SynthError(f"unknown defect kind {self.kind!r}")
        if not self.radius > 0:
            raise SynthError("defect radius must be positive")


@dataclass(frozen=True)
class SceneSpec:
    """Base shape with its dimensions in mm: sphere ``(radius,)``, box ``(sx, sy, sz)``,
    cylinder ``(radius, height)``. ``tessellation`` is the icosphere subdivision
    level, or log2 of the segments per box edge / cylinder height."""

    shape: str
    dims: tuple
    tessellation: int = 4
    defects: tuple = ()


# -- base meshes ------------------------------------------------------------------------


def _merge(V, F, decimals=9):
    key = np.round(V, decimals)
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    return V[first], inv.ravel()[F]


def _icosphere(radius, level):
    t = (1 + 5 ** 0.5) / 2
    V = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
                  [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], float)
    F = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
                  [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
                  [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    for _ in range(level):
        edges = np.sort(np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        mid = V[uniq[:, 0]] + V[uniq[:, 1]]
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        m = len(V) + inv.ravel().reshape(3, -1).T  # midpoints of edges 01, 12, 20
        V = np.vstack([V, mid])
        a, b, c = F.T
        F = np.concatenate([np.stack([a, m[:, 0], m[:, 2]], 1), np.stack([b, m[:, 1], m[:, 0]], 1),
                            np.stack([c, m[:, 2], m[:, 1]], 1), m])
    return V * radius, F


def _grid_patch(origin, du, dv, nu, nv):
    s, t = np.meshgrid(np.linspace(0, 1, nu + 1), np.linspace(0, 1, nv + 1), indexing="ij")
    V = origin + s.reshape(-1, 1) * du + t.reshape(-1, 1) * dv
    idx = np.arange((nu + 1) * (nv + 1)).reshape(nu + 1, nv + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    F = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return V, F


def _box(size, level):
    sx, sy, sz = size
    n = 2 ** level
    h = np.array(size) / 2
    X, Y, Z = np.eye(3)
    # (corner, du, dv) with du x dv pointing outward
    faces = [(-h, Y * sy, X * sx), (-h + Z * sz, X * sx, Y * sy), (-h, X * sx, Z * sz),
             (-h + Y * sy, Z * sz, X * sx), (-h, Z * sz, Y * sy), (-h + X * sx, Y * sy, Z * sz)]
    Vs, Fs, off = [], [], 0
    for o, du, dv in faces:
        V, F = _grid_patch(o, du, dv, n, n)
        Vs.append(V)
        Fs.append(F + off)
        off += len(V)
    return _merge(np.vstack(Vs), np.vstack(Fs))


def _cylinder(radius, height, level):
    n_h = 2 ** level
    n_a = max(8, int(round(2 * np.pi * radius / (height / n_h))))
    n_r = max(1, int(round(radius / (height / n_h))))
    ang = np.linspace(0, 2 * np.pi, n_a, endpoint=False)
    z = np.linspace(-height / 2, height / 2, n_h + 1)
    A, Zg = np.meshgrid(ang, z, indexing="ij")
    side = np.stack([radius * np.cos(A).ravel(), radius * np.sin(A).ravel(), Zg.ravel()], 1)
    idx = np.arange(n_a * (n_h + 1)).reshape(n_a, n_h + 1)
    nxt = np.roll(idx, -1, axis=0)
    a, b, c, d = idx[:, :-1].ravel(), nxt[:, :-1].ravel(), nxt[:, 1:].ravel(), idx[:, 1:].ravel()
    Vs, Fs = [side], [np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])]
    off = len(side)
    for zc, sign in ((-height / 2, -1), (height / 2, 1)):
        rings = [np.array([[0.0, 0.0, zc]])]
        for k in range(1, n_r + 1):
            r = radius * k / n_r
            rings.append(np.stack([r * np.cos(ang), r * np.sin(ang), np.full(n_a, zc)], 1))
        V = np.vstack(rings)
        F = []
        ring0 = np.arange(1, n_a + 1)
        F += [[0, ring0[i], ring0[(i + 1) % n_a]] for i in range(n_a)]
        for k in range(1, n_r):
            r0 = 1 + (k - 1) * n_a + np.arange(n_a)
            r1 = r0 + n_a
            for i in range(n_a):
                j = (i + 1) % n_a
                F += [[r0[i], r1[i], r1[j]], [r0[i], r1[j], r0[j]]]
        F = np.array(F)
        if sign < 0:
            F = F[:, ::-1]
        Vs.append(V)
        Fs.append(F + off)
        off += len(V)
    return _merge(np.vstack(Vs), np.vstack(Fs))


def base_mesh(spec: SceneSpec):
    if spec.shape == "sphere":
        (r,) = spec.dims
        return _icosphere(float(r), spec.tessellation)
    if spec.shape == "box":
        return _box(tuple(float(d) for d in spec.dims), spec.tessellation)
    if spec.shape == "cylinder":
        r, h = spec.dims
        return _cylinder(float(r), float(h), spec.tessellation)
    raise SynthError(f"unknown shape {spec.shape!r}")


def surface_distance(spec: SceneSpec, V, center) -> np.ndarray:
    """Geodesic distance on a sphere, straight-line distance on other shapes."""
    center = np.asarray(center, float)
    if spec.shape == "sphere":
        (r,) = spec.dims
        u = V / np.linalg.norm(V, axis=1, keepdims=True)
        c = center / np.linalg.norm(center)
        return r * np.arccos(np.clip(u @ c, -1.0, 1.0))
    return np.linalg.norm(V - center, axis=1)


def make_mesh(spec: SceneSpec):
    """Mesh with per-vertex defect labels (defect ``k`` gets ID ``k + 1``) and albedo."""
    V, F = base_mesh(spec)
    nominal = TriangleMesh(V, F)
    normals = nominal.vertex_normals()
    edge = np.linalg.norm(V[F[:, 0]] - V[F[:, 1]], axis=1).max()
    labels = np.zeros(len(V), dtype=np.uint16)
    albedo = np.full(len(V), BASE_ALBEDO)
    disp = np.zeros(len(V))
    for k, d in enumerate(spec.defects):
        c = np.asarray(d.center, float)
        if np.min(np.linalg.norm(V - c, axis=1)) > edge:
            raise SynthError(f"defect {k + 1} centre {tuple(c)} is not on the surface")
        dist = surface_distance(spec, V, c)
        region = dist <= d.radius
        labels[region & (labels == 0)] = k + 1
        # smooth cosine profile, full depth at the centre and zero at the rim
        profile = 0.5 * (1 + np.cos(np.pi * np.clip(dist / d.radius, 0, 1)))
        if d.kind == "dent":
            disp[region] -= d.magnitude * profile[region]
        elif d.kind == "contamination":
            disp[region] += d.magnitude * profile[region]
            albedo[region] += d.albedo_delta
        else:
            albedo[region] += d.magnitude
    V = V + disp[:, None] * normals
    mesh = TriangleMesh(V, F, labels, np.clip(albedo, 0.0, 1.0))
    return mesh, labels


# -- scanning -----------------------------------------------------------------------------


@dataclass(frozen=True)
class ScanSpec:
    """Cameras on rings of a hemisphere around the origin, equally spaced in azimuth.

    Views are split evenly over ``elevations_deg``; each ring may use its own
    radius so the rings lie on concentric hemispheres.
    """

    n_views: int = DEFAULT_N_VIEWS
    radius: float = 300.0
    intrinsics: CameraIntrinsics = field(
        default_factory=lambda: CameraIntrinsics(560.0, 560.0, 127.5, 127.5, 256, 256))
    elevations_deg: tuple = (25.0, 55.0)
    ring_radii: tuple | None = None
    noise_std: float = 0.0

    def __post_init__(self):
        if self.n_views < 1:
            raise SynthError("need at least one view")


def camera_poses(scan: ScanSpec) -> list:
    """Mesh-to-camera poses looking at the origin."""
    n_rings = min(len(scan.elevations_deg), scan.n_views)
    counts = [scan.n_views // n_rings + (1 if r < scan.n_views % n_rings else 0) for r in range(n_rings)]
    radii = scan.ring_radii or (scan.radius,) * n_rings
    poses = []
    for r, n in enumerate(counts):
        el = np.radians(scan.elevations_deg[r])
        for k in range(n):
            az = 2 * np.pi * (k + 0.5 * r) / n
            eye = radii[r] * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
            poses.append(look_at(eye, np.zeros(3)))
    return poses


def chain_from_camera_poses(poses) -> FrameChain:
    """Frame chain whose reference (mesh) frame is the sensor frame of view 0."""
    s2c = poses[0]
    views = [RigidTransform.identity()] + [compose(invert(p), s2c) for p in poses[1:]]
    return FrameChain(s2c, tuple(views))


@dataclass
class SyntheticScan:
    images: list
    depths: list
    chain: FrameChain
    intrinsics: CameraIntrinsics


def shade(mesh: TriangleMesh, hits, dirs) -> np.ndarray:
    """Headlight Lambertian: interpolated albedo times max(0, n . -ray)."""
    hit = hits.hit
    img = np.zeros(hits.t.shape)
    if not hit.any():
        return img
    tri = mesh.triangles[hits.triangle[hit]]
    u, v = hits.u[hit], hits.v[hit]
    w = np.stack([1 - u - v, u, v], axis=1)
    vn = mesh.vertex_normals()
    n = np.einsum("nk,nkj->nj", w, vn[tri])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    d = dirs[hit] / np.linalg.norm(dirs[hit], axis=1, keepdims=True)
    alb = BASE_ALBEDO if mesh.albedo is None else np.einsum("nk,nk->n", w, mesh.albedo[tri])
    img[hit] = alb * np.maximum(0.0, -np.einsum("nj,nj->n", n, d))
    return img


def simulate_scan(mesh: TriangleMesh, scan: ScanSpec = ScanSpec(), seed: int = 0) -> SyntheticScan:
    rng = np.random.default_rng(seed)
    bvh = Bvh(mesh)
    poses = camera_poses(scan)
    images, depths = [], []
    for pose in poses:
        tr = trace_view(bvh, scan.intrinsics, pose)
        img = shade(mesh, tr.hits, tr.dirs_mesh)
        if scan.noise_std > 0:
            img = img + rng.normal(scale=scan.noise_std, size=img.shape)
        images.append(np.clip(img, 0.0, 1.0))
        depths.append(tr.depth)
    return SyntheticScan(images, depths, chain_from_camera_poses(poses), scan.intrinsics)


# -- detector -------------------------------------------------------------------------------


def box3(img) -> np.ndarray:
    """3x3 mean with edge replication."""
    a = np.pad(np.asarray(img, dtype=np.float64), 1, mode="edge")
    h, w = a.shape[0] - 2, a.shape[1] - 2
    return sum(a[i:i + h, j:j + w] for i in range(3) for j in range(3)) / 9.0


def reference_diff_detector(test_views, nominal_views) -> list:
    """Per-view ``|box3(test) - box3(nominal)|``."""
    test_views, nominal_views = list(test_views), list(nominal_views)
    if len(test_views) != len(nominal_views):
        raise SynthError(f"{len(test_views)} test views vs {len(nominal_views)} nominal views")
    out = []
    for i, (t, n) in enumerate(zip(test_views, nominal_views)):
        t, n = np.asarray(t), np.asarray(n)
        if t.shape != n.shape:
            raise SynthError(f"view {i}: resolution {t.shape} vs {n.shape}")
        out.append(np.abs(box3(t) - box3(n)))
    return out


# -- benchmark datasets ------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchPreset:
    name: str = "easy"
    shape: str = "sphere"
    dims: tuple = (50.0,)
    tessellation: int = 5
    n_nominal: int = 6
    n_defective: int = 6
    defect_kind: str = "appearance"
    defect_radius: tuple = (12.0, 16.0)
    magnitude: float = -0.5
    max_defects: int = 2
    scan: ScanSpec = ScanSpec(noise_std=0.002)
    voxel_size: float = DEFAULT_VOXEL_SIZE
    padding: int = 2


PRESETS = {"easy": BenchPreset()}


def _surface_point(spec_shape, dims, rng):
    """Random point on the upper part of the base surface, where the cameras look."""
    az = rng.uniform(0, 2 * np.pi)
    el = rng.uniform(np.radians(5), np.radians(60))
    u = np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    if spec_shape != "sphere":
        raise SynthError("random defect placement is implemented for spheres")
    return dims[0] * u


def random_defects(preset: BenchPreset, rng, n: int) -> tuple:
    out = []
    while len(out) < n:
        c = _surface_point(preset.shape, preset.dims, rng)
        r = rng.uniform(*preset.defect_radius)
        if all(np.linalg.norm(c - np.array(d.center)) > r + d.radius + 2 * preset.voxel_size for d in out):
            out.append(Defect(preset.defect_kind, tuple(c), r, preset.magnitude))
    return tuple(out)


def bench_instances(preset: BenchPreset, seed: int = 0):
    """``(id, role, condition, SceneSpec)`` for the training instance and the test set."""
    rng = np.random.default_rng(seed)
    base = dict(shape=preset.shape, dims=preset.dims, tessellation=preset.tessellation)
    out = [("train_000", "train", "nominal", SceneSpec(**base))]
    for i in range(preset.n_nominal):
        out.append((f"test_nominal_{i:03d}", "test", "nominal", SceneSpec(**base)))
    for i in range(preset.n_defective):
        n = 1 + i % preset.max_defects
        out.append((f"test_anomalous_{i:03d}", "test", "anomalous",
                    SceneSpec(**base, defects=random_defects(preset, rng, n))))
    return out


def write_dataset(root, preset: BenchPreset = PRESETS["easy"], seed: int = 0):
    """Render a synthetic class into ``root`` and write its manifest; returns the manifest path."""
    from .annotate import build_ground_truth
    from .io import write_intensity_png, write_pfm, write_ply, write_simv
    from .manifest import DatasetManifest, InstanceRecord, ViewRecord, save_manifest

    root = Path(root)
    scan = preset.scan
    records, s2c = [], None
    for k, (iid, role, condition, spec) in enumerate(bench_instances(preset, seed)):
        d = root / "instances" / iid
        (d / "views").mkdir(parents=True, exist_ok=True)
        mesh, _ = make_mesh(spec)
        res = simulate_scan(mesh, scan, seed=seed * 1000 + k)
        s2c = res.chain.sensor_to_camera
        write_ply(d / "mesh.ply", mesh)
        views = []
        for i, (img, dm) in enumerate(zip(res.images, res.depths)):
            write_intensity_png(d / "views" / f"{i:02d}.png", img)
            write_pfm(d / "views" / f"{i:02d}_depth.pfm", dm.depth)
            views.append(ViewRecord(f"instances/{iid}/views/{i:02d}.png",
                                    f"instances/{iid}/views/{i:02d}_depth.pfm", res.chain.view_to_ref[i]))
        grid = grid_from_mesh(mesh, preset.voxel_size, preset.padding)
        gt_rel = None
        if condition == "anomalous":
            gt_rel = f"instances/{iid}/gt.simv"
            write_simv(root / gt_rel, build_ground_truth(mesh, grid))
        records.append(InstanceRecord(iid, role, "synth", f"instances/{iid}/mesh.ply", grid, views,
                                      condition, gt_rel))
    m = DatasetManifest(f"synthetic {preset.shape} ({preset.name})", scan.intrinsics, s2c, records, root)
    save_manifest(root / "manifest.json", m)
    return root / "manifest.json"


def load_depth(path) -> DepthMap:
    from .io import read_pfm
    return DepthMap(read_pfm(path).astype(np.float64))


def detect_dataset(manifest, maps_dir, setup: str | None = None):
    """Run the differencing detector on every test instance against the training instance.

    Maps are written as ``{maps_dir}/{instance_id}/{view:02d}.pfm``.
    """
    from .io import read_intensity_png, write_pfm

    trains = manifest.train if setup is None else [r for r in manifest.train if r.setup == setup]
    if len(trains) != 1:
        raise SynthError("choose the training instance with `setup`" if trains else "no training instance")
    ref = [read_intensity_png(manifest.path(v.image)) for v in trains[0].views]
    for r in manifest.test:
        imgs = [read_intensity_png(manifest.path(v.image)) for v in r.views]
        d = Path(maps_dir) / r.id
        d.mkdir(parents=True, exist_ok=True)
        for i, amap in enumerate(reference_diff_detector(imgs, ref)):
            write_pfm(d / f"{i:02d}.pfm", amap)
