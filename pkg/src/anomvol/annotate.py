"""Carry 2D defect annotations onto mesh vertices and build voxel ground truth."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, FrameChain, project_points
from .meshops import Bvh, TriangleMesh, render_depth
from .voxelgrid import DEFAULT_VOXEL_SIZE, GridSpec, GroundTruthVolume, voxelize_labeled_mesh


class AnnotationError(ValueError):
    pass


def as_annotation(ids) -> np.ndarray:
    a = np.asarray(ids)
    if a.ndim != 2:
        raise AnnotationError("annotation image must be 2-D")
    if not np.issubdtype(a.dtype, np.integer):
        if np.any(a != np.round(a)):
            raise AnnotationError("annotation IDs must be integers")
    if np.any(a < 0) or np.any(a > 65535):
        raise AnnotationError("annotation IDs must fit in 16 bits")
    return a.astype(np.uint16)


@dataclass
class LiftResult:
    mesh: TriangleMesh
    votes: np.ndarray  # (K, 3) rows of (vertex, defect id, count)
    conflicts: np.ndarray  # vertices that received more than one distinct id

    @property
    def labels(self) -> np.ndarray:
        return self.mesh.labels


def visible_vertices(mesh: TriangleMesh, intr: CameraIntrinsics, cam_pose, bvh=None,
                     tolerance: float = DEFAULT_VOXEL_SIZE):
    """Per-vertex ``(visible, row, col)`` in one view.

    A vertex is visible when it projects inside the image in front of the
    camera and its depth is within ``tolerance`` mm of the mesh's own
    rendered depth at the nearest pixel.
    """
    depth = render_depth(mesh if bvh is None else bvh, intr, cam_pose)
    p = cam_pose.apply(mesh.vertices)
    z = p[:, 2]
    front = z > 0
    uv = np.full((len(p), 2), -1.0)
    uv[front] = project_points(intr, p[front])
    col = np.rint(uv[:, 0]).astype(np.int64)
    row = np.rint(uv[:, 1]).astype(np.int64)
    inside = front & (col >= 0) & (col < intr.width) & (row >= 0) & (row < intr.height)
    vis = np.zeros(len(p), dtype=bool)
    r, c = row[inside], col[inside]
    dz = depth.depth[r, c]
    vis[inside] = (dz > 0) & (np.abs(z[inside] - dz) <= tolerance)
    return vis, row, col


def lift_annotations(mesh: TriangleMesh, views, chain: FrameChain, intr: CameraIntrinsics,
                     tolerance: float = DEFAULT_VOXEL_SIZE) -> LiftResult:
    """Label every vertex from the annotation images of the views that see it.

    ``views`` is a sequence of ``(annotation image, view index)``. Only
    nonzero IDs vote; each vertex takes its most frequent ID, ties going to
    the smallest. Vertices seen by no annotated pixel stay 0.
    """
    bvh = Bvh(mesh)
    pairs = []
    for ann, view in views:
        a = as_annotation(ann)
        if a.shape != (intr.height, intr.width):
            raise AnnotationError(
                f"annotation for view {view} is {a.shape[1]}x{a.shape[0]}, expected {intr.width}x{intr.height}")
        pose = chain.mesh_to_camera(view)
        vis, row, col = visible_vertices(mesh, intr, pose, bvh, tolerance)
        v = np.flatnonzero(vis)
        ids = a[row[v], col[v]]
        keep = ids != 0
        pairs.append(np.stack([v[keep], ids[keep].astype(np.int64)], axis=1))
    labels = np.zeros(mesh.n_vertices, dtype=np.uint16)
    allp = np.concatenate(pairs) if pairs else np.zeros((0, 2), np.int64)
    if len(allp) == 0:
        return LiftResult(mesh.with_labels(labels), np.zeros((0, 3), np.int64), np.zeros(0, np.int64))
    uniq, counts = np.unique(allp, axis=0, return_counts=True)
    # winner per vertex: highest count, then smallest id
    order = np.lexsort((uniq[:, 1], -counts, uniq[:, 0]))
    u, c = uniq[order], counts[order]
    first = np.r_[True, u[1:, 0] != u[:-1, 0]]
    labels[u[first, 0]] = u[first, 1]
    distinct = np.bincount(uniq[:, 0], minlength=mesh.n_vertices)
    votes = np.column_stack([u, c])
    return LiftResult(mesh.with_labels(labels), votes, np.flatnonzero(distinct > 1))


def export_conflicts(path, result: LiftResult):
    """CSV of vertices with disagreeing votes, for manual review in an external editor."""
    V = result.mesh.vertices
    rows = result.votes[np.isin(result.votes[:, 0], result.conflicts)]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["vertex", "x", "y", "z", "defect_id", "votes", "assigned"])
        for v, i, n in rows:
            w.writerow([int(v), repr(float(V[v, 0])), repr(float(V[v, 1])), repr(float(V[v, 2])),
                        int(i), int(n), int(result.labels[v])])


def build_ground_truth(mesh: TriangleMesh, spec: GridSpec) -> GroundTruthVolume:
    """Voxelize a labeled mesh; each triangle takes the smallest nonzero label of its vertices."""
    if mesh.labels is None:
        mesh = mesh.with_labels(np.zeros(mesh.n_vertices, dtype=np.uint16))
    return voxelize_labeled_mesh(mesh, spec)
