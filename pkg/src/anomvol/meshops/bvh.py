"""Axis-aligned bounding volume hierarchy and nearest-hit ray casting.

Nodes are split at the median centroid along the longest axis of the
node's centroid bounds until at most ``LEAF_SIZE`` triangles remain.
Ray-triangle tests are Moller-Trumbore, two-sided, with edges widened by
``BARY_EPS`` so rays through shared edges never fall through rounding
cracks. Equal-distance hits
resolve to the lower triangle index, which keeps results independent of the
tree layout.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .mesh import MeshError, TriangleMesh

LEAF_SIZE = 4
BARY_EPS = 1e-10


@njit(cache=True)
def _build(tri, leaf_size):
    n = tri.shape[0]
    cent = (tri[:, 0] + tri[:, 1] + tri[:, 2]) / 3.0
    tmin = np.empty((n, 3))
    tmax = np.empty((n, 3))
    for i in range(n):
        for a in range(3):
            tmin[i, a] = min(tri[i, 0, a], tri[i, 1, a], tri[i, 2, a])
            tmax[i, a] = max(tri[i, 0, a], tri[i, 1, a], tri[i, 2, a])
    order = np.arange(n)
    cap = 2 * n
    bmin = np.empty((cap, 3))
    bmax = np.empty((cap, 3))
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    start = np.zeros(cap, np.int64)
    count = np.zeros(cap, np.int64)
    n_nodes = 1
    start[0] = 0
    count[0] = n
    stack = np.empty(cap, np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        s, c = start[node], count[node]
        lo = np.full(3, np.inf)
        hi = np.full(3, -np.inf)
        clo = np.full(3, np.inf)
        chi = np.full(3, -np.inf)
        for k in range(s, s + c):
            i = order[k]
            for a in range(3):
                lo[a] = min(lo[a], tmin[i, a])
                hi[a] = max(hi[a], tmax[i, a])
                clo[a] = min(clo[a], cent[i, a])
                chi[a] = max(chi[a], cent[i, a])
        bmin[node] = lo
        bmax[node] = hi
        if c <= leaf_size:
            continue
        ext = chi - clo
        axis = 0
        if ext[1] > ext[axis]:
            axis = 1
        if ext[2] > ext[axis]:
            axis = 2
        seg = order[s:s + c]
        keys = cent[seg, axis]
        # stable sort so equal keys keep triangle order (deterministic build)
        srt = np.argsort(keys, kind="mergesort")
        order[s:s + c] = seg[srt]
        half = c // 2
        l_node, r_node = n_nodes, n_nodes + 1
        n_nodes += 2
        start[l_node], count[l_node] = s, half
        start[r_node], count[r_node] = s + half, c - half
        left[node], right[node] = l_node, r_node
        count[node] = 0
        stack[sp] = r_node
        sp += 1
        stack[sp] = l_node
        sp += 1
    return bmin[:n_nodes].copy(), bmax[:n_nodes].copy(), left[:n_nodes].copy(), right[:n_nodes].copy(), \
        start[:n_nodes].copy(), count[:n_nodes].copy(), order


@njit(cache=True, inline="always")
def _ray_triangle(o, d, v0, v1, v2):
    e1x, e1y, e1z = v1[0] - v0[0], v1[1] - v0[1], v1[2] - v0[2]
    e2x, e2y, e2z = v2[0] - v0[0], v2[1] - v0[1], v2[2] - v0[2]
    px = d[1] * e2z - d[2] * e2y
    py = d[2] * e2x - d[0] * e2z
    pz = d[0] * e2y - d[1] * e2x
    det = e1x * px + e1y * py + e1z * pz
    if det == 0.0:
        return np.inf, 0.0, 0.0
    inv = 1.0 / det
    sx, sy, sz = o[0] - v0[0], o[1] - v0[1], o[2] - v0[2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < -BARY_EPS or u > 1.0 + BARY_EPS:
        return np.inf, 0.0, 0.0
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    if v < -BARY_EPS or u + v > 1.0 + BARY_EPS:
        return np.inf, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t <= 0.0:
        return np.inf, 0.0, 0.0
    return t, u, v


@njit(cache=True, inline="always")
def _slab(o, inv_d, lo, hi, t_best):
    t0 = 0.0
    t1 = t_best
    for a in range(3):
        ta = (lo[a] - o[a]) * inv_d[a]
        tb = (hi[a] - o[a]) * inv_d[a]
        if ta > tb:
            ta, tb = tb, ta
        # NaN from 0 * inf (ray on a slab plane) must not reject the box
        if ta == ta and ta > t0:
            t0 = ta
        if tb == tb and tb < t1:
            t1 = tb
        if t0 > t1:
            return False
    return True


@njit(cache=True)
def _trace(tri, bmin, bmax, left, right, start, count, order, origins, dirs, out_t, out_tri, out_u, out_v):
    stack = np.empty(128, np.int64)
    inv_d = np.empty(3)
    for r in range(origins.shape[0]):
        o = origins[r]
        d = dirs[r]
        out_t[r] = np.inf
        out_tri[r] = -1
        out_u[r] = 0.0
        out_v[r] = 0.0
        if not (d[0] == d[0] and d[1] == d[1] and d[2] == d[2]):
            continue
        for a in range(3):
            inv_d[a] = 1.0 / d[a] if d[a] != 0.0 else np.inf
        best = np.inf
        best_tri = -1
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if not _slab(o, inv_d, bmin[node], bmax[node], best):
                continue
            if count[node] > 0:
                for k in range(start[node], start[node] + count[node]):
                    i = order[k]
                    t, u, v = _ray_triangle(o, d, tri[i, 0], tri[i, 1], tri[i, 2])
                    if t < best or (t == best and t < np.inf and i < best_tri):
                        best, best_tri = t, i
                        out_u[r] = u
                        out_v[r] = v
            else:
                stack[sp] = right[node]
                sp += 1
                stack[sp] = left[node]
                sp += 1
        out_t[r] = best
        out_tri[r] = best_tri


@dataclass
class RayHits:
    """Nearest hits: ``t`` along the ray (inf on miss), triangle index (-1 on miss), barycentrics."""

    t: np.ndarray
    triangle: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return self.triangle >= 0


class Bvh:
    def __init__(self, mesh: TriangleMesh, leaf_size: int = LEAF_SIZE):
        if mesh.is_empty:
            raise MeshError("cannot build a BVH over an empty mesh")
        self.mesh = mesh
        self._tri = np.ascontiguousarray(mesh.triangle_vertices)
        (self.node_min, self.node_max, self.left, self.right, self.start, self.count,
         self.order) = _build(self._tri, leaf_size)
        for a in (self.node_min, self.node_max, self.left, self.right, self.start, self.count, self.order):
            a.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    def is_leaf(self, node: int) -> bool:
        return self.count[node] > 0

    def leaf_triangles(self, node: int) -> np.ndarray:
        return self.order[self.start[node]:self.start[node] + self.count[node]]

    def intersect(self, origins, dirs) -> RayHits:
        origins = np.ascontiguousarray(np.broadcast_to(np.asarray(origins, np.float64), np.shape(dirs)))
        dirs = np.ascontiguousarray(dirs, dtype=np.float64)
        shape = dirs.shape[:-1]
        o = origins.reshape(-1, 3)
        d = dirs.reshape(-1, 3)
        n = len(d)
        t = np.empty(n)
        tri = np.empty(n, np.int64)
        u = np.empty(n)
        v = np.empty(n)
        _trace(self._tri, self.node_min, self.node_max, self.left, self.right, self.start, self.count,
               self.order, o, d, t, tri, u, v)
        return RayHits(t.reshape(shape), tri.reshape(shape), u.reshape(shape), v.reshape(shape))


def build_bvh(mesh: TriangleMesh, leaf_size: int = LEAF_SIZE) -> Bvh:
    return Bvh(mesh, leaf_size)
