from __future__ import annotations

import numpy as np

from .mesh import MeshError, Plane

DEFAULT_ITERATIONS = 1000
DEFAULT_SAMPLE_SIZE = 10


def fit_plane_lstsq(points) -> Plane:
    """Total-least-squares plane through ``points``."""
    pts = np.asarray(points, dtype=np.float64)
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c, full_matrices=False)
    n = vt[-1]
    return Plane(n, -n @ c)


def _canonical_sign(plane: Plane) -> Plane:
    n = plane.normal
    return plane.flipped() if n[np.argmax(np.abs(n))] < 0 else plane


def ransac_plane(points, tau: float, iterations: int = DEFAULT_ITERATIONS,
                 sample_size: int = DEFAULT_SAMPLE_SIZE, seed: int = 0) -> Plane:
    """Dominant plane by RANSAC with a least-squares refit on the final consensus set.

    Each iteration fits a plane to ``sample_size`` random points and counts
    points within ``tau`` mm. The largest consensus set (first one on ties)
    is refit; the normal is oriented toward the centroid of the remaining
    points, i.e. toward the object standing on the plane.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if tau <= 0:
        raise MeshError("tau must be positive")
    if sample_size < 3:
        raise MeshError("sample_size must be at least 3")
    if len(pts) < sample_size:
        raise MeshError(f"need at least {sample_size} points, got {len(pts)}")
    rng = np.random.default_rng(seed)
    center = pts.mean(axis=0)
    local = pts - center
    best_count, best_mask = -1, None
    for _ in range(iterations):
        sample = local[rng.choice(len(pts), size=sample_size, replace=False)]
        c = sample.mean(axis=0)
        _, s, vt = np.linalg.svd(sample - c, full_matrices=False)
        if s[1] <= 1e-12 * max(s[0], 1e-300):
            continue
        n = vt[-1]
        mask = np.abs(local @ n - n @ c) <= tau
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask
    if best_mask is None:
        raise MeshError("no non-degenerate sample found")
    plane = fit_plane_lstsq(pts[best_mask])
    outliers = pts[~best_mask]
    if len(outliers):
        sd = plane.signed_distance(outliers)
        above, below = int(np.sum(sd > 0)), int(np.sum(sd < 0))
        if below > above or (below == above and plane.signed_distance(outliers.mean(axis=0)) < 0):
            plane = plane.flipped()
    else:
        plane = _canonical_sign(plane)
    return plane
