"""Mesh background removal, BVH ray casting and depth rendering."""
from .bvh import Bvh, RayHits, build_bvh
from .mesh import BackgroundRemoval, MeshError, Plane, TriangleMesh, remove_background
from .ransac import fit_plane_lstsq, ransac_plane
from .render import (
    DOWNSAMPLED_SIZE,
    SENSOR_RESOLUTION,
    DepthMap,
    Sphere,
    depth_to_pointcloud,
    pad_and_downsample_depth,
    pad_and_downsample_image,
    padded_intrinsics,
    render_depth,
    trace_view,
    valid_points,
)
