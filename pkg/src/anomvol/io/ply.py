from __future__ import annotations

import io

import numpy as np
from plyfile import PlyData, PlyElement

from ..meshops import TriangleMesh


def _vertex_element(mesh: TriangleMesh):
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    if mesh.labels is not None:
        fields.append(("label", "<u2"))
    if mesh.albedo is not None:
        fields.append(("albedo", "<f8"))
    v = np.empty(mesh.n_vertices, dtype=fields)
    v["x"], v["y"], v["z"] = mesh.vertices.T
    if mesh.labels is not None:
        v["label"] = mesh.labels
    if mesh.albedo is not None:
        v["albedo"] = mesh.albedo
    return PlyElement.describe(v, "vertex")


def encode_ply(mesh: TriangleMesh, binary: bool = True) -> bytes:
    """PLY bytes with double coordinates and optional ``label`` (ushort) / ``albedo`` vertex properties."""
    faces = np.empty(mesh.n_triangles, dtype=[("vertex_indices", "<i4", (3,))])
    faces["vertex_indices"] = mesh.triangles
    face_el = PlyElement.describe(faces, "face", len_types={"vertex_indices": "u1"})
    ply = PlyData([_vertex_element(mesh), face_el], text=not binary, byte_order="<")
    buf = io.BytesIO()
    ply.write(buf)
    return buf.getvalue()


def decode_ply(buf: bytes) -> TriangleMesh:
    ply = PlyData.read(io.BytesIO(buf))
    v = ply["vertex"].data
    names = v.dtype.names
    verts = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    labels = v["label"].astype(np.uint16) if "label" in names else None
    albedo = v["albedo"].astype(np.float64) if "albedo" in names else None
    tris = np.zeros((0, 3), dtype=np.int64)
    if "face" in ply:
        f = ply["face"].data
        key = "vertex_indices" if "vertex_indices" in f.dtype.names else "vertex_index"
        col = f[key]
        if len(col):
            tris = np.asarray(col.tolist() if col.dtype == object else col, dtype=np.int64).reshape(-1, 3)
    return TriangleMesh(verts, tris, labels, albedo)


def write_ply(path, mesh: TriangleMesh, binary: bool = True):
    with open(path, "wb") as f:
        f.write(encode_ply(mesh, binary))


def read_ply(path) -> TriangleMesh:
    with open(path, "rb") as f:
        return decode_ply(f.read())
