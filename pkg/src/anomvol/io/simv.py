"""SIMV voxel volumes.

Layout (little-endian): ``b"SIMV"``, u32 version, u8 payload kind
(0 = f32 score, 1 = u16 label), origin as 3 f64, voxel size f64, dims as
3 u32, the occupancy bitmask (``ceil(X*Y*Z / 8)`` bytes, first voxel in the
lowest bit), then the dense payload. Both the mask and the payload run
x-fastest.
"""
from __future__ import annotations

import struct

import numpy as np

from ..voxelgrid import AnomalyVolume, GridSpec, GroundTruthVolume

MAGIC = b"SIMV"
VERSION = 1
KIND_SCORE = 0
KIND_LABEL = 1
_HEADER = struct.Struct("<4sIB3ddIII")
_PAYLOAD = {KIND_SCORE: np.dtype("<f4"), KIND_LABEL: np.dtype("<u2")}


class SimvError(ValueError):
    pass


def encode_simv(volume) -> bytes:
    spec = volume.spec
    if isinstance(volume, AnomalyVolume):
        kind, mask, payload = KIND_SCORE, volume.touched, volume.score
    elif isinstance(volume, GroundTruthVolume):
        kind, mask, payload = KIND_LABEL, volume.occupancy, volume.label
    else:
        raise TypeError(f"cannot encode {type(volume).__name__}")
    header = _HEADER.pack(MAGIC, VERSION, kind, *spec.origin, spec.voxel_size, *spec.dims)
    bits = np.packbits(mask.ravel(order="F"), bitorder="little")
    data = payload.ravel(order="F").astype(_PAYLOAD[kind])
    return header + bits.tobytes() + data.tobytes()


def decode_simv(buf: bytes):
    if len(buf) < _HEADER.size:
        raise SimvError("truncated SIMV header")
    magic, version, kind, ox, oy, oz, size, X, Y, Z = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise SimvError("not a SIMV file")
    if version != VERSION:
        raise SimvError(f"unsupported SIMV version {version}")
    if kind not in _PAYLOAD:
        raise SimvError(f"unknown payload kind {kind}")
    spec = GridSpec((ox, oy, oz), size, (X, Y, Z))
    n = spec.n_voxels
    n_mask = (n + 7) // 8
    dt = _PAYLOAD[kind]
    if len(buf) != _HEADER.size + n_mask + n * dt.itemsize:
        raise SimvError("SIMV size does not match its header")
    off = _HEADER.size
    mask = np.unpackbits(np.frombuffer(buf, np.uint8, n_mask, off), count=n, bitorder="little").astype(bool)
    data = np.frombuffer(buf, dt, n, off + n_mask)
    mask = mask.reshape(spec.dims, order="F")
    data = data.reshape(spec.dims, order="F")
    if kind == KIND_SCORE:
        return AnomalyVolume(spec, data.astype(np.float64), mask)
    return GroundTruthVolume(spec, mask, data.astype(np.uint16))


def write_simv(path, volume):
    with open(path, "wb") as f:
        f.write(encode_simv(volume))


def read_simv(path):
    with open(path, "rb") as f:
        return decode_simv(f.read())
