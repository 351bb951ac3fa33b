"""Portable float maps. Grayscale (``Pf``) and RGB (``PF``), rows stored bottom-to-top."""
from __future__ import annotations

import numpy as np


class PfmError(ValueError):
    pass


def encode_pfm(data) -> bytes:
    a = np.asarray(data, dtype=np.float32)
    if a.ndim == 2:
        tag = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        tag = b"PF"
    else:
        raise PfmError("PFM holds (H, W) or (H, W, 3) arrays")
    h, w = a.shape[:2]
    # negative scale marks little-endian
    header = tag + b"\n%d %d\n-1.0\n" % (w, h)
    return header + np.flipud(a).astype("<f4").tobytes()


def decode_pfm(buf: bytes) -> np.ndarray:
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(buf) and not buf[end:end + 1].isspace():
            end += 1
        if end == pos:
            raise PfmError("truncated PFM header")
        fields.append(buf[pos:end])
        pos = end
    pos += 1  # single whitespace byte before the raster
    tag, w, h, scale = fields
    if tag not in (b"Pf", b"PF"):
        raise PfmError(f"bad PFM tag {tag!r}")
    try:
        w, h, scale = int(w), int(h), float(scale)
    except ValueError as e:
        raise PfmError("malformed PFM header") from e
    if scale == 0:
        raise PfmError("PFM scale must be nonzero")
    ch = 3 if tag == b"PF" else 1
    dt = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    n = w * h * ch
    if len(buf) - pos != n * 4:
        raise PfmError("PFM raster size does not match its header")
    a = np.frombuffer(buf, dt, n, pos).reshape((h, w, 3) if ch == 3 else (h, w))
    return np.flipud(a).astype(np.float32)


def write_pfm(path, data):
    with open(path, "wb") as f:
        f.write(encode_pfm(data))


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_pfm(f.read())
