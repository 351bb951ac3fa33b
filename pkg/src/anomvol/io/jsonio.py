from __future__ import annotations

import json

import numpy as np

from ..geometry import CameraIntrinsics, FrameChain, RigidTransform


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, shortest round-tripping float repr."""
    return json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"{type(o).__name__} is not JSON serializable")


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps(obj))


def read_json(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def write_pose_json(path, pose: RigidTransform):
    write_json(path, pose.to_dict())


def read_pose_json(path) -> RigidTransform:
    return RigidTransform.from_dict(read_json(path))


def chain_to_dict(chain: FrameChain) -> dict:
    return {"sensor_to_camera": chain.sensor_to_camera.to_dict(),
            "view_to_ref": [p.to_dict() for p in chain.view_to_ref]}


def chain_from_dict(d) -> FrameChain:
    return FrameChain(RigidTransform.from_dict(d["sensor_to_camera"]),
                      tuple(RigidTransform.from_dict(p) for p in d["view_to_ref"]))


def write_camera_json(path, intr: CameraIntrinsics, sensor_to_camera: RigidTransform | None = None):
    d = {"intrinsics": intr.to_dict()}
    if sensor_to_camera is not None:
        d["sensor_to_camera"] = sensor_to_camera.to_dict()
    write_json(path, d)


def read_camera_json(path):
    d = read_json(path)
    s2c = d.get("sensor_to_camera")
    return CameraIntrinsics.from_dict(d["intrinsics"]), (RigidTransform.from_dict(s2c) if s2c else None)
