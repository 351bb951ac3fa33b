"""Dataset manifests: one JSON file describing every instance, view and file of an object class."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .geometry import CameraIntrinsics, FrameChain, GeometryError, RigidTransform
from .io import read_json, write_json
from .voxelgrid import GridSpec, VoxelGridError

FORMAT = "anomvol-manifest/1"


class ManifestError(ValueError):
    """Base class; ``exit_code`` follows the CLI convention."""

    exit_code = 2


class ManifestSchemaError(ManifestError):
    pass


class SingleInstanceError(ManifestError):
    pass


class ManifestInvariantError(ManifestError):
    pass


class MissingFilesError(ManifestError, FileNotFoundError):
    exit_code = 3

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"{len(self.missing)} referenced files are missing:\n  " + "\n  ".join(self.missing))


_NUM = {"type": "number"}
_POSE = {
    "type": "object",
    "required": ["rotation", "translation"],
    "properties": {
        "rotation": {"type": "array", "items": _NUM, "minItems": 9, "maxItems": 9},
        "translation": {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3},
    },
}
SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["format", "object", "intrinsics", "sensor_to_camera", "instances"],
    "properties": {
        "format": {"const": FORMAT},
        "object": {"type": "string", "minLength": 1},
        "intrinsics": {
            "type": "object",
            "required": ["fx", "fy", "cx", "cy", "width", "height"],
            "properties": {
                "fx": _NUM, "fy": _NUM, "cx": _NUM, "cy": _NUM,
                "width": {"type": "integer", "minimum": 1},
                "height": {"type": "integer", "minimum": 1},
                "dist": {"type": "array", "items": _NUM, "minItems": 5, "maxItems": 5},
            },
        },
        "sensor_to_camera": _POSE,
        "instances": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "role", "setup", "mesh", "grid", "views"],
                "properties": {
                    "id": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                    "role": {"enum": ["train", "test"]},
                    "condition": {"enum": ["nominal", "anomalous"]},
                    "setup": {"enum": ["real", "synth"]},
                    "mesh": {"type": "string"},
                    "gt_volume": {"type": ["string", "null"]},
                    "grid": {
                        "type": "object",
                        "required": ["origin", "voxel_size", "dims"],
                        "properties": {
                            "origin": {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3},
                            "voxel_size": {"type": "number", "exclusiveMinimum": 0},
                            "dims": {"type": "array", "items": {"type": "integer", "minimum": 1},
                                     "minItems": 3, "maxItems": 3},
                        },
                    },
                    "views": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["image", "depth", "pose"],
                            "properties": {"image": {"type": "string"}, "depth": {"type": "string"},
                                           "pose": _POSE},
                        },
                    },
                },
            },
        },
    },
}


@dataclass
class ViewRecord:
    image: str
    depth: str
    pose: RigidTransform


@dataclass
class InstanceRecord:
    id: str
    role: str
    setup: str
    mesh: str
    grid: GridSpec
    views: list
    condition: str | None = None
    gt_volume: str | None = None

    @property
    def anomalous(self) -> bool:
        return self.condition == "anomalous"

    def chain(self, sensor_to_camera: RigidTransform) -> FrameChain:
        return FrameChain(sensor_to_camera, tuple(v.pose for v in self.views))

    def to_dict(self) -> dict:
        d = {"id": self.id, "role": self.role, "setup": self.setup, "mesh": self.mesh,
             "grid": self.grid.to_dict(),
             "views": [{"image": v.image, "depth": v.depth, "pose": v.pose.to_dict()} for v in self.views]}
        if self.condition is not None:
            d["condition"] = self.condition
        if self.gt_volume is not None:
            d["gt_volume"] = self.gt_volume
        return d


@dataclass
class DatasetManifest:
    object_name: str
    intrinsics: CameraIntrinsics
    sensor_to_camera: RigidTransform
    instances: list
    root: Path = field(default_factory=Path)

    def path(self, rel: str) -> Path:
        return self.root / rel

    def instance(self, instance_id: str) -> InstanceRecord:
        for r in self.instances:
            if r.id == instance_id:
                return r
        raise KeyError(f"no instance {instance_id!r}")

    @property
    def train(self) -> list:
        return [r for r in self.instances if r.role == "train"]

    @property
    def test(self) -> list:
        return sorted((r for r in self.instances if r.role == "test"), key=lambda r: r.id)

    def to_dict(self) -> dict:
        return {"format": FORMAT, "object": self.object_name, "intrinsics": self.intrinsics.to_dict(),
                "sensor_to_camera": self.sensor_to_camera.to_dict(),
                "instances": [r.to_dict() for r in self.instances]}

    def referenced_files(self):
        for r in self.instances:
            yield r.mesh
            for v in r.views:
                yield v.image
                yield v.depth
            if r.gt_volume:
                yield r.gt_volume


def _check_invariants(m: DatasetManifest):
    ids = [r.id for r in m.instances]
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        raise ManifestInvariantError(f"duplicate instance ids: {', '.join(dup)}")
    trains = {}
    for r in m.train:
        trains.setdefault(r.setup, []).append(r.id)
        if r.condition not in (None, "nominal"):
            raise ManifestInvariantError(f"training instance {r.id} must be nominal")
    if not trains:
        raise SingleInstanceError("single-instance violated: no training instance")
    for setup, rs in sorted(trains.items()):
        if len(rs) > 1:
            raise SingleInstanceError(
                f"single-instance violated: {len(rs)} training instances for setup '{setup}' ({', '.join(rs)})")
    for r in m.test:
        if r.condition is None:
            raise ManifestInvariantError(f"test instance {r.id} has no condition label")


def manifest_from_dict(d, root=".") -> DatasetManifest:
    try:
        jsonschema.validate(d, SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ManifestSchemaError(f"manifest schema violation at {where}: {e.message}") from None
    try:
        intr = CameraIntrinsics.from_dict(d["intrinsics"])
        s2c = RigidTransform.from_dict(d["sensor_to_camera"])
        insts = []
        for r in d["instances"]:
            views = [ViewRecord(v["image"], v["depth"], RigidTransform.from_dict(v["pose"])) for v in r["views"]]
            rec = InstanceRecord(r["id"], r["role"], r["setup"], r["mesh"], GridSpec.from_dict(r["grid"]), views,
                                 r.get("condition"), r.get("gt_volume"))
            rec.chain(s2c)  # reference-view identity check
            insts.append(rec)
    except (GeometryError, VoxelGridError) as e:
        raise ManifestInvariantError(str(e)) from None
    m = DatasetManifest(d["object"], intr, s2c, insts, Path(root))
    _check_invariants(m)
    return m


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    m = manifest_from_dict(read_json(path), path.parent)
    if check_files:
        missing = [f for f in m.referenced_files() if not os.path.isfile(m.path(f))]
        if missing:
            raise MissingFilesError(missing)
    return m


def save_manifest(path, m: DatasetManifest):
    write_json(path, m.to_dict())
