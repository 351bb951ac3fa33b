"""Manifest-driven evaluation: fuse each test instance, score it, and write the metrics report."""
from __future__ import annotations

import csv
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fusion import EmptyVolumeWarning, fuse_instance, global_score
from .io import dumps, read_pfm, read_simv, write_simv
from .manifest import DatasetManifest, ManifestError
from .meshops import DepthMap
from .metrics import DEFAULT_BOUND, DEFAULT_N_SAMPLES, InstanceScore, i_auroc, pro_curve, sample_curve, v_aupro
from .voxelgrid import AnomalyVolume, GroundTruthVolume, require_same_spec


class MissingInputsError(ManifestError, FileNotFoundError):
    exit_code = 3

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"{len(self.missing)} evaluation inputs are missing:\n  " + "\n  ".join(self.missing))


@dataclass
class EvaluationOptions:
    bound: float = DEFAULT_BOUND
    n_samples: int = DEFAULT_N_SAMPLES
    fpr_domain: str = "gt"
    threads: int = 1
    gt_as_prediction: bool = False
    write_volumes: bool = False


@dataclass
class InstanceResult:
    instance_id: str
    anomalous: bool
    global_score: float
    empty_volume: bool
    v_aupro: float | None
    curve: np.ndarray | None
    views: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"id": self.instance_id, "condition": "anomalous" if self.anomalous else "nominal",
                "global_score": self.global_score, "empty_volume": self.empty_volume,
                "v_aupro": self.v_aupro, "views": self.views}


@dataclass
class EvaluationRun:
    setup: str
    results: list
    i_auroc: float
    v_aupro: float | None
    curve: np.ndarray
    options: EvaluationOptions

    def report(self) -> dict:
        return {"setup": self.setup, "i_auroc": self.i_auroc, "v_aupro": self.v_aupro,
                "bound": self.options.bound, "n_samples": self.options.n_samples,
                "fpr_domain": self.options.fpr_domain,
                "curve": [[float(f), float(p)] for f, p in self.curve],
                "per_instance": [r.to_dict() for r in self.results]}


def map_path(maps_dir, instance_id: str, view: int) -> Path:
    return Path(maps_dir) / instance_id / f"{view:02d}.pfm"


def gt_as_prediction(gt: GroundTruthVolume) -> AnomalyVolume:
    """Score 1 on defect voxels and 0 on the rest of the occupied surface."""
    return AnomalyVolume(gt.spec, (gt.label != 0).astype(np.float64), gt.occupancy)


def _missing_inputs(m: DatasetManifest, maps_dir, opts: EvaluationOptions):
    missing = []
    for r in m.test:
        if not opts.gt_as_prediction:
            for i, v in enumerate(r.views):
                if not os.path.isfile(map_path(maps_dir, r.id, i)):
                    missing.append(f"anomaly map {map_path(maps_dir, r.id, i)}")
                if not os.path.isfile(m.path(v.depth)):
                    missing.append(f"depth map {m.path(v.depth)}")
        if r.anomalous and not (r.gt_volume and os.path.isfile(m.path(r.gt_volume))):
            missing.append(f"ground-truth volume for {r.id}"
                           + (f" ({m.path(r.gt_volume)})" if r.gt_volume else " (not listed)"))
    return missing


def _evaluate_instance(m: DatasetManifest, r, maps_dir, opts: EvaluationOptions):
    gt = read_simv(m.path(r.gt_volume)) if r.anomalous else None
    if gt is not None:
        require_same_spec(gt.spec, r.grid)
    if opts.gt_as_prediction:
        vol = gt_as_prediction(gt) if gt is not None else AnomalyVolume.empty(r.grid)
        views = []
    else:
        maps = [read_pfm(map_path(maps_dir, r.id, i)).astype(np.float64) for i in range(len(r.views))]
        depths = [DepthMap(read_pfm(m.path(v.depth)).astype(np.float64)) for v in r.views]
        vol, views = fuse_instance(maps, depths, m.intrinsics, r.chain(m.sensor_to_camera), r.grid)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EmptyVolumeWarning)
        score = global_score(vol)
    empty = any(issubclass(w.category, EmptyVolumeWarning) for w in caught)
    aupro, curve = None, None
    if gt is not None:
        c = pro_curve(vol, gt, domain=opts.fpr_domain, max_fpr=opts.bound)
        aupro = v_aupro(c, opts.bound)
        curve = sample_curve(c, opts.bound, opts.n_samples)
    return InstanceResult(r.id, r.anomalous, score, empty, aupro, curve, views), vol


def _setup_tag(m: DatasetManifest) -> str:
    train = "+".join(sorted({r.setup for r in m.train}))
    test = "+".join(sorted({r.setup for r in m.test}))
    return f"{train}2{test}"


def evaluate(m: DatasetManifest, maps_dir=None, out_dir=None, options: EvaluationOptions | None = None
             ) -> EvaluationRun:
    """Fuse, score and measure every test instance; optionally write ``report.json`` and curve CSVs.

    All missing inputs are collected and reported together before any work starts.
    """
    opts = options or EvaluationOptions()
    if not m.test:
        raise ManifestError("manifest has no test instances")
    if maps_dir is None and not opts.gt_as_prediction:
        raise ManifestError("an anomaly-map directory is required")
    missing = _missing_inputs(m, maps_dir, opts)
    if missing:
        raise MissingInputsError(missing)

    tests = m.test
    if opts.threads > 1:
        with ThreadPoolExecutor(max_workers=opts.threads) as ex:
            done = list(ex.map(lambda r: _evaluate_instance(m, r, maps_dir, opts), tests))
    else:
        done = [_evaluate_instance(m, r, maps_dir, opts) for r in tests]
    results = [d[0] for d in done]

    scores = [InstanceScore(r.instance_id, r.global_score, r.anomalous) for r in results]
    iau = i_auroc(scores)
    anom = [r for r in results if r.anomalous]
    mean_aupro = float(np.mean([r.v_aupro for r in anom])) if anom else None
    if anom:
        curve = np.column_stack([anom[0].curve[:, 0], np.mean([r.curve[:, 1] for r in anom], axis=0)])
    else:
        curve = np.zeros((0, 2))
    run = EvaluationRun(_setup_tag(m), results, iau, mean_aupro, curve, opts)

    if out_dir is not None:
        out = Path(out_dir)
        (out / "curves").mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(dumps(run.report()), encoding="utf-8")
        _write_curve(out / "curves" / "mean.csv", curve)
        for r in anom:
            _write_curve(out / "curves" / f"{r.instance_id}.csv", r.curve)
        if opts.write_volumes:
            (out / "volumes").mkdir(exist_ok=True)
            for (res, vol) in done:
                write_simv(out / "volumes" / f"{res.instance_id}.simv", vol)
    return run


def _write_curve(path, curve):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["fpr", "pro"])
        for fpr, pro in curve:
            w.writerow([repr(float(fpr)), repr(float(pro))])
