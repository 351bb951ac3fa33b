"""Detection and segmentation metrics on instance scores and voxel volumes.

Segmentation follows the per-region-overlap recipe: binarize the anomaly
volume at a threshold, average the covered fraction of each ground-truth
blob, and plot that against the false-positive rate over occupied nominal
voxels. The area under the curve up to an FPR bound, divided by the bound,
is the volume AUPRO.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .voxelgrid import AnomalyVolume, GroundTruthVolume, require_same_spec

DEFAULT_BOUND = 0.01
DEFAULT_N_SAMPLES = 200


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class InstanceScore:
    instance_id: str
    score: float
    anomalous: bool

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise MetricsError(f"non-finite score for {self.instance_id}")


def auroc(nominal, anomalous) -> float:
    """Mann-Whitney AUROC: P(anomalous > nominal) + P(tie) / 2, by exact pair counting."""
    nom = np.sort(np.asarray(nominal, dtype=np.float64))
    an = np.asarray(anomalous, dtype=np.float64)
    if len(nom) == 0 or len(an) == 0:
        raise MetricsError("need at least one nominal and one anomalous score")
    if not (np.all(np.isfinite(nom)) and np.all(np.isfinite(an))):
        raise MetricsError("scores must be finite")
    below = np.searchsorted(nom, an, side="left")
    at_or_below = np.searchsorted(nom, an, side="right")
    # integer counts keep the statistic exact
    twice = 2 * int(below.sum()) + int((at_or_below - below).sum())
    return twice / (2 * len(nom) * len(an))


def i_auroc(scores) -> float:
    """Instance-level AUROC over ``InstanceScore`` records."""
    scores = list(scores)
    nom = [s.score for s in scores if not s.anomalous]
    an = [s.score for s in scores if s.anomalous]
    if not nom or not an:
        raise MetricsError("I-AUROC needs both nominal and anomalous instances")
    return auroc(nom, an)


def binarize(vol: AnomalyVolume, t: float) -> np.ndarray:
    """Positive where the voxel was touched and its score reaches ``t``."""
    return vol.touched & (vol.score >= t)


def _check(binary, gt: GroundTruthVolume):
    b = np.asarray(binary, dtype=bool)
    if b.shape != gt.spec.dims:
        raise MetricsError(f"binary volume {b.shape} does not match grid {gt.spec.dims}")
    return b


def pro_at(binary, gt: GroundTruthVolume) -> float:
    b = _check(binary, gt)
    ids = gt.blob_ids
    if len(ids) == 0:
        raise MetricsError("ground truth has no defect blobs")
    lab = gt.label.ravel()
    inside = lab != 0
    total = np.bincount(lab[inside], minlength=int(ids.max()) + 1)
    hit = np.bincount(lab[inside & b.ravel()], minlength=int(ids.max()) + 1)
    return float(np.mean(hit[ids] / total[ids]))


def _fpr_domain(gt: GroundTruthVolume, domain: str, touched=None) -> np.ndarray:
    if domain == "gt":
        return gt.nominal_mask
    if domain == "touched":
        if touched is None:
            raise MetricsError("the 'touched' FPR domain needs the prediction's touched mask")
        return np.asarray(touched, dtype=bool) & (gt.label == 0)
    raise MetricsError(f"unknown FPR domain {domain!r}")


def fpr_at(binary, gt: GroundTruthVolume, domain: str = "gt", touched=None) -> float:
    """False-positive rate over occupied nominal voxels (``domain="gt"``).

    ``domain="touched"`` counts nominal voxels that received a prediction instead.
    """
    b = _check(binary, gt)
    neg = _fpr_domain(gt, domain, touched)
    n = int(neg.sum())
    if n == 0:
        raise MetricsError("no nominal voxels to compute a false-positive rate over")
    return int((b & neg).sum()) / n


@dataclass(frozen=True)
class ProCurve:
    """Achieved ``(fpr, pro)`` pairs in order of decreasing threshold."""

    fpr: np.ndarray
    pro: np.ndarray
    thresholds: np.ndarray

    def __post_init__(self):
        if len(self.fpr) == 0:
            raise MetricsError("empty PRO curve")
        if np.any(np.diff(self.fpr) < 0):
            raise MetricsError("curve FPR must be non-decreasing")

    def __len__(self):
        return len(self.fpr)

    def points(self) -> np.ndarray:
        return np.column_stack([self.fpr, self.pro])


def _sweep(vol: AnomalyVolume, gt: GroundTruthVolume, domain: str):
    """Exact (fpr, pro) at every distinct touched score, highest threshold first, plus t = +inf."""
    require_same_spec(vol.spec, gt.spec)
    ids = gt.blob_ids
    if len(ids) == 0:
        raise MetricsError("ground truth has no defect blobs")
    neg = _fpr_domain(gt, domain, vol.touched)
    n_neg = int(neg.sum())
    if n_neg == 0:
        raise MetricsError("no nominal voxels to compute a false-positive rate over")

    t = vol.touched
    scores = vol.score[t]
    thr, inv = np.unique(-scores, return_inverse=True)
    thr = -thr  # distinct scores, descending
    k = len(thr)

    is_neg = neg[t]
    fp = np.cumsum(np.bincount(inv[is_neg], minlength=k))

    # per-blob positive counts as thresholds decrease
    lab = gt.label[t]
    slot = np.searchsorted(ids, lab)
    in_blob = lab != 0
    sizes = np.array([int((gt.label == i).sum()) for i in ids], dtype=np.int64)
    cover = np.zeros((k, len(ids)), dtype=np.int64)
    np.add.at(cover, (inv[in_blob], slot[in_blob]), 1)
    cover = np.cumsum(cover, axis=0)
    pro = (cover / sizes).mean(axis=1) if k else np.zeros(0)

    fpr = np.concatenate([[0.0], fp / n_neg])
    pro = np.concatenate([[0.0], pro])
    thresholds = np.concatenate([[np.inf], thr])
    return fpr, pro, thresholds


def pro_curve(vol: AnomalyVolume, gt: GroundTruthVolume, n_samples: int = DEFAULT_N_SAMPLES,
              exact: bool = True, domain: str = "gt", max_fpr: float | None = None) -> ProCurve:
    """PRO against FPR as the threshold sweeps down from +inf.

    With ``exact`` every distinct score is a breakpoint. Otherwise ``n_samples``
    FPR targets are spread uniformly from 0 to the largest achievable FPR (or
    ``max_fpr``), each mapped to the smallest threshold whose FPR stays within
    the target; achieved rather than target FPRs are reported. ``max_fpr``
    truncates the exact curve after its first point beyond the limit.
    """
    if n_samples < 2:
        raise MetricsError("n_samples must be at least 2")
    fpr, pro, thr = _sweep(vol, gt, domain)
    if exact:
        if max_fpr is not None:
            beyond = np.flatnonzero(fpr > max_fpr)
            if len(beyond):
                stop = beyond[0] + 1
                fpr, pro, thr = fpr[:stop], pro[:stop], thr[:stop]
        return ProCurve(fpr, pro, thr)
    top = fpr[-1] if max_fpr is None else min(max_fpr, fpr[-1])
    targets = np.linspace(0.0, top, n_samples)
    idx = np.searchsorted(fpr, targets, side="right") - 1
    idx = np.unique(np.concatenate([[0], idx]))
    return ProCurve(fpr[idx], pro[idx], thr[idx])


def v_aupro(curve: ProCurve, bound: float = DEFAULT_BOUND) -> float:
    """Trapezoidal area under the curve on ``[0, bound]``, divided by ``bound``.

    The segment crossing ``bound`` is interpolated; if the curve stops short
    of ``bound``, its last PRO value is carried flat.
    """
    if not 0 < bound <= 1:
        raise MetricsError("bound must be in (0, 1]")
    if len(curve) == 0:
        raise MetricsError("empty PRO curve")
    x, y = np.asarray(curve.fpr, float), np.asarray(curve.pro, float)
    if x[0] > 0:
        x, y = np.concatenate([[0.0], x]), np.concatenate([[0.0], y])
    area = 0.0
    for i in range(len(x) - 1):
        x0, x1, y0, y1 = x[i], x[i + 1], y[i], y[i + 1]
        if x0 >= bound:
            break
        if x1 > bound:
            y1 = y0 + (y1 - y0) * (bound - x0) / (x1 - x0)
            x1 = bound
        area += 0.5 * (x1 - x0) * (y0 + y1)
    if x[-1] < bound:
        area += (bound - x[-1]) * y[-1]
    return float(min(max(area / bound, 0.0), 1.0))


def sample_curve(curve: ProCurve, max_fpr: float, n_samples: int = DEFAULT_N_SAMPLES) -> np.ndarray:
    """PRO of the piecewise-linear curve at ``n_samples`` uniform FPRs in ``[0, max_fpr]``.

    At an FPR shared by several points the highest PRO is used; beyond the
    curve's end the last value is carried flat.
    """
    x, y = np.asarray(curve.fpr, float), np.asarray(curve.pro, float)
    grid = np.linspace(0.0, max_fpr, n_samples)
    j = np.clip(np.searchsorted(x, grid, side="right") - 1, 0, len(x) - 1)
    out = y[j].copy()
    mid = j < len(x) - 1
    jm = j[mid]
    span = x[jm + 1] - x[jm]
    frac = np.divide(grid[mid] - x[jm], span, out=np.zeros_like(span), where=span > 0)
    out[mid] = y[jm] + frac * (y[jm + 1] - y[jm])
    return np.column_stack([grid, out])


def volume_aupro(vol: AnomalyVolume, gt: GroundTruthVolume, bound: float = DEFAULT_BOUND,
                 domain: str = "gt") -> float:
    return v_aupro(pro_curve(vol, gt, domain=domain, max_fpr=bound), bound)
