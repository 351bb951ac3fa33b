"""Slow, obviously-correct reference implementations used by several test files."""
import numpy as np


def pair_count_auroc(nominal, anomalous):
    greater = ties = 0
    for a in anomalous:
        for n in nominal:
            if a > n:
                greater += 1
            elif a == n:
                ties += 1
    return (greater + 0.5 * ties) / (len(nominal) * len(anomalous))


def exhaustive_pro_points(score, touched, occupancy, label):
    """(fpr, pro) at +inf and at every distinct touched score, by direct set counting."""
    n_nominal = np.count_nonzero(occupancy & (label == 0))
    blobs = [b for b in np.unique(label) if b != 0]
    blob_size = [np.count_nonzero(label == b) for b in blobs]
    # only touched voxels can ever be predicted positive
    s = score[touched]
    nominal = (occupancy & (label == 0))[touched]
    in_blob = [(label == b)[touched] for b in blobs]
    thresholds = [np.inf] + sorted(set(s.tolist()), reverse=True)
    pts = []
    for t in thresholds:
        pos = s >= t
        fpr = np.count_nonzero(pos & nominal) / n_nominal
        pro = np.mean([np.count_nonzero(pos & m) / n for m, n in zip(in_blob, blob_size)])
        pts.append((fpr, pro))
    return pts


def trapezoid_to_bound(points, bound):
    """Area of the polyline through ``points`` (already in sweep order) on [0, bound], over bound."""
    xs, ys = [p[0] for p in points], [p[1] for p in points]
    cx, cy = [], []
    for i, (x, y) in enumerate(zip(xs, ys)):
        if x <= bound:
            cx.append(x)
            cy.append(y)
            continue
        # first point past the bound: cut the segment from the previous point
        x0, y0 = xs[i - 1], ys[i - 1]
        cx.append(bound)
        cy.append(y0 + (y - y0) * (bound - x0) / (x - x0))
        break
    if cx[-1] < bound:
        cx.append(bound)
        cy.append(cy[-1])
    area = sum((cx[i + 1] - cx[i]) * (cy[i + 1] + cy[i]) / 2 for i in range(len(cx) - 1))
    return area / bound


def random_volume_case(rng, max_side=20, n_blobs=None, n_levels=None):
    """Random occupancy/labels/scores on a small grid; every blob and the nominal set non-empty."""
    dims = tuple(int(d) for d in rng.integers(4, max_side + 1, 3))
    n_blobs = int(rng.integers(1, 5)) if n_blobs is None else n_blobs
    occ = rng.uniform(size=dims) < rng.uniform(0.2, 0.6)
    lab = np.zeros(dims, np.int64)
    occ_idx = np.argwhere(occ)
    ids = rng.choice(np.arange(1, 40), n_blobs, replace=False)
    for b in ids:
        c = occ_idx[rng.integers(len(occ_idx))]
        r = rng.integers(1, 4)
        lo, hi = np.maximum(c - r, 0), c + r + 1
        box = np.zeros(dims, bool)
        box[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = True
        lab[box & occ & (lab == 0)] = b
        lab[tuple(c)] = b
    present = set(np.unique(lab)) - {0}
    nominal = occ & (lab == 0)
    if not nominal.any():
        free = np.argwhere(lab == 0)
        occ[tuple(free[0])] = True
    touched = rng.uniform(size=dims) < rng.uniform(0.3, 1.0)
    if n_levels is None:
        score = rng.uniform(size=dims)
    else:
        score = rng.integers(0, n_levels, dims) / n_levels
    # defect voxels skew high so curves are non-trivial
    score = np.where(lab != 0, score + rng.uniform(0, 0.5), score)
    score = np.where(touched, score, 0.0)
    return dims, occ, lab, score, touched, sorted(present)
