import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anomvol.metrics import (
    DEFAULT_BOUND,
    DEFAULT_N_SAMPLES,
    InstanceScore,
    MetricsError,
    ProCurve,
    auroc,
    binarize,
    fpr_at,
    i_auroc,
    pro_at,
    pro_curve,
    sample_curve,
    v_aupro,
    volume_aupro,
)
from anomvol.voxelgrid import AnomalyVolume, GridSpec, GroundTruthVolume

from oracles import exhaustive_pro_points, pair_count_auroc, random_volume_case, trapezoid_to_bound


def volumes(dims, occ, lab, score, touched):
    spec = GridSpec([0, 0, 0], 2.0, dims)
    return AnomalyVolume(spec, score, touched), GroundTruthVolume(spec, occ, lab)


def simple_case():
    dims = (4, 4, 4)
    occ = np.zeros(dims, bool)
    occ[:, :, 0] = True
    lab = np.zeros(dims, int)
    lab[0, 0, 0] = lab[0, 1, 0] = 1
    lab[3, 3, 0] = 2
    return dims, occ, lab


def test_defaults():
    assert DEFAULT_BOUND == 0.01
    assert DEFAULT_N_SAMPLES == 200


# -- auroc -------------------------------------------------------------------------------------


def test_auroc_examples():
    assert auroc([0.1, 0.2], [0.3, 0.9]) == 1.0
    assert auroc([0.5] * 4, [0.5] * 3) == 0.5
    assert auroc([1.0], [0.0]) == 0.0
    with pytest.raises(MetricsError):
        auroc([], [1.0])
    with pytest.raises(MetricsError):
        i_auroc([InstanceScore("a", 1.0, True)])


def test_i_auroc_records():
    s = [InstanceScore("n1", 0.1, False), InstanceScore("n2", 0.4, False), InstanceScore("a1", 0.4, True)]
    assert i_auroc(s) == pair_count_auroc([0.1, 0.4], [0.4])
    with pytest.raises(MetricsError):
        InstanceScore("x", float("nan"), True)


def test_auroc_pair_count_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = rng.integers(1, 100)
        sc = np.round(rng.normal(size=200), 1)  # coarse rounding forces ties
        lab = rng.uniform(size=200) < 0.5
        lab[0], lab[1] = True, False
        assert auroc(sc[~lab], sc[lab]) == pair_count_auroc(sc[~lab], sc[lab])


# -- binarize / pro / fpr ---------------------------------------------------------------------------


def test_binarize_examples():
    rng = np.random.default_rng(1)
    dims = (5, 5, 5)
    touched = rng.uniform(size=dims) < 0.5
    score = np.where(touched, rng.uniform(size=dims), 0)
    vol = AnomalyVolume(GridSpec([0, 0, 0], 2, dims), score, touched)
    assert not binarize(vol, score.max() + 1).any()
    np.testing.assert_array_equal(binarize(vol, score[touched].min()), touched)
    np.testing.assert_array_equal(binarize(vol, 0.5), touched & (score >= 0.5))
    assert binarize(vol, score.max()).any()


def test_pro_fpr_examples():
    dims, occ, lab = simple_case()
    _, gt = volumes(dims, occ, lab, np.zeros(dims), np.zeros(dims, bool))
    assert pro_at(lab > 0, gt) == 1.0
    assert pro_at(np.zeros(dims, bool), gt) == 0.0
    half = np.zeros(dims, bool)
    half[0, 0, 0] = True
    assert pro_at(half, gt) == pytest.approx(0.25)
    assert fpr_at(np.zeros(dims, bool), gt) == 0.0
    assert fpr_at(occ & (lab == 0), gt) == 1.0
    # predictions off the object surface do not count as false positives
    assert fpr_at(~occ, gt) == 0.0


def test_pro_fpr_errors():
    dims = (3, 3, 3)
    spec = GridSpec([0, 0, 0], 2, dims)
    empty_gt = GroundTruthVolume(spec, np.ones(dims, bool), np.zeros(dims, int))
    with pytest.raises(MetricsError):
        pro_at(np.zeros(dims, bool), empty_gt)
    all_defect = GroundTruthVolume(spec, np.ones(dims, bool), np.ones(dims, int))
    with pytest.raises(MetricsError):
        fpr_at(np.zeros(dims, bool), all_defect)
    with pytest.raises(MetricsError):
        pro_at(np.zeros((2, 2, 2), bool), all_defect)


def test_pro_fpr_counting_oracle():
    rng = np.random.default_rng(2)
    for _ in range(10):
        dims, occ, lab, score, touched, blobs = random_volume_case(rng, 15, n_blobs=3)
        vol, gt = volumes(dims, occ, lab, score, touched)
        for t in rng.uniform(0, 1.2, 5):
            b = binarize(vol, t)
            ref_pro = np.mean([sum(b[idx] for idx in zip(*np.nonzero(lab == k))) / np.sum(lab == k) for k in blobs])
            nom = list(zip(*np.nonzero(occ & (lab == 0))))
            ref_fpr = sum(b[idx] for idx in nom) / len(nom)
            assert pro_at(b, gt) == pytest.approx(ref_pro, abs=1e-15)
            assert fpr_at(b, gt) == ref_fpr


def test_fpr_touched_domain():
    dims, occ, lab = simple_case()
    touched = np.zeros(dims, bool)
    touched[:, :, 1] = True  # off-surface predictions
    touched[1, 1, 0] = True
    score = touched.astype(float)
    vol, gt = volumes(dims, occ, lab, score, touched)
    b = binarize(vol, 0.5)
    assert fpr_at(b, gt, domain="touched", touched=touched) == 1.0
    assert fpr_at(b, gt) == pytest.approx(1 / 13)
    with pytest.raises(MetricsError):
        fpr_at(b, gt, domain="touched")


# -- curve / aupro -------------------------------------------------------------------------------------


def test_curve_perfect_prediction():
    dims, occ, lab = simple_case()
    vol, gt = volumes(dims, occ, lab, (lab > 0).astype(float), occ)
    c = pro_curve(vol, gt)
    assert (0.0, 1.0) in [tuple(p) for p in c.points()]
    assert v_aupro(c) == 1.0


def test_curve_constant_scores():
    dims, occ, lab = simple_case()
    vol, gt = volumes(dims, occ, lab, np.where(occ, 0.5, 0.0), occ)
    c = pro_curve(vol, gt)
    assert [tuple(p) for p in c.points()] == [(0.0, 0.0), (1.0, 1.0)]


def test_curve_invariants():
    rng = np.random.default_rng(3)
    for _ in range(20):
        vol, gt = volumes(*random_volume_case(rng)[:5])
        c = pro_curve(vol, gt)
        assert c.fpr[0] == 0 and np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.pro) >= 0)
        assert np.all((c.pro >= 0) & (c.pro <= 1)) and np.all((c.fpr >= 0) & (c.fpr <= 1))
        s = pro_curve(vol, gt, n_samples=50, exact=False)
        assert len(s) <= 51 and np.all(np.diff(s.fpr) >= 0)
        # sampled points are achieved breakpoints of the exact curve
        pts = {tuple(p) for p in c.points()}
        assert all(tuple(p) in pts for p in s.points())


def test_curve_matches_exhaustive_sweep():
    rng = np.random.default_rng(4)
    for _ in range(15):
        dims, occ, lab, score, touched, _ = random_volume_case(rng, 10, n_levels=7)
        vol, gt = volumes(dims, occ, lab, score, touched)
        ref = exhaustive_pro_points(score, touched, occ, lab)
        got = [tuple(p) for p in pro_curve(vol, gt).points()]
        assert len(got) == len(ref)
        np.testing.assert_allclose(got, ref, atol=1e-12)


def test_v_aupro_matches_oracle():
    rng = np.random.default_rng(5)
    for _ in range(15):
        dims, occ, lab, score, touched, _ = random_volume_case(rng, 12)
        vol, gt = volumes(dims, occ, lab, score, touched)
        pts = exhaustive_pro_points(score, touched, occ, lab)
        for bound in (0.01, 0.05, 0.3, 1.0):
            assert v_aupro(pro_curve(vol, gt), bound) == pytest.approx(trapezoid_to_bound(pts, bound), abs=1e-9)
            assert volume_aupro(vol, gt, bound) == pytest.approx(trapezoid_to_bound(pts, bound), abs=1e-9)


def test_v_aupro_flat_extension_and_errors():
    c = ProCurve(np.array([0.0, 0.0, 0.004]), np.array([0.0, 0.5, 0.75]), np.array([np.inf, 2, 1]))
    # 0..0.004 trapezoid from 0.5 to 0.75, then 0.75 carried to 0.01
    assert v_aupro(c, 0.01) == pytest.approx((0.004 * 0.625 + 0.006 * 0.75) / 0.01)
    with pytest.raises(MetricsError):
        v_aupro(c, 0.0)
    with pytest.raises(MetricsError):
        ProCurve(np.array([]), np.array([]), np.array([]))
    with pytest.raises(MetricsError):
        pro_curve(*volumes(*simple_case(), np.zeros((4, 4, 4)), np.zeros((4, 4, 4), bool)), n_samples=1)


def test_gt_as_prediction_is_perfect():
    rng = np.random.default_rng(6)
    for _ in range(10):
        dims, occ, lab, *_ = random_volume_case(rng)
        vol, gt = volumes(dims, occ, lab, (lab != 0).astype(float), occ)
        assert v_aupro(pro_curve(vol, gt)) == 1.0
        vol, gt = volumes(dims, occ, lab, (lab != 0).astype(float), lab != 0)
        assert v_aupro(pro_curve(vol, gt)) == 1.0


def test_sample_curve():
    c = ProCurve(np.array([0.0, 0.0, 0.5, 0.5, 1.0]), np.array([0.0, 0.2, 0.4, 0.8, 1.0]),
                 np.array([np.inf, 5, 4, 3, 2]))
    s = sample_curve(c, 1.0, 5)
    np.testing.assert_allclose(s, [[0, 0.2], [0.25, 0.3], [0.5, 0.8], [0.75, 0.9], [1.0, 1.0]])
    s = sample_curve(ProCurve(np.array([0.0, 0.001]), np.array([0.0, 1.0]), np.array([np.inf, 1])), 0.01, 3)
    np.testing.assert_allclose(s[:, 1], [0.0, 1.0, 1.0])


# -- invariances ------------------------------------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["exp", "cube", "affine", "logistic"]))
def test_monotone_transform_invariance(seed, kind):
    rng = np.random.default_rng(seed)
    f = {"exp": np.exp, "cube": lambda x: x ** 3 + x, "affine": lambda x: 3 * x + 7,
         "logistic": lambda x: 1 / (1 + np.exp(-4 * x))}[kind]
    dims, occ, lab, score, touched, _ = random_volume_case(rng, 10, n_levels=5)
    vol, gt = volumes(dims, occ, lab, score, touched)
    vol2 = AnomalyVolume(vol.spec, np.where(touched, f(score), 0.0), touched)
    for bound in (0.01, 0.3):
        assert abs(v_aupro(pro_curve(vol, gt), bound) - v_aupro(pro_curve(vol2, gt), bound)) <= 1e-9
    sc = np.round(rng.normal(size=40), 1)
    lab_i = np.arange(40) % 2 == 0
    assert auroc(sc[~lab_i], sc[lab_i]) == auroc(f(sc[~lab_i]), f(sc[lab_i]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_pro_fpr_monotone_in_threshold(seed):
    rng = np.random.default_rng(seed)
    vol, gt = volumes(*random_volume_case(rng, 10)[:5])
    ts = np.sort(rng.uniform(0, 1.5, 8))
    pros = [pro_at(binarize(vol, t), gt) for t in ts]
    fprs = [fpr_at(binarize(vol, t), gt) for t in ts]
    assert all(a >= b for a, b in zip(pros, pros[1:]))
    assert all(a >= b for a, b in zip(fprs, fprs[1:]))
    assert 0 <= v_aupro(pro_curve(vol, gt)) <= 1
