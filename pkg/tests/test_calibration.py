import numpy as np
import pytest

from anomvol.calibration import (
    CalibrationError,
    CalibrationView,
    Correspondences2D3D,
    Correspondences3D3D,
    DegenerateConfigurationError,
    _initial_pose,
    assess_calibration,
    estimate_sensor_to_camera,
    kabsch_umeyama,
    mean_reprojection_error,
    read_correspondences_csv,
    refine_poses,
    simulate_views,
    solve_pnp,
    write_correspondences_csv,
)
from anomvol.geometry import CameraIntrinsics, RigidTransform, project_points, random_rotation

INTR = CameraIntrinsics(3500, 3500, 2048, 1500, 4096, 3000, [-0.08, 0.05, 0.0, 0.0008, -0.0004])
PINHOLE = CameraIntrinsics(3500, 3500, 2048, 1500, 4096, 3000)


def _rand_t(rng, scale=200.0):
    return RigidTransform(random_rotation(rng), rng.uniform(-scale, scale, 3))


def test_pnp_identity_pose():
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.uniform(-50, 50, (30, 2)), rng.uniform(450, 550, 30)])
    uv = project_points(INTR, X)
    pose = solve_pnp(Correspondences2D3D(uv, X), INTR)
    assert pose.allclose(RigidTransform.identity(), 1e-9)


@pytest.mark.parametrize("planar", [True, False])
def test_pnp_random_pose_noise_free(planar):
    rng = np.random.default_rng(1)
    for _ in range(5):
        X = rng.uniform(-60, 60, (40, 3))
        if planar:
            X[:, 2] = 0
        R = random_rotation(rng)
        true = RigidTransform(R, np.array([0, 0, 500.0]) - R @ X.mean(axis=0) + rng.uniform(-30, 30, 3))
        if np.any(true.apply(X)[:, 2] < 100):
            continue
        c = Correspondences2D3D(project_points(INTR, true.apply(X)), X)
        pose = solve_pnp(c, INTR)
        assert mean_reprojection_error(INTR, pose, c) < 1e-6
        assert pose.allclose(true, 1e-6)


def test_pnp_noise_translation_error_under_1mm():
    rng = np.random.default_rng(2)
    pc = _rand_t(rng)
    for _ in range(50):
        view = simulate_views(rng, 1, INTR, pc)[0]
        true_uv = view.pixels
        true = solve_pnp(Correspondences2D3D(true_uv, view.pattern), INTR)
        assert len(view.pattern) == 50
        noisy = true_uv + rng.normal(scale=0.2, size=true_uv.shape)
        est = solve_pnp(Correspondences2D3D(noisy, view.pattern), INTR)
        assert np.linalg.norm(est.translation - true.translation) < 1.0


def test_pnp_result_not_worse_than_restarts():
    rng = np.random.default_rng(3)
    pc = _rand_t(rng)
    view = simulate_views(rng, 1, INTR, pc, pixel_noise=0.2)[0]
    c = view.pnp_input
    pose = solve_pnp(c, INTR, seed=7)
    chosen = mean_reprojection_error(INTR, pose, c)
    R0, t0 = _initial_pose(INTR, c)
    X = view.pattern
    starts = [random_rotation(rng) for _ in range(20)]
    cands = refine_poses(INTR, X, view.pixels, np.stack(starts),
                         np.stack([R0 @ X.mean(0) + t0 - R @ X.mean(0) for R in starts]))
    finite = [cand for cand in cands if np.isfinite(cand.cost)]
    assert finite
    for cand in finite:
        err = mean_reprojection_error(INTR, RigidTransform(cand.rotation, cand.translation), c)
        assert chosen <= err + 1e-9


def test_refinement_cost_non_increasing():
    rng = np.random.default_rng(4)
    pc = _rand_t(rng)
    view = simulate_views(rng, 1, INTR, pc, pixel_noise=0.3)[0]
    X = view.pattern
    R0, t0 = _initial_pose(INTR, view.pnp_input)
    starts = [random_rotation(rng) for _ in range(10)]
    res = refine_poses(INTR, X, view.pixels, np.stack([R0] + starts), np.stack([t0] * 11))
    for r in res:
        h = np.array(r.cost_history)
        assert np.all(np.diff(h[np.isfinite(h)]) <= 0)


def test_pnp_collinear_rejected():
    X = np.column_stack([np.arange(8.0), np.zeros(8), np.zeros(8)])
    uv = np.random.default_rng(0).uniform(0, 100, (8, 2))
    with pytest.raises(DegenerateConfigurationError):
        solve_pnp(Correspondences2D3D(uv, X), INTR)


def test_correspondence_validation():
    with pytest.raises(CalibrationError):
        Correspondences2D3D(np.zeros((5, 2)), np.eye(5, 3))
    X = np.random.default_rng(0).normal(size=(6, 3))
    X[1] = X[0]
    with pytest.raises(CalibrationError):
        Correspondences2D3D(np.zeros((6, 2)), X)


def test_kabsch_identity_and_random():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(20, 3)) * 100
    assert kabsch_umeyama(Correspondences3D3D(a, a)).allclose(RigidTransform.identity(), 1e-12)
    for _ in range(20):
        t = _rand_t(rng)
        b = t.apply(a)
        est = kabsch_umeyama(Correspondences3D3D(a, b))
        rms = np.sqrt(np.mean(np.sum((est.apply(a) - b) ** 2, axis=1)))
        assert rms < 1e-9


def test_kabsch_noise():
    rng = np.random.default_rng(6)
    for _ in range(20):
        a = rng.uniform(-100, 100, (60, 3))
        b = _rand_t(rng).apply(a) + rng.normal(scale=0.1, size=(60, 3))
        est = kabsch_umeyama(Correspondences3D3D(a, b))
        assert np.sqrt(np.mean(np.sum((est.apply(a) - b) ** 2, axis=1))) < 1.0


def test_kabsch_is_least_squares_among_perturbations():
    rng = np.random.default_rng(7)
    a = rng.uniform(-100, 100, (30, 3))
    b = _rand_t(rng).apply(a) + rng.normal(scale=1.0, size=(30, 3))
    est = kabsch_umeyama(Correspondences3D3D(a, b))

    def cost(t):
        return np.sum((t.apply(a) - b) ** 2)

    best = cost(est)
    from anomvol.geometry import rotation_from_axis_angle
    for _ in range(200):
        dR = rotation_from_axis_angle(rng.normal(scale=1e-3, size=3))
        pert = RigidTransform(dR @ est.rotation, est.translation + rng.normal(scale=0.05, size=3))
        assert cost(pert) >= best - 1e-9


def test_kabsch_never_reflects():
    rng = np.random.default_rng(8)
    for _ in range(20):
        a = rng.normal(size=(10, 3))
        b = a * np.array([1, 1, -1])  # mirror image
        est = kabsch_umeyama(Correspondences3D3D(a, b))
        assert np.linalg.det(est.rotation) > 0
    flat = np.column_stack([rng.normal(size=(10, 2)), np.zeros(10)])
    est = kabsch_umeyama(Correspondences3D3D(flat, flat * [1, -1, 1]))
    assert np.linalg.det(est.rotation) > 0


def test_kabsch_collinear_rejected():
    a = np.column_stack([np.arange(5.0), np.arange(5.0), np.arange(5.0)])
    with pytest.raises(DegenerateConfigurationError):
        kabsch_umeyama(Correspondences3D3D(a, a))


def test_estimate_exact_and_consistent():
    rng = np.random.default_rng(9)
    pc = _rand_t(rng)
    views = simulate_views(rng, 20, INTR, pc)
    one = estimate_sensor_to_camera(views[:1], INTR)
    assert one.allclose(pc, 1e-9)
    many = estimate_sensor_to_camera(views, INTR)
    assert many.allclose(one, 1e-9)
    perm = [views[i] for i in rng.permutation(20)]
    assert estimate_sensor_to_camera(perm, INTR).allclose(many, 1e-9)


def test_estimate_noisy_holdout():
    rng = np.random.default_rng(10)
    pc = _rand_t(rng)
    views = simulate_views(rng, 20, INTR, pc, pixel_noise=0.2, srf_noise=0.05)
    est = estimate_sensor_to_camera(views[:15], INTR)
    rep = assess_calibration(est, views[15:], INTR)
    assert rep.rms < 1.0
    assert rep.rms <= rep.max
    assert len(rep.residuals) == sum(len(v.pattern) for v in views[15:])


def test_error_carries_view_index():
    rng = np.random.default_rng(11)
    pc = _rand_t(rng)
    views = simulate_views(rng, 2, INTR, pc)
    flat = np.column_stack([np.arange(50.0), np.zeros(50), np.zeros(50)])
    bad = CalibrationView(views[1].pixels, flat, views[1].srf, view_id=42)
    with pytest.raises(DegenerateConfigurationError, match="view 42"):
        estimate_sensor_to_camera([views[0], bad], INTR)
    with pytest.raises(CalibrationError):
        estimate_sensor_to_camera([], INTR)


def test_assess_examples():
    rng = np.random.default_rng(12)
    pc = _rand_t(rng)
    views = simulate_views(rng, 5, PINHOLE, pc)
    rep = assess_calibration(pc, views, PINHOLE)
    assert rep.rms < 1e-9
    shifted = RigidTransform(pc.rotation, pc.translation + np.array([2.0, 0, 0]))
    rep = assess_calibration(shifted, views, PINHOLE)
    assert rep.rms == pytest.approx(2.0, rel=0.1)
    with pytest.raises(CalibrationError):
        assess_calibration(pc, [], PINHOLE)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    views = simulate_views(rng, 3, INTR, _rand_t(rng), pixel_noise=0.2, srf_noise=0.05)
    p = tmp_path / "c.csv"
    write_correspondences_csv(p, views)
    back = read_correspondences_csv(p)
    assert [v.view_id for v in back] == [0, 1, 2]
    for a, b in zip(views, back):
        np.testing.assert_array_equal(a.pixels, b.pixels)
        np.testing.assert_array_equal(a.pattern, b.pattern)
        np.testing.assert_array_equal(a.srf, b.srf)
    p2 = tmp_path / "c2.csv"
    write_correspondences_csv(p2, back)
    assert p.read_bytes() == p2.read_bytes()
