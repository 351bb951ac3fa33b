"""Command-line entry point: ``anomvol <command> ...``.

Exit codes: 0 success, 2 invalid input, 3 file I/O failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 2, 3


def _print_json(obj):
    from .io import dumps
    sys.stdout.write(dumps(obj))


def _load_camera(path):
    from .io import read_camera_json
    return read_camera_json(path)


def _load_chain(path):
    from .io import chain_from_dict, read_json
    return chain_from_dict(read_json(path))


# -- calib ------------------------------------------------------------------------------------


def cmd_calib_estimate(a):
    from .calibration import assess_calibration, estimate_sensor_to_camera, read_correspondences_csv, split_views
    from .io import write_pose_json
    intr, _ = _load_camera(a.camera)
    views = read_correspondences_csv(a.csv)
    holdout = []
    if a.n_estimate:
        views, holdout = split_views(views, a.n_estimate)
    est = estimate_sensor_to_camera(views, intr, restarts=a.restarts)
    write_pose_json(a.out, est)
    if holdout:
        _print_json(assess_calibration(est, holdout, intr, restarts=a.restarts).to_dict())


def cmd_calib_assess(a):
    from .calibration import assess_calibration, read_correspondences_csv
    from .io import read_pose_json
    intr, _ = _load_camera(a.camera)
    rep = assess_calibration(read_pose_json(a.pose), read_correspondences_csv(a.csv), intr, restarts=a.restarts)
    _print_json(rep.to_dict())


# -- preprocess --------------------------------------------------------------------------------


def cmd_preprocess(a):
    from .io import read_ply, write_camera_json, write_pfm, write_ply
    from .meshops import Bvh, pad_and_downsample_depth, padded_intrinsics, ransac_plane, remove_background, trace_view
    from .presets import BackgroundPreset, background_preset

    mesh = read_ply(a.mesh)
    preset = background_preset(a.object_class) if a.object_class else None
    if a.tau is not None:
        preset = BackgroundPreset(a.tau, a.alpha or 0.0)
    info = {"vertices_in": mesh.n_vertices}
    if preset is not None:
        plane = ransac_plane(mesh.vertices, preset.tau, a.iterations, a.sample_size, seed=a.seed)
        res = remove_background(mesh, plane, preset.alpha)
        mesh = res.mesh
        info.update(plane={"normal": plane.normal.tolist(), "d": plane.d}, tau=preset.tau, alpha=preset.alpha,
                    warning=res.warning)
    info["vertices_out"] = mesh.n_vertices
    write_ply(a.out_mesh, mesh)
    if a.depth_dir:
        intr, _ = _load_camera(a.camera)
        chain = _load_chain(a.chain)
        os.makedirs(a.depth_dir, exist_ok=True)
        bvh = Bvh(mesh)
        for i in range(chain.n_views):
            d = trace_view(bvh, intr, chain.mesh_to_camera(i)).depth
            if a.downsample:
                d = pad_and_downsample_depth(d, a.downsample)
            write_pfm(Path(a.depth_dir) / f"{i:02d}_depth.pfm", d.depth)
        if a.downsample:
            write_camera_json(Path(a.depth_dir) / "camera.json", padded_intrinsics(intr, a.downsample),
                              chain.sensor_to_camera)
        info["views"] = chain.n_views
    _print_json(info)


# -- gt ------------------------------------------------------------------------------------------


def cmd_gt_lift(a):
    from .annotate import export_conflicts, lift_annotations
    from .io import read_ply, read_png16, write_ply
    intr, _ = _load_camera(a.camera)
    chain = _load_chain(a.chain)
    mesh = read_ply(a.mesh)
    views = []
    for p in sorted(Path(a.annotations).glob("*.png")):
        views.append((read_png16(p), int(p.stem)))
    res = lift_annotations(mesh, views, chain, intr, tolerance=a.tolerance)
    write_ply(a.out, res.mesh)
    if a.conflicts:
        export_conflicts(a.conflicts, res)
    _print_json({"annotated_views": len(views), "labeled_vertices": int((res.labels != 0).sum()),
                 "conflicts": len(res.conflicts)})


def cmd_gt_voxelize(a):
    from .annotate import build_ground_truth
    from .io import read_json, read_ply, write_simv
    from .voxelgrid import GridSpec, grid_from_mesh
    mesh = read_ply(a.mesh)
    spec = GridSpec.from_dict(read_json(a.grid)) if a.grid else grid_from_mesh(mesh, a.voxel_size, a.padding)
    gt = build_ground_truth(mesh, spec)
    write_simv(a.out, gt)
    _print_json({"grid": spec.to_dict(), "occupied": int(gt.occupancy.sum()), "blobs": gt.blob_sizes()})


# -- fuse / score / evaluate -------------------------------------------------------------------


def cmd_fuse(a):
    from .evaluation import map_path
    from .fusion import fuse_instance, global_score
    from .io import read_pfm, write_simv
    from .manifest import load_manifest
    from .meshops import DepthMap
    m = load_manifest(a.manifest)
    r = m.instance(a.instance)
    maps = [read_pfm(map_path(a.maps, r.id, i)).astype(np.float64) for i in range(len(r.views))]
    depths = [DepthMap(read_pfm(m.path(v.depth)).astype(np.float64)) for v in r.views]
    vol, diags = fuse_instance(maps, depths, m.intrinsics, r.chain(m.sensor_to_camera), r.grid)
    write_simv(a.out, vol)
    _print_json({"instance": r.id, "global_score": global_score(vol), "views": diags})


def cmd_score(a):
    import warnings

    from .fusion import EmptyVolumeWarning, global_score
    from .io import read_simv
    vol = read_simv(a.volume)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EmptyVolumeWarning)
        s = global_score(vol)
    _print_json({"global_score": s, "empty_volume": bool(caught)})


def cmd_evaluate(a):
    from .evaluation import EvaluationOptions, evaluate
    from .manifest import load_manifest
    opts = EvaluationOptions(bound=a.bound, n_samples=a.n_samples, fpr_domain=a.fpr_domain, threads=a.threads,
                             gt_as_prediction=a.gt_as_prediction, write_volumes=a.write_volumes)
    run = evaluate(load_manifest(a.manifest), a.maps, a.out, opts)
    _print_json({"i_auroc": run.i_auroc, "v_aupro": run.v_aupro, "bound": a.bound, "report": str(Path(a.out) / "report.json")})


# -- synth / detect --------------------------------------------------------------------------------


def cmd_synth_make(a):
    from dataclasses import replace

    from .synthbench import PRESETS, write_dataset
    if a.preset not in PRESETS:
        raise ValueError(f"unknown preset {a.preset!r} (available: {', '.join(sorted(PRESETS))})")
    preset = PRESETS[a.preset]
    if a.n_nominal is not None:
        preset = replace(preset, n_nominal=a.n_nominal)
    if a.n_defective is not None:
        preset = replace(preset, n_defective=a.n_defective)
    path = write_dataset(a.out, preset, seed=a.seed)
    _print_json({"manifest": str(path)})


def cmd_detect_diff(a):
    from .manifest import load_manifest
    from .synthbench import detect_dataset
    detect_dataset(load_manifest(a.manifest), a.out, setup=a.setup)
    _print_json({"maps": str(a.out)})


def build_parser() -> argparse.ArgumentParser:
    from .metrics import DEFAULT_BOUND, DEFAULT_N_SAMPLES
    from .voxelgrid import DEFAULT_VOXEL_SIZE

    p = argparse.ArgumentParser(prog="anomvol", description="Multiview 3D anomaly evaluation toolkit.")
    p.add_argument("--threads", type=int, default=1, help="worker cap for instance-level parallelism (default 1)")
    sub = p.add_subparsers(dest="command", required=True)

    calib = sub.add_parser("calib", help="sensor-to-camera calibration").add_subparsers(dest="action", required=True)
    c = calib.add_parser("estimate", help="estimate the sensor-to-camera transform from dot correspondences")
    c.add_argument("--csv", required=True, help="correspondence CSV (view_id,u,v,Xp,Yp,Zp,Xs,Ys,Zs)")
    c.add_argument("--camera", required=True, help="camera JSON with intrinsics")
    c.add_argument("--out", required=True, help="output pose JSON")
    c.add_argument("--n-estimate", type=int, default=0,
                   help="use the first N views for estimation and assess on the rest (default: all views)")
    c.add_argument("--restarts", type=int, default=20)
    c.set_defaults(func=cmd_calib_estimate)
    c = calib.add_parser("assess", help="holdout residuals of a sensor-to-camera estimate")
    c.add_argument("--csv", required=True)
    c.add_argument("--camera", required=True)
    c.add_argument("--pose", required=True)
    c.add_argument("--restarts", type=int, default=20)
    c.set_defaults(func=cmd_calib_assess)

    c = sub.add_parser("preprocess", help="plane-based background removal and depth rendering")
    c.add_argument("--mesh", required=True)
    c.add_argument("--out-mesh", required=True)
    c.add_argument("--class", dest="object_class", help="use the shipped tau/alpha preset for this class")
    c.add_argument("--tau", type=float, help="RANSAC inlier threshold in mm (overrides --class)")
    c.add_argument("--alpha", type=float, help="plane offset toward the object in mm")
    c.add_argument("--iterations", type=int, default=1000)
    c.add_argument("--sample-size", type=int, default=10)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--camera", help="camera JSON (needed with --depth-dir)")
    c.add_argument("--chain", help="frame-chain JSON (needed with --depth-dir)")
    c.add_argument("--depth-dir", help="write one depth PFM per view here")
    c.add_argument("--downsample", type=int, default=0, help="pad and downsample depths to NxN (e.g. 1540)")
    c.set_defaults(func=cmd_preprocess)

    gt = sub.add_parser("gt", help="ground-truth construction").add_subparsers(dest="action", required=True)
    c = gt.add_parser("lift", help="lift 16-bit PNG annotations (named by view index) onto mesh vertices")
    c.add_argument("--mesh", required=True)
    c.add_argument("--camera", required=True)
    c.add_argument("--chain", required=True)
    c.add_argument("--annotations", required=True, help="directory of NN.png defect-ID images")
    c.add_argument("--out", required=True, help="labeled PLY")
    c.add_argument("--conflicts", help="CSV of vertices with disagreeing votes")
    c.add_argument("--tolerance", type=float, default=DEFAULT_VOXEL_SIZE, help="visibility depth tolerance, mm")
    c.set_defaults(func=cmd_gt_lift)
    c = gt.add_parser("voxelize", help="labeled mesh to SIMV ground-truth volume")
    c.add_argument("--mesh", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--grid", help="GridSpec JSON; default derives one from the mesh")
    c.add_argument("--voxel-size", type=float, default=DEFAULT_VOXEL_SIZE)
    c.add_argument("--padding", type=int, default=2)
    c.set_defaults(func=cmd_gt_voxelize)

    c = sub.add_parser("fuse", help="fuse one instance's anomaly maps into a SIMV volume")
    c.add_argument("--manifest", required=True)
    c.add_argument("--instance", required=True)
    c.add_argument("--maps", required=True, help="maps root: {maps}/{instance}/{view:02d}.pfm")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_fuse)

    c = sub.add_parser("score", help="global score of a SIMV anomaly volume")
    c.add_argument("--volume", required=True)
    c.set_defaults(func=cmd_score)

    c = sub.add_parser("evaluate", help="I-AUROC and V-AUPRO over a manifest's test set")
    c.add_argument("--manifest", required=True)
    c.add_argument("--maps", help="maps root: {maps}/{instance}/{view:02d}.pfm")
    c.add_argument("--out", required=True, help="report directory")
    c.add_argument("--bound", type=float, default=DEFAULT_BOUND)
    c.add_argument("--n-samples", type=int, default=DEFAULT_N_SAMPLES)
    c.add_argument("--fpr-domain", choices=["gt", "touched"], default="gt")
    c.add_argument("--gt-as-prediction", action="store_true", help="control run: score the GT volumes themselves")
    c.add_argument("--write-volumes", action="store_true")
    c.set_defaults(func=cmd_evaluate)

    synth = sub.add_parser("synth", help="synthetic datasets").add_subparsers(dest="action", required=True)
    c = synth.add_parser("make", help="render a synthetic class with manifest")
    c.add_argument("--out", required=True)
    c.add_argument("--preset", default="easy")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--n-nominal", type=int)
    c.add_argument("--n-defective", type=int)
    c.set_defaults(func=cmd_synth_make)

    detect = sub.add_parser("detect", help="reference detectors").add_subparsers(dest="action", required=True)
    c = detect.add_parser("diff", help="|box3(test) - box3(train)| anomaly maps for every test view")
    c.add_argument("--manifest", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--setup", choices=["real", "synth"], help="training setup when the manifest has both")
    c.set_defaults(func=cmd_detect_diff)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    try:
        a.func(a)
    except OSError as e:
        print(f"anomvol: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as e:
        print(f"anomvol: {e}", file=sys.stderr)
        return getattr(e, "exit_code", EXIT_INVALID)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
