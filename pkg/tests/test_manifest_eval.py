import copy
import hashlib
import json

import numpy as np
import pytest

from anomvol.evaluation import EvaluationOptions, MissingInputsError, evaluate, map_path
from anomvol.io import read_json, write_json
from anomvol.manifest import (
    FORMAT,
    ManifestInvariantError,
    ManifestSchemaError,
    MissingFilesError,
    SingleInstanceError,
    load_manifest,
    manifest_from_dict,
    save_manifest,
)

IDENTITY = {"rotation": [1, 0, 0, 0, 1, 0, 0, 0, 1], "translation": [0, 0, 0]}


def stool_like(n_views=12):
    """1 training instance and 10 + 10 test instances, each with 12 views."""
    def inst(iid, role, condition):
        views = [{"image": f"{iid}/{v:02d}.png", "depth": f"{iid}/{v:02d}_depth.pfm",
                  "pose": IDENTITY if v == 0 else {"rotation": IDENTITY["rotation"], "translation": [v, 0, 0]}}
                 for v in range(n_views)]
        d = {"id": iid, "role": role, "setup": "real", "condition": condition, "mesh": f"{iid}/mesh.ply",
             "grid": {"origin": [0, 0, 0], "voxel_size": 2.0, "dims": [330, 326, 317]}, "views": views}
        if condition == "anomalous":
            d["gt_volume"] = f"{iid}/gt.simv"
        return d
    insts = [inst("train", "train", "nominal")]
    insts += [inst(f"good_{i:02d}", "test", "nominal") for i in range(10)]
    insts += [inst(f"bad_{i:02d}", "test", "anomalous") for i in range(10)]
    return {"format": FORMAT, "object": "Plastic Stool",
            "intrinsics": {"fx": 3000.0, "fy": 3000.0, "cx": 2047.5, "cy": 1499.5, "width": 4096, "height": 3000},
            "sensor_to_camera": IDENTITY, "instances": insts}


def touch_all(root, d):
    m = manifest_from_dict(d, root)
    for f in m.referenced_files():
        p = m.path(f)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(b"")


def test_stool_like_manifest(tmp_path):
    d = stool_like()
    touch_all(tmp_path, d)
    write_json(tmp_path / "manifest.json", d)
    m = load_manifest(tmp_path / "manifest.json")
    assert len(m.train) == 1 and len(m.test) == 20
    assert sum(r.anomalous for r in m.test) == 10
    assert all(len(r.views) == 12 for r in m.instances)
    assert m.instance("bad_03").grid.dims == (330, 326, 317)
    save_manifest(tmp_path / "a.json", m)
    save_manifest(tmp_path / "b.json", load_manifest(tmp_path / "a.json"))
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


@pytest.mark.parametrize("n_views", [1, 36])
def test_view_counts_accepted(n_views):
    m = manifest_from_dict(stool_like(n_views))
    assert all(len(r.views) == n_views for r in m.instances)


def test_two_train_instances_rejected():
    d = stool_like()
    d["instances"][1]["role"] = "train"
    d["instances"][1].pop("condition")
    with pytest.raises(SingleInstanceError, match="single-instance violated"):
        manifest_from_dict(d)
    # one training instance per setup is fine
    d["instances"][1]["setup"] = "synth"
    assert len(manifest_from_dict(d).train) == 2


def test_distinct_errors(tmp_path):
    d = stool_like()
    bad = copy.deepcopy(d)
    bad["instances"][0]["role"] = "validation"
    with pytest.raises(ManifestSchemaError):
        manifest_from_dict(bad)
    bad = copy.deepcopy(d)
    bad["instances"][3]["id"] = bad["instances"][2]["id"]
    with pytest.raises(ManifestInvariantError):
        manifest_from_dict(bad)
    bad = copy.deepcopy(d)
    bad["instances"][2]["views"][0]["pose"]["translation"] = [1, 0, 0]
    with pytest.raises(ManifestInvariantError):
        manifest_from_dict(bad)
    bad = copy.deepcopy(d)
    bad["instances"][2].pop("condition")
    with pytest.raises(ManifestInvariantError):
        manifest_from_dict(bad)
    write_json(tmp_path / "m.json", d)
    with pytest.raises(MissingFilesError) as e:
        load_manifest(tmp_path / "m.json")
    assert len(e.value.missing) == 21 * (1 + 24) + 10
    assert load_manifest(tmp_path / "m.json", check_files=False).object_name == "Plastic Stool"


# -- evaluation on the tiny synthetic preset ------------------------------------------------------


def tree_digest(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_synthetic_round_trip(tiny_dataset):
    path, _ = tiny_dataset
    m = load_manifest(path)
    assert [r.id for r in m.test] == sorted(r.id for r in m.test)
    assert m.train[0].id == "train_000" and len(m.test) == 4
    assert manifest_from_dict(m.to_dict(), m.root).to_dict() == m.to_dict()


def test_evaluate_tiny(tiny_dataset, tmp_path):
    path, maps = tiny_dataset
    m = load_manifest(path)
    before = tree_digest(path.parent)
    run = evaluate(m, maps, tmp_path / "out")
    assert tree_digest(path.parent) == before
    assert run.setup == "synth2synth"
    assert run.i_auroc == 1.0 and run.v_aupro > 0.5
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["i_auroc"] == run.i_auroc and rep["bound"] == 0.01 and len(rep["curve"]) == 200
    assert [r["id"] for r in rep["per_instance"]] == [r.id for r in m.test]
    assert all(len(r["views"]) == 12 for r in rep["per_instance"])
    curves = sorted(p.name for p in (tmp_path / "out" / "curves").iterdir())
    assert curves == ["mean.csv"] + sorted(f"{r.id}.csv" for r in m.test if r.anomalous)
    rows = (tmp_path / "out" / "curves" / "mean.csv").read_text().splitlines()
    assert rows[0] == "fpr,pro" and len(rows) == 201


def test_report_bytes_independent_of_order_and_threads(tiny_dataset, tmp_path):
    path, maps = tiny_dataset
    d = read_json(path)
    rng = np.random.default_rng(0)
    d["instances"] = [d["instances"][i] for i in rng.permutation(len(d["instances"]))]
    write_json(path.parent / "shuffled.json", d)
    evaluate(load_manifest(path), maps, tmp_path / "a")
    evaluate(load_manifest(path.parent / "shuffled.json"), maps, tmp_path / "b", EvaluationOptions(threads=4))
    (path.parent / "shuffled.json").unlink()
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")


def test_gt_as_prediction_control(tiny_dataset, tmp_path):
    path, _ = tiny_dataset
    run = evaluate(load_manifest(path), None, tmp_path, EvaluationOptions(gt_as_prediction=True, write_volumes=True))
    assert run.v_aupro == 1.0
    assert all(r.v_aupro == 1.0 for r in run.results if r.anomalous)
    assert len(list((tmp_path / "volumes").glob("*.simv"))) == 4


def test_missing_inputs_listed_together(tiny_dataset, tmp_path):
    path, maps = tiny_dataset
    m = load_manifest(path)
    with pytest.raises(MissingInputsError) as e:
        evaluate(m, tmp_path / "no-maps", tmp_path / "out")
    assert len(e.value.missing) == 4 * 12
    assert e.value.exit_code == 3
    assert str(map_path(tmp_path / "no-maps", m.test[0].id, 0)) in str(e.value)
