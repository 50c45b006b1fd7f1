import json
import shutil

import numpy as np
import pytest

from salaudit.config import config_from_dict
from salaudit.dataio import read_json, read_scores, write_raw_dataset
from salaudit.errors import ConfigError, FormatError
from salaudit.model import ground_truth_saliency, oracle_manifest
from salaudit.perturbation import PerturbationSpec
from salaudit.pipeline import (
    RANDOM_BASELINE,
    StageError,
    prepare,
    read_random_orderings,
    run_pipeline,
    run_reliability,
    run_saliency,
    run_scoring,
)
from salaudit.dataio import dataset_mean, write_saliency_archive
from salaudit.reliability import MetricVariant
from salaudit.synthetic import synthetic_suite


def small(tmp_path, name="out", **overrides):
    cfg = {
        "seed": 5,
        "dataset": {"kind": "synthetic", "n_images": 24, "height": 8, "width": 8, "n_classes": 3},
        "methods": ["sensitivity", "gradient-x-input", "edge", "random", "ground-truth"],
        "L": [4, 16],
        "faithfulness_pixels": 20,
        "random_orderings": 10,
        "bootstrap_resamples": 200,
        "out": str(tmp_path / name),
    }
    cfg.update(overrides)
    return config_from_dict(cfg)


@pytest.fixture(scope="module")
def base_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = small(tmp)
    report = run_pipeline(cfg)
    return cfg, report, tmp / "out"


def test_outputs_written(base_run):
    cfg, report, out = base_run
    for name in ("DONE", "scores.csv", "aopc_summary.csv", "random_orderings.csv", "report.json", "metadata.json"):
        assert (out / name).exists(), name
    for m in cfg.methods:
        assert (out / "maps" / f"{m}.salm").exists()
        assert (out / "maps" / f"{m}.salm.ids.json").exists()
    assert (out / "curves" / "ground-truth__AOPC_MoRF_mean.csv").exists()
    assert (out / "curves" / f"{RANDOM_BASELINE}__AOPC_random_random-rgb.csv").exists()
    curve = (out / "curves" / "edge__AOPC_LeRF_mean.csv").read_text().splitlines()
    assert curve[0] == "image_id,k,drop"
    assert len(curve) == 1 + 24 * 17


def test_metadata_contents(base_run):
    cfg, _, out = base_run
    meta = read_json(out / "metadata.json")
    assert meta["config"]["seed"] == 5
    assert len(meta["faithfulness_pixel_sample"]) == 20
    assert len(set(meta["faithfulness_pixel_sample"])) == 20
    assert len(meta["dataset"]["mean"]) == 3
    assert meta["conventions"]["gradient_target"] == "pre-softmax logit"
    assert set(meta["timings_seconds"]) == {"load", "maps", "scores", "reliability", "report"}
    assert meta["L_grid"] == [4, 16]


def test_score_rows_complete(base_run):
    cfg, _, out = base_run
    table = read_scores(out / "scores.csv")
    per_method = 2 * (1 + 2 * 2)  # perturbations x (F + orders x L)
    assert len(table) == 24 * (5 * per_method + 2 * 2 * 2)
    assert table.methods()[-1] == RANDOM_BASELINE


def test_ground_truth_ranks_first_on_morf_every_image(base_run):
    _, report, out = base_run
    table = read_scores(out / "scores.csv")
    for L in (4, 16):
        v = f"AOPC_MoRF:mean:L={L}"
        ids, mat = table.matrix(v, ["ground-truth", "sensitivity", "gradient-x-input", "edge", "random"])
        assert len(ids) == 24
        assert np.all(mat[:, 0] >= mat[:, 1:].max(axis=1) - 1e-12)
    # and never worse than any random ordering
    orderings = read_random_orderings(out / "random_orderings.csv")
    for L in (4, 16):
        ids, gt = table.matrix(f"AOPC_MoRF:mean:L={L}", ["ground-truth"])
        for i, g in zip(ids, gt[:, 0]):
            assert g >= orderings[("mean", L)][i].max() - 1e-9


def test_faithfulness_of_ground_truth_is_one(base_run):
    _, _, out = base_run
    ids, mat = read_scores(out / "scores.csv").matrix("F:mean", ["ground-truth"])
    assert np.all(np.abs(mat - 1.0) < 1e-6)  # 9 significant digits on disk


def test_report_structure(base_run):
    cfg, report, out = base_run
    assert read_json(out / "report.json") == report
    cols = report["table1"]["columns"]
    assert [(c["perturbation"], c["with_baseline"]) for c in cols] == [
        ("mean", True), ("random-rgb", True), ("mean", False), ("random-rgb", False)]
    metrics = [(r["metric"], r["L"]) for r in report["table1"]["rows"]]
    assert metrics == [("F", None), ("AOPC_MoRF", 4), ("AOPC_MoRF", 16), ("AOPC_LeRF", 4), ("AOPC_LeRF", 16)]
    for a in report["alpha"]:
        assert a["value"] is None or a["value"] <= 1.0
        assert set(a["ci_low"]) == {"0.95", "0.999"}
        assert RANDOM_BASELINE not in a["methods"]
        if not a["with_baseline"]:
            assert "edge" not in a["methods"]
    for e in report["inter_method"]:
        m = np.array(e["matrix"])
        assert np.all(np.abs(m) <= 1.0)
    assert {"mean", "random-rgb"} == set(report["method_ranking"])
    assert len(report["per_class"]) == 3
    assert report["random_baseline"][0]["orderings_per_image"] == 10
    pairs = {tuple(e["variant_pair"]) for e in report["internal_consistency"]}
    assert ("F:mean", "AOPC_MoRF:mean:L=16") in pairs
    assert ("AOPC_MoRF:random-rgb:L=16", "AOPC_MoRF:mean:L=16") in pairs


def test_report_matches_disk_recomputation(base_run):
    cfg, report, out = base_run
    again = run_reliability(cfg)
    assert again == read_json(out / "report.json")


def test_deleted_report_regenerates_identically(base_run, tmp_path):
    cfg, _, out = base_run
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    before = (copy / "report.json").read_bytes()
    (copy / "report.json").unlink()
    cfg2 = config_from_dict({**cfg.to_dict(), "out": str(copy)})
    run_reliability(cfg2)
    assert (copy / "report.json").read_bytes() == before


def test_rerun_and_threads_byte_identical(base_run, tmp_path):
    cfg, _, out = base_run
    cfg2 = config_from_dict({**cfg.to_dict(), "out": str(tmp_path / "t2"), "threads": 2})
    run_pipeline(cfg2)
    for name in ("report.json", "scores.csv", "random_orderings.csv", "aopc_summary.csv"):
        assert (tmp_path / "t2" / name).read_bytes() == (out / name).read_bytes(), name


def test_separate_stages_match_full_run(base_run, tmp_path):
    cfg, _, out = base_run
    cfg2 = config_from_dict({**cfg.to_dict(), "out": str(tmp_path / "staged")})
    run_saliency(cfg2)
    run_scoring(cfg2)
    run_reliability(cfg2)
    for name in ("report.json", "scores.csv"):
        assert (tmp_path / "staged" / name).read_bytes() == (out / name).read_bytes(), name


def test_baseline_choice_changes_only_statistics(base_run, tmp_path):
    cfg, report, out = base_run
    cfg2 = config_from_dict({**cfg.to_dict(), "out": str(tmp_path / "b"), "baseline_method": "random"})
    report2 = run_pipeline(cfg2)
    assert (tmp_path / "b" / "scores.csv").read_bytes() == (out / "scores.csv").read_bytes()
    assert report2["aggregates"] == report["aggregates"]
    with_b = [a for a in report["alpha"] if a["with_baseline"]]
    assert with_b == [a for a in report2["alpha"] if a["with_baseline"]]
    assert report2["alpha"] != report["alpha"]


def test_confidence_and_class_filters(base_run, tmp_path):
    cfg, _, out = base_run
    table = read_scores(out / "scores.csv")
    copy = tmp_path / "f"
    shutil.copytree(out, copy)
    keep = [i for i in table.image_ids() if table.image_info(i)[0] in (0, 2)]
    filtered = run_reliability(config_from_dict({**cfg.to_dict(), "out": str(copy), "classes": [0, 2]}))
    assert filtered["settings"]["n_images"] == len(keep)
    assert filtered["settings"]["n_images_before_filters"] == 24
    assert [c["class_label"] for c in filtered["per_class"]] == [0, 2]


def test_sigmoid_confidence_filter(tmp_path):
    cfg = small(tmp_path, methods=["sensitivity", "gradient-x-input", "edge"], model={"link": "sigmoid"},
                min_confidence=0.5)
    report = run_pipeline(cfg)
    table = read_scores(tmp_path / "out" / "scores.csv")
    confs = [table.image_info(i)[1] for i in table.image_ids()]
    assert all(0 < c < 1 for c in confs)
    assert report["settings"]["n_images"] == sum(c >= 0.5 for c in confs)


def test_filter_leaving_nothing_is_contract_error(base_run, tmp_path):
    cfg, _, out = base_run
    copy = tmp_path / "none"
    shutil.copytree(out, copy)
    cfg2 = config_from_dict({**cfg.to_dict(), "out": str(copy), "classes": [99]})
    with pytest.raises(StageError) as info:
        run_reliability(cfg2)
    assert info.value.stage == "reliability" and info.value.exit_code == 4


def test_corrupt_scores_stage_error(base_run, tmp_path):
    cfg, _, out = base_run
    copy = tmp_path / "bad"
    shutil.copytree(out, copy)
    with open(copy / "scores.csv", "a") as fh:
        fh.write("x,y\n")
    cfg2 = config_from_dict({**cfg.to_dict(), "out": str(copy)})
    with pytest.raises(StageError) as info:
        run_reliability(cfg2)
    assert info.value.stage == "reliability"
    assert isinstance(info.value.cause, FormatError)
    assert "reliability" in str(info.value)


def test_invalid_config_fails_in_load_stage(tmp_path):
    cfg = small(tmp_path, L=[2000])
    with pytest.raises(StageError) as info:
        run_pipeline(cfg)
    assert info.value.stage == "load" and isinstance(info.value.cause, ConfigError)
    assert not (tmp_path / "out").exists()


def test_failed_rerun_removes_done(base_run, tmp_path):
    cfg, _, out = base_run
    copy = tmp_path / "partial"
    shutil.copytree(out, copy)
    shutil.rmtree(copy / "maps")
    (copy / "maps").write_text("not a directory")
    with pytest.raises(StageError) as info:
        run_pipeline(config_from_dict({**cfg.to_dict(), "out": str(copy)}))
    assert info.value.stage == "maps"
    assert not (copy / "DONE").exists()


def test_imported_salm_scores_like_native(tmp_path):
    dataset, oracle = synthetic_suite(5, 24, 8, 8, 3, 3)
    spec = PerturbationSpec("mean", tuple(dataset_mean(dataset)[0]))
    maps = [ground_truth_saliency(oracle, img, spec) for img in dataset]
    for m in maps:
        object.__setattr__(m, "method_id", "external-gt")
    write_saliency_archive(maps, tmp_path / "gt.salm")
    cfg = small(tmp_path, methods=["edge", "ground-truth"], imports=[str(tmp_path / "gt.salm")])
    run_pipeline(cfg)
    table = read_scores(tmp_path / "out" / "scores.csv")
    for v in table.variants():
        if "random-rgb" in v and MetricVariant.parse(v).metric != "F":
            continue  # random-rgb AOPC streams are keyed by method id
        _, mat = table.matrix(v, ["ground-truth", "external-gt"])
        assert np.array_equal(mat[:, 0], mat[:, 1]), v


def test_import_collision_and_missing_ids(tmp_path):
    dataset, oracle = synthetic_suite(5, 24, 8, 8, 3, 3)
    spec = PerturbationSpec("mean", tuple(dataset_mean(dataset)[0]))
    maps = [ground_truth_saliency(oracle, img, spec) for img in dataset]
    write_saliency_archive(maps, tmp_path / "gt.salm")
    with pytest.raises(StageError) as info:
        run_pipeline(small(tmp_path, imports=[str(tmp_path / "gt.salm")]))
    assert info.value.exit_code == 2
    for m in maps:
        object.__setattr__(m, "method_id", "ext")
    write_saliency_archive(maps[:10], tmp_path / "few.salm")
    with pytest.raises(StageError) as info:
        run_pipeline(small(tmp_path, name="o2", imports=[str(tmp_path / "few.salm")]))
    assert info.value.stage == "maps" and info.value.exit_code == 3


def test_stored_dataset_and_oracle_files(tmp_path):
    dataset, oracle = synthetic_suite(5, 24, 8, 8, 3, 3)
    write_raw_dataset(dataset, tmp_path / "d.rawt")
    manifest, blob = oracle_manifest(oracle)
    (tmp_path / "o.json").write_text(json.dumps(manifest))
    (tmp_path / "o.bin").write_bytes(blob)
    cfg = small(tmp_path, name="stored", dataset={"kind": "raw", "paths": [str(tmp_path / "d.rawt")]},
                model={"kind": "affine-oracle", "manifest": str(tmp_path / "o.json"), "weights": str(tmp_path / "o.bin")})
    run_pipeline(cfg)
    ref = small(tmp_path, name="mem")
    run_pipeline(ref)
    assert (tmp_path / "stored" / "scores.csv").read_bytes() == (tmp_path / "mem" / "scores.csv").read_bytes()


def test_prepare_rejects_shape_mismatch(tmp_path):
    dataset, oracle = synthetic_suite(5, 4, 8, 8, 3, 3)
    write_raw_dataset(dataset, tmp_path / "d.rawt")
    _, other = synthetic_suite(5, 4, 6, 6, 3, 3)
    manifest, blob = oracle_manifest(other)
    (tmp_path / "o.json").write_text(json.dumps(manifest))
    (tmp_path / "o.bin").write_bytes(blob)
    cfg = small(tmp_path, dataset={"kind": "raw", "paths": [str(tmp_path / "d.rawt")]}, L=[4],
                model={"kind": "affine-oracle", "manifest": str(tmp_path / "o.json"), "weights": str(tmp_path / "o.bin")})
    with pytest.raises(StageError, match="does not match"):
        prepare(cfg)
