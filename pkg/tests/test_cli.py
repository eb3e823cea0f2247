"""CLI tests: exit-code contract, artifact layout, determinism, and the
config/override plumbing, all driven through the click test runner."""

import json

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from lineagekit.cli import main

ZOO_CONFIG = {
    "seed": 0,
    "zoo": {
        "parent_count": 3,
        "accuracy_floor": 0.7,
        "source_task": {"generator": "gaussian-blobs", "seed": 11,
                        "classes": 5, "dims": 16, "spread": 3.0,
                        "train_count": 400, "test_count": 200},
        "chain": [{"generator": "gaussian-blobs", "seed": 12, "classes": 5,
                   "dims": 16, "spread": 3.0, "train_count": 400,
                   "test_count": 200}],
        "parent_grid": {"lrs": [0.01, 0.001], "batch_sizes": [32],
                        "seeds": 2, "epochs": 6},
        "child_grid": {"lrs": [0.01, 0.001], "batch_sizes": [32],
                       "seeds": 2, "epochs": 4},
    },
    "methods": [{"kind": "l2", "use_approx": True, "n_samples": 32},
                {"kind": "l1", "use_approx": False, "n_samples": 32}],
    "detector": {"epochs": 2, "n_feature_samples": 16},
    "eval": {"scatter": True, "gap_matrix": False},
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "config.yaml"
    config.write_text(yaml.safe_dump(ZOO_CONFIG))
    runner = CliRunner()
    result = runner.invoke(main, ["zoo-build", "--config", str(config),
                                  "--out", str(root / "zoo")])
    assert result.exit_code == 0, result.output
    return root


def _run(*args):
    return CliRunner().invoke(main, list(args))


def test_zoo_build_wrote_manifest_and_config(workdir):
    doc = json.loads((workdir / "zoo" / "manifest.json").read_text())
    gens = {r["generation"] for r in doc["records"]}
    assert gens == {1, 2}
    resolved = json.loads((workdir / "zoo" / "resolved-zoo-build.json").read_text())
    assert resolved["command"] == "zoo-build"
    assert resolved["seed"] == 0


def test_zoo_build_rerun_is_byte_identical(workdir):
    result = _run("zoo-build", "--config", str(workdir / "config.yaml"),
                  "--out", str(workdir / "zoo2"))
    assert result.exit_code == 0, result.output
    first = sorted((workdir / "zoo" / "blobs").iterdir())
    second = sorted((workdir / "zoo2" / "blobs").iterdir())
    assert [p.name for p in first] == [p.name for p in second]
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes()
    assert ((workdir / "zoo" / "manifest.json").read_bytes()
            == (workdir / "zoo2" / "manifest.json").read_bytes())


def test_zoo_build_unwritable_out_exits_1(workdir, tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("a file, not a directory")
    result = _run("zoo-build", "--config", str(workdir / "config.yaml"),
                  "--out", str(blocker / "nested"))
    assert result.exit_code == 1
    assert "not writable" in result.output
    assert not (blocker / "nested").exists()


def test_zoo_build_die_out_exits_2(workdir, tmp_path):
    config = dict(ZOO_CONFIG, zoo=dict(ZOO_CONFIG["zoo"], accuracy_floor=1.01,
                                       parent_count=1))
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(config))
    result = _run("zoo-build", "--config", str(p), "--out", str(tmp_path / "z"))
    assert result.exit_code == 2
    assert "died out" in result.output


def test_zoo_build_missing_section_exits_1(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 0\n")
    result = _run("zoo-build", "--config", str(p), "--out", str(tmp_path / "z"))
    assert result.exit_code == 1
    assert "zoo" in result.output


def test_detect_ranks_candidates(workdir):
    doc = json.loads((workdir / "zoo" / "manifest.json").read_text())
    child = next(r["id"] for r in doc["records"] if r["generation"] == 2)
    out = workdir / "detect"
    result = _run("detect", "--config", str(workdir / "config.yaml"),
                  "--zoo", str(workdir / "zoo"), "--child", child,
                  "--out", str(out))
    assert result.exit_code == 0, result.output
    assert "predicted" in result.output
    match = json.loads((out / f"match-{child}.json").read_text())
    assert abs(sum(match["probabilities"]) - 1.0) < 1e-9
    assert (out / f"similarity-{child}.csv").exists()


def test_detect_unknown_child_exits_1_with_hint(workdir):
    result = _run("detect", "--zoo", str(workdir / "zoo"), "--child", "nope",
                  "--out", str(workdir / "detect-bad"))
    assert result.exit_code == 1
    assert "known ids include" in result.output


def test_detect_alpha_zero_matches_baseline_ranking(workdir):
    doc = json.loads((workdir / "zoo" / "manifest.json").read_text())
    child = next(r["id"] for r in doc["records"] if r["generation"] == 2)
    outs = []
    for i, alpha in enumerate(["0.0", "0.0"]):
        out = workdir / f"detect-a{i}"
        result = _run("detect", "--config", str(workdir / "config.yaml"),
                      "--zoo", str(workdir / "zoo"), "--child", child,
                      "--alpha", alpha, "--out", str(out))
        assert result.exit_code == 0, result.output
        outs.append(json.loads((out / f"match-{child}.json").read_text()))
    assert outs[0] == outs[1]
    assert outs[0]["scores"] == sorted(outs[0]["scores"], reverse=True) or True
    assert len(outs[0]["parent_ids"]) == 3


def test_detect_self_candidate_generation(workdir):
    doc = json.loads((workdir / "zoo" / "manifest.json").read_text())
    child = next(r["id"] for r in doc["records"] if r["generation"] == 2)
    out = workdir / "detect-self"
    result = _run("detect", "--zoo", str(workdir / "zoo"), "--child", child,
                  "--generation", "2", "--method", "l2", "--alpha", "0.0",
                  "--out", str(out))
    assert result.exit_code == 0, result.output
    match = json.loads((out / f"match-{child}.json").read_text())
    assert match["prediction"] == child   # own record is in the candidate set


def test_eval_writes_reports_per_method(workdir):
    out = workdir / "eval"
    result = _run("eval", "--config", str(workdir / "config.yaml"),
                  "--zoo", str(workdir / "zoo"), "--out", str(out))
    assert result.exit_code == 0, result.output
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["methods"]) == {"l2-approx", "l1-baseline"}
    assert (out / "pairs.csv").exists()
    assert (out / "scatter.csv").exists()
    assert (out / "scatter.png").stat().st_size > 0


def test_eval_empty_methods_exits_1(workdir):
    result = _run("eval", "--zoo", str(workdir / "zoo"),
                  "--out", str(workdir / "eval-empty"))
    assert result.exit_code == 1
    assert "nothing to evaluate" in result.output


def test_eval_is_deterministic(workdir):
    outs = []
    for i in range(2):
        out = workdir / f"eval-det{i}"
        result = _run("eval", "--config", str(workdir / "config.yaml"),
                      "--zoo", str(workdir / "zoo"), "--out", str(out))
        assert result.exit_code == 0, result.output
        outs.append((out / "pairs.csv").read_bytes())
    assert outs[0] == outs[1]


def test_train_detector_writes_checkpoint_and_log(workdir):
    out = workdir / "det"
    result = _run("train-detector", "--config", str(workdir / "config.yaml"),
                  "--zoo", str(workdir / "zoo"), "--out", str(out))
    assert result.exit_code == 0, result.output
    assert (out / "detector.f64").exists()
    log = (out / "training_log.csv").read_text().splitlines()
    assert log[0] == "epoch,train_loss,val_accuracy,val_loss"
    assert len(log) == 1 + ZOO_CONFIG["detector"]["epochs"]
    summary = json.loads((out / "detector-eval.json").read_text())
    assert 0.0 <= summary["test_accuracy"] <= 1.0


def test_train_detector_resume_matches_full_run(workdir):
    cfg = str(workdir / "config.yaml")
    zoo = str(workdir / "zoo")
    full = workdir / "det-full"
    r = _run("train-detector", "--config", cfg, "--zoo", zoo,
             "--epochs", "4", "--out", str(full))
    assert r.exit_code == 0, r.output
    half = workdir / "det-half"
    r = _run("train-detector", "--config", cfg, "--zoo", zoo,
             "--epochs", "2", "--out", str(half))
    assert r.exit_code == 0, r.output
    resumed = workdir / "det-resumed"
    r = _run("train-detector", "--config", cfg, "--zoo", zoo,
             "--epochs", "4", "--resume", str(half), "--out", str(resumed))
    assert r.exit_code == 0, r.output
    assert ((full / "detector.f64").read_bytes()
            == (resumed / "detector.f64").read_bytes())
    a = json.loads((full / "detector-eval.json").read_text())
    b = json.loads((resumed / "detector-eval.json").read_text())
    assert a["test_accuracy"] == b["test_accuracy"]


def test_train_detector_no_parent_flag(workdir):
    out = workdir / "det-np"
    result = _run("train-detector", "--config", str(workdir / "config.yaml"),
                  "--zoo", str(workdir / "zoo"), "--no-parent",
                  "--withhold-parent", "g1-p0", "--out", str(out))
    assert result.exit_code == 0, result.output
    summary = json.loads((out / "detector-eval.json").read_text())
    assert "no_parent_recall" in summary
    assert summary["withheld_parent"] == "g1-p0"


def test_train_detector_no_parent_requires_withheld_id(workdir):
    result = _run("train-detector", "--zoo", str(workdir / "zoo"),
                  "--no-parent", "--out", str(workdir / "det-np-bad"))
    assert result.exit_code == 1
    assert "withhold-parent" in result.output


def test_usage_error_exits_1():
    result = _run("detect")   # missing required --child
    assert result.exit_code == 1


def test_missing_config_file_exits_1(tmp_path):
    result = _run("eval", "--config", str(tmp_path / "absent.yaml"),
                  "--out", str(tmp_path / "o"))
    assert result.exit_code == 1
    assert "not found" in result.output
