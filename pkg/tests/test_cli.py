"""Command-line behavior: artifacts, manifests, error codes, reproducibility."""

import json

import numpy as np
import pytest

from mature.cli import main
from mature.store import load_any

FAST = ["--hidden", "8", "--tau", "6", "--segments", "2", "--segment-size", "4",
        "--epochs", "2", "--batch-size", "32", "--lr", "0.01",
        "--test-days", "3", "--val-fraction", "0.25"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    code = main(["generate", "--out", str(root), "--n-intensive", "6",
                 "--n-sparse", "3", "--days", "12", "--seed", "1"])
    assert code == 0
    return root / "dataset.bin"


@pytest.fixture(scope="module")
def mt_run(tmp_path_factory, dataset):
    out = tmp_path_factory.mktemp("mt")
    code = main(["train", "--data", str(dataset), "--model", "mt-lstm",
                 "--out", str(out), "--force", *FAST])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def ha_run(tmp_path_factory, dataset):
    out = tmp_path_factory.mktemp("ha")
    code = main(["train", "--data", str(dataset), "--model", "ha",
                 "--out", str(out), "--force", "--tau", "6",
                 "--test-days", "3", "--val-fraction", "0.25"])
    assert code == 0
    return out


class TestGenerate:
    def test_outputs_and_manifest(self, dataset):
        run = dataset.parent
        for name in ("dataset.bin", "intensive.csv", "sparse.csv",
                     "resolved_config.json", "manifest.json"):
            assert (run / name).exists(), name
        manifest = json.loads((run / "manifest.json").read_text())
        assert manifest["command"] == "generate"
        assert {o["path"] for o in manifest["outputs"]} >= {
            "dataset.bin", "intensive.csv", "sparse.csv"}
        resolved = json.loads((run / "resolved_config.json").read_text())
        assert resolved["params"]["synth"]["days"] == 12
        assert resolved["config_hash"] == manifest["config_hash"]

    def test_deterministic_given_seed(self, dataset, tmp_path):
        code = main(["generate", "--out", str(tmp_path / "again"),
                     "--n-intensive", "6", "--n-sparse", "3", "--days", "12",
                     "--seed", "1"])
        assert code == 0
        assert (tmp_path / "again" / "dataset.bin").read_bytes() == \
            dataset.read_bytes()

    def test_zero_sparse_stations_is_a_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["generate", "--out", str(tmp_path / "x"), "--n-sparse", "0"])
        assert exc.value.code == 2


class TestTrain:
    def test_network_run_artifacts(self, mt_run):
        for name in ("checkpoint.bin", "history.csv", "history.png",
                     "resolved_config.json", "manifest.json"):
            assert (mt_run / name).exists(), name
        history = (mt_run / "history.csv").read_text().strip().splitlines()
        assert history[0] == "epoch,train_loss,val_loss,lr"
        assert len(history) == 3  # header + 2 epochs
        resolved = json.loads((mt_run / "resolved_config.json").read_text())
        assert resolved["params"]["model"]["kind"] == "MT-LSTM"
        assert resolved["params"]["model"]["n_hidden"] == 8
        assert resolved["params"]["training"]["epochs"] == 2

    def test_manifest_digests_match_files(self, mt_run):
        import hashlib
        manifest = json.loads((mt_run / "manifest.json").read_text())
        for entry in manifest["outputs"]:
            blob = (mt_run / entry["path"]).read_bytes()
            assert hashlib.sha256(blob).hexdigest() == entry["sha256"]
            assert len(blob) == entry["bytes"]

    def test_checkpoint_reloads_with_norms(self, mt_run):
        kind, model, extra = load_any(mt_run / "checkpoint.bin")
        assert kind == "MT-LSTM"
        assert set(extra["norms"]) == {"intensive", "sparse"}
        assert extra["stations"]["sparse"] == ["S000", "S001", "S002"]

    def test_baseline_run_has_no_history(self, ha_run):
        assert (ha_run / "checkpoint.bin").exists()
        assert not (ha_run / "history.csv").exists()
        kind, model, extra = load_any(ha_run / "checkpoint.bin")
        assert kind == "HA"
        assert model.table.shape[1] == 3

    def test_missing_data_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--model", "lstm"])
        assert exc.value.code == 2

    def test_nonempty_run_dir_needs_force(self, dataset, mt_run, capsys):
        code = main(["train", "--data", str(dataset), "--model", "lstm",
                     "--out", str(mt_run), *FAST])
        assert code == 1
        assert "E_CONFIG" in capsys.readouterr().err

    def test_unknown_config_key_rejected(self, dataset, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text('{"training": {"learning_rte": 0.1}}')
        code = main(["train", "--data", str(dataset), "--model", "lstm",
                     "--config", str(cfg), "--out", str(tmp_path / "run")])
        assert code == 1
        err = capsys.readouterr().err
        assert err.startswith("E_CONFIG")
        assert "learning_rte" in err

    def test_rerun_is_bitwise_identical(self, dataset, mt_run, tmp_path):
        out = tmp_path / "rerun"
        code = main(["train", "--data", str(dataset), "--model", "mt-lstm",
                     "--out", str(out), *FAST])
        assert code == 0
        for name in ("checkpoint.bin", "history.csv", "history.png"):
            assert (out / name).read_bytes() == (mt_run / name).read_bytes(), name

    def test_resolved_config_replays_exactly(self, dataset, mt_run, tmp_path):
        out = tmp_path / "replay"
        code = main(["train", "--data", str(dataset),
                     "--config", str(mt_run / "resolved_config.json"),
                     "--out", str(out)])
        assert code == 0
        assert (out / "checkpoint.bin").read_bytes() == \
            (mt_run / "checkpoint.bin").read_bytes()


class TestEvaluate:
    def test_report_and_dumps(self, dataset, mt_run, tmp_path):
        out = tmp_path / "eval"
        code = main(["evaluate", "--checkpoint", str(mt_run / "checkpoint.bin"),
                     "--data", str(dataset), "--out", str(out)])
        assert code == 0
        lines = (out / "report.csv").read_text().strip().splitlines()
        assert lines[0] == "spec,mode,seed,MAE,RMSE"
        assert len(lines) == 3
        for line in lines[1:]:
            spec, mode, seed, m, r = line.split(",")
            assert float(r) >= float(m) >= 0.0
        for role in ("intensive", "sparse"):
            assert (out / f"predictions_{role}.csv").exists()
            assert (out / f"predictions_{role}.png").exists()

    def test_baseline_checkpoint_evaluates(self, dataset, ha_run, tmp_path):
        out = tmp_path / "eval_ha"
        code = main(["evaluate", "--checkpoint", str(ha_run / "checkpoint.bin"),
                     "--data", str(dataset), "--out", str(out)])
        assert code == 0
        lines = (out / "report.csv").read_text().strip().splitlines()
        assert len(lines) == 2
        assert lines[1].startswith("HA,sparse,")

    def test_station_mismatch_names_checkpoint(self, mt_run, tmp_path, capsys):
        other = tmp_path / "other"
        main(["generate", "--out", str(other), "--n-intensive", "6",
              "--n-sparse", "4", "--days", "12", "--seed", "2"])
        code = main(["evaluate", "--checkpoint", str(mt_run / "checkpoint.bin"),
                     "--data", str(other / "dataset.bin"),
                     "--out", str(tmp_path / "eval")])
        assert code == 1
        err = capsys.readouterr().err
        assert err.startswith("E_CHECKPOINT")
        assert "stations" in err

    def test_wrong_container_rejected(self, dataset, tmp_path, capsys):
        code = main(["evaluate", "--checkpoint", str(dataset),
                     "--data", str(dataset), "--out", str(tmp_path / "e")])
        assert code == 1
        assert capsys.readouterr().err.startswith("E_CHECKPOINT")


class TestPredict:
    def test_multi_task_prediction(self, dataset, mt_run, capsys):
        src = dataset.parent
        code = main(["predict", "--checkpoint", str(mt_run / "checkpoint.bin"),
                     "--window-csv", str(src / "intensive.csv"),
                     "--window-csv-sparse", str(src / "sparse.csv")])
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "timestamp,mode,station_id,prediction"
        assert len(lines) == 1 + 6 + 3
        assert all(np.isfinite(float(ln.split(",")[3])) for ln in lines[1:])

    def test_multi_task_needs_both_windows(self, dataset, mt_run, capsys):
        code = main(["predict", "--checkpoint", str(mt_run / "checkpoint.bin"),
                     "--window-csv", str(dataset.parent / "intensive.csv")])
        assert code == 1
        assert capsys.readouterr().err.startswith("E_CONFIG")

    def test_baseline_prediction_to_file(self, dataset, ha_run, tmp_path):
        out = tmp_path / "pred.csv"
        code = main(["predict", "--checkpoint", str(ha_run / "checkpoint.bin"),
                     "--window-csv", str(dataset.parent / "sparse.csv"),
                     "--out", str(out)])
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 4


class TestCompareAndSweep:
    def test_compare_artifacts(self, dataset, tmp_path):
        out = tmp_path / "cmp"
        code = main(["compare", "--data", str(dataset), "--out", str(out),
                     "--specs", "ha,lr,lstm", "--seeds", "0,1", *FAST])
        assert code == 0
        runs = (out / "runs.csv").read_text().strip().splitlines()
        assert runs[0] == "spec,mode,seed,MAE,RMSE"
        assert len(runs) == 1 + 3 * 2       # three kinds x two seeds, sparse only
        summary = (out / "summary.csv").read_text().strip().splitlines()
        assert len(summary) == 1 + 3
        assert (out / "comparison.png").exists()

    def test_unknown_spec_is_usage_error(self, dataset, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["compare", "--data", str(dataset),
                  "--out", str(tmp_path / "x"), "--specs", "ha,gru"])
        assert exc.value.code == 2

    def test_sweep_grid_artifacts(self, dataset, tmp_path):
        out = tmp_path / "swp"
        code = main(["sweep-gamma", "--data", str(dataset), "--out", str(out),
                     "--grid", "0:1:0.5", "--seeds", "0", "--epochs", "1",
                     "--hidden", "8", "--tau", "6", "--segments", "2",
                     "--segment-size", "4", "--batch-size", "32",
                     "--test-days", "3", "--val-fraction", "0.25"])
        assert code == 0
        summary = (out / "sweep_summary.csv").read_text().strip().splitlines()
        assert len(summary) == 1 + 3 * 2    # three gammas x two modes
        gammas = {ln.split(",")[0] for ln in summary[1:]}
        assert gammas == {"0.0", "0.5", "1.0"}
        assert (out / "sweep.png").exists()


class TestGradcheckCommand:
    def test_single_kind_passes(self, capsys):
        code = main(["gradcheck", "--model", "lstm", "--tolerance", "1e-4"])
        assert code == 0
        out = capsys.readouterr().out
        assert "== LSTM ==" in out
        assert "PASS" in out
        assert "max rel err" in out

    def test_impossible_tolerance_fails(self, capsys):
        code = main(["gradcheck", "--model", "mlp", "--tolerance", "1e-18"])
        assert code == 1
        captured = capsys.readouterr()
        assert "FAIL" in captured.out
        assert "E_GRADCHECK" in captured.err

    def test_baseline_kind_rejected(self, capsys):
        code = main(["gradcheck", "--model", "ha"])
        assert code == 1
        assert "E_SPEC" in capsys.readouterr().err


class TestRunRoot:
    def test_env_var_sets_default_directory(self, dataset, tmp_path, monkeypatch):
        monkeypatch.setenv("MATURE_RUN_ROOT", str(tmp_path / "root"))
        code = main(["generate", "--n-intensive", "4", "--n-sparse", "2",
                     "--days", "10", "--seed", "0"])
        assert code == 0
        assert (tmp_path / "root" / "generate" / "dataset.bin").exists()
