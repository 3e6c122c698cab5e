"""CLI lifecycle: gen-data, train, matrix, finetune, evaluate, fewshot, report."""

import json

import pytest

from gradia.cli import EXIT_CONFIG, EXIT_MISSING, EXIT_OK, EXIT_RUNTIME, main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One generated dataset plus a 2-epoch baseline shared by the read-only tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["gen-data", "--out", str(data), "--total", "60", "--seed", "5"]) == EXIT_OK
    cfg = root / "train.toml"
    cfg.write_text("[train]\nepochs = 2\nlearning_rate = 0.05\nbatch_size = 16\n")
    base_dir = root / "runs" / "baseline"
    assert (
        main(["train", "--data", str(data), "--config", str(cfg), "--out", str(base_dir)])
        == EXIT_OK
    )
    return {
        "root": root,
        "data": data,
        "params": base_dir / "params.bin",
        "runs": root / "runs",
    }


class TestGenData:
    def test_writes_manifest_and_images(self, tmp_path, capsys):
        out = tmp_path / "d"
        assert main(["gen-data", "--out", str(out), "--total", "20", "--seed", "1"]) == EXIT_OK
        assert (out / "manifest.jsonl").exists()
        lines = (out / "manifest.jsonl").read_text().strip().splitlines()
        assert len(lines) == 20
        first = json.loads(lines[0])
        assert (out / first["path"]).exists()
        assert "20 instances" in capsys.readouterr().out

    def test_deterministic_manifests(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["gen-data", "--out", str(out), "--total", "12", "--seed", "3"]) == EXIT_OK
        assert (a / "manifest.jsonl").read_bytes() == (b / "manifest.jsonl").read_bytes()

    def test_scene_table_overrides(self, tmp_path):
        cfg = tmp_path / "scene.toml"
        cfg.write_text(
            "[scene]\nimage_size = 24\nshape_size_range = [6, 9]\n\n"
            "[counts]\ntrain = 8\nvalidation = 2\ntest = 2\n"
        )
        out = tmp_path / "d"
        assert main(["gen-data", "--out", str(out), "--config", str(cfg)]) == EXIT_OK
        lines = (out / "manifest.jsonl").read_text().strip().splitlines()
        assert len(lines) == 12

    def test_unknown_scene_field_is_config_error(self, tmp_path):
        cfg = tmp_path / "scene.toml"
        cfg.write_text("[scene]\nsparkle = 3\n")
        assert main(["gen-data", "--out", str(tmp_path / "d"), "--config", str(cfg)]) == EXIT_CONFIG

    def test_invalid_scene_is_config_error(self, tmp_path):
        cfg = tmp_path / "scene.toml"
        cfg.write_text("[scene]\nshape_size_range = [10, 200]\n")
        assert main(["gen-data", "--out", str(tmp_path / "d"), "--config", str(cfg)]) == EXIT_CONFIG

    def test_impossible_placement_is_runtime_error(self, tmp_path):
        cfg = tmp_path / "scene.toml"
        cfg.write_text("[scene]\nimage_size = 20\nshape_size_range = [9, 9]\n")
        code = main(
            ["gen-data", "--out", str(tmp_path / "d"), "--config", str(cfg), "--total", "10"]
        )
        assert code == EXIT_RUNTIME


class TestTrain:
    def test_outputs(self, workspace, capsys):
        # re-run into a scratch dir to capture stdout for this test
        out = workspace["root"] / "runs" / "again"
        cfg = workspace["root"] / "train.toml"
        code = main(
            ["train", "--data", str(workspace["data"]), "--config", str(cfg), "--out", str(out)]
        )
        assert code == EXIT_OK
        printed = capsys.readouterr().out
        assert "train accuracy" in printed
        assert "m1_accuracy" in printed
        assert (out / "params.bin").exists()
        assert (out / "loss_curves.csv").read_text().startswith("step,term,value")
        cfg_json = json.loads((out / "config.json").read_text())
        assert cfg_json["epochs"] == 2

    def test_missing_dataset_dir(self, tmp_path, monkeypatch):
        monkeypatch.delenv("GRADIA_DATA_DIR", raising=False)
        assert main(["train", "--data", str(tmp_path / "nope")]) == EXIT_MISSING

    def test_no_dataset_argument(self, monkeypatch):
        monkeypatch.delenv("GRADIA_DATA_DIR", raising=False)
        assert main(["train"]) == EXIT_MISSING

    def test_bad_train_value_is_config_error(self, workspace, tmp_path):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("[train]\nlearning_rate = -0.5\n")
        code = main(["train", "--data", str(workspace["data"]), "--config", str(cfg)])
        assert code == EXIT_CONFIG

    def test_unknown_train_field_is_config_error(self, workspace, tmp_path):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("[train]\nwarmup = 3\n")
        code = main(["train", "--data", str(workspace["data"]), "--config", str(cfg)])
        assert code == EXIT_CONFIG


class TestMatrix:
    def test_counts_cover_split(self, workspace, capsys):
        code = main(
            ["matrix", "--data", str(workspace["data"]), "--params", str(workspace["params"])]
        )
        assert code == EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert payload["total"] == 9
        assert sum(payload["counts"].values()) == 9

    def test_env_var_supplies_dataset(self, workspace, capsys, monkeypatch):
        monkeypatch.setenv("GRADIA_DATA_DIR", str(workspace["data"]))
        code = main(["matrix", "--params", str(workspace["params"])])
        assert code == EXIT_OK
        assert json.loads(capsys.readouterr().out)["total"] == 9

    def test_missing_params_archive(self, workspace):
        code = main(
            ["matrix", "--data", str(workspace["data"]), "--params", "/no/such/params.bin"]
        )
        assert code == EXIT_MISSING


class TestFinetuneAndReport:
    def test_finetune_writes_manifest(self, workspace, tmp_path, capsys):
        ft_cfg = tmp_path / "ft.toml"
        ft_cfg.write_text("[train]\nepochs = 1\nbatch_size = 16\n")
        out = workspace["runs"] / "c2"
        code = main(
            [
                "finetune",
                "--data", str(workspace["data"]),
                "--params", str(workspace["params"]),
                "--condition", "C2",
                "--config", str(ft_cfg),
                "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        printed = capsys.readouterr().out
        assert "-- after --" in printed
        assert (out / "matrix.json").exists()
        matrix = json.loads((out / "matrix.json").read_text())
        assert matrix["condition"] == "C2"
        for name in ("config.json", "metrics_before.txt", "metrics_after.txt", "params.bin"):
            assert (out / name).exists()

    def test_report_tabulates_runs(self, workspace, capsys):
        assert main(["report", "--runs", str(workspace["runs"])]) == EXIT_OK
        printed = capsys.readouterr().out
        assert printed.splitlines()[0].startswith("run")
        assert "c2" in printed

    def test_report_without_manifests(self, tmp_path):
        (tmp_path / "empty").mkdir()
        assert main(["report", "--runs", str(tmp_path / "empty")]) == EXIT_MISSING


class TestEvaluate:
    def test_prints_metrics_and_counts(self, workspace, capsys):
        code = main(
            [
                "evaluate",
                "--data", str(workspace["data"]),
                "--params", str(workspace["params"]),
                "--split", "test",
            ]
        )
        assert code == EXIT_OK
        printed = capsys.readouterr().out
        assert "m1_accuracy" in printed and "m3_mean_iou" in printed
        counts = json.loads(printed.strip().splitlines()[-1])
        assert sum(counts["counts"].values()) == 9


class TestFewshot:
    def test_two_arm_study_runs(self, workspace, tmp_path, capsys):
        out = tmp_path / "fs"
        code = main(
            [
                "fewshot",
                "--data", str(workspace["data"]),
                "--params", str(workspace["params"]),
                "--shots", "1",
                "--num-seeds", "1",
                "--weight", "0.5",
                "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        printed = capsys.readouterr().out
        assert "baseline: mean auc" in printed
        assert "gradia: mean auc" in printed
        payload = json.loads((out / "fewshot.json").read_text())
        assert set(payload) == {"baseline", "gradia"}
        assert len(payload["gradia"]["per_seed"]) == 1


class TestArgumentErrors:
    def test_unknown_command(self):
        assert main(["frobnicate"]) == EXIT_CONFIG

    def test_missing_required_params_flag(self):
        assert main(["evaluate"]) == EXIT_CONFIG

    def test_shots_outside_menu(self, workspace):
        code = main(
            [
                "fewshot",
                "--data", str(workspace["data"]),
                "--params", str(workspace["params"]),
                "--shots", "7",
            ]
        )
        assert code == EXIT_CONFIG
