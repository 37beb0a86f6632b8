import json

import pytest
import yaml

from vla_services.cli.harness_cli import (
    LOCK_FILE,
    MANIFEST_FILE,
    build_parser,
    cli_overrides,
    main,
    resolve_out_dir,
)


@pytest.fixture
def run_root(tmp_path, monkeypatch):
    root = tmp_path / "runs"
    monkeypatch.setenv("UNIVLA_RUN_DIR", str(root))
    return root


@pytest.fixture
def config_file(tmp_path, tiny_overrides):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(tiny_overrides))
    return path


def make_data(config_file, *extra):
    return main(["make-data", "-c", str(config_file), "--out", "data",
                 *extra])


class TestParsing:
    def test_out_dir_resolution(self, run_root, tmp_path):
        assert resolve_out_dir(None, "eval") == run_root / "eval"
        assert resolve_out_dir(tmp_path / "abs", "eval") == tmp_path / "abs"

    def test_flags_become_overrides(self):
        args = build_parser().parse_args(
            ["ablate", "--arms", "none,world_model", "--seeds", "0,1"])
        overrides = cli_overrides(args)
        assert overrides["ablation"]["strategies"] == ("none", "world_model")
        assert overrides["ablation"]["seeds"] == (0, 1)
        assert overrides["ablation"]["eval_episodes"] is None

    def test_no_command_is_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 2


class TestRunDirectory:
    def test_rerun_is_up_to_date(self, run_root, config_file, capsys):
        assert make_data(config_file) == 0
        manifest = json.loads((run_root / "data" / MANIFEST_FILE).read_text())
        assert manifest["command"] == "make-data"
        assert "dataset" in manifest["outputs"]
        assert not (run_root / "data" / LOCK_FILE).exists()
        capsys.readouterr()
        assert make_data(config_file) == 0
        assert "up to date" in capsys.readouterr().out

    def test_different_flags_need_force(self, run_root, config_file):
        assert make_data(config_file) == 0
        assert make_data(config_file, "--seed", "3") == 5
        assert make_data(config_file, "--seed", "3", "--force") == 0

    def test_modified_output_is_refused(self, run_root, config_file):
        assert make_data(config_file) == 0
        manifest = run_root / "data" / "dataset" / "manifest.csv"
        manifest.write_text(manifest.read_text() + "\n")
        assert make_data(config_file) == 5

    def test_locked_directory(self, run_root, config_file):
        (run_root / "data").mkdir(parents=True)
        (run_root / "data" / LOCK_FILE).write_text("12345")
        assert make_data(config_file) == 6

    def test_missing_input(self, run_root, tmp_path):
        code = main(["fit-codecs", "--dataset", str(tmp_path / "absent")])
        assert code == 3

    def test_unknown_config_section(self, run_root, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("wandb:\n  project: x\n")
        assert make_data(path) == 2

    def test_model_eval_needs_codecs(self, run_root):
        assert main(["eval", "--n", "1"]) == 2


def test_expert_eval(run_root):
    assert main(["eval", "--policy", "expert", "--n", "3",
                 "--out", "expert"]) == 0
    summary = json.loads((run_root / "expert" / "summary.json").read_text())
    assert summary["success_rate"] == 1.0
    assert summary["episodes"] == 3


def test_full_pipeline(run_root, config_file):
    common = ["-c", str(config_file)]
    assert make_data(config_file) == 0
    dataset = run_root / "data" / "dataset"
    assert main(["fit-codecs", "--dataset", str(dataset), "--out", "codecs",
                 *common]) == 0
    codecs = run_root / "codecs" / "codecs"
    assert main(["posttrain", "--dataset", str(dataset), "--codecs",
                 str(codecs), "--out", "stage1", *common]) == 0
    stage1 = run_root / "stage1" / "posttrain.ckpt"
    assert stage1.exists()
    assert main(["finetune", "--dataset", str(dataset), "--codecs",
                 str(codecs), "--init", str(stage1), "--out", "stage2",
                 *common]) == 0
    stage2 = run_root / "stage2" / "finetune.ckpt"
    metrics = (run_root / "stage2" / "metrics.jsonl").read_text()
    assert len(metrics.splitlines()) == 2
    assert main(["eval", "--checkpoint", str(stage2), "--codecs",
                 str(codecs), "--n", "2", "--out", "eval", *common]) == 0
    episodes = (run_root / "eval" / "episodes.csv").read_text().splitlines()
    assert len(episodes) == 3
    events = (run_root / "eval" / "events.jsonl").read_text().splitlines()
    assert all("levelname" in json.loads(line) for line in events)
