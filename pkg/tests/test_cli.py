import json
import os

import pytest

from process_painter import DATASET_FILES
from process_painter.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from process_painter.edit_ops import AddObject
from process_painter.evalharness import REPORT_JSON
from process_painter.microworld import Canvas
from process_painter.scene_graph import ObjectNode

PROMPT = "red circle above blue square"


@pytest.fixture
def config(tmp_path):
    """A config small enough for every subcommand to finish quickly."""
    path = tmp_path / "config.json"
    path.write_text(
        json.dumps(
            {
                "scale": 1.0,
                "run": {"k_hint": 2},
                "dataset": {"targets": {"multiturn": 3, "conflict": 4, "alignment": 3}},
                "eval": {"n": 2, "categories": ["single-object", "position"]},
            }
        )
    )
    return str(path)


def _last_json(text):
    return json.loads(text.strip().splitlines()[-1])


def test_run_prints_the_trajectory(tmp_path, config, capsys):
    out = str(tmp_path / "out")
    code = main(["run", "--config", config, "--prompt", PROMPT, "--seed", "7", "--fault-rate", "0", "--out", out])
    assert code == EXIT_OK
    stdout = capsys.readouterr().out
    assert stdout.count(" P  <ins>") == 2
    assert "success: true" in stdout
    summary = _last_json(stdout)
    assert summary["meta"]["steps"] == 2
    assert summary["tokens"][-1] == "<|endoftext|>"
    assert os.path.exists(os.path.join(out, "trajectory_7.json"))


def test_run_with_faults_still_exits_cleanly(tmp_path, config):
    args = ["run", "--config", config, "--prompt", PROMPT, "--fault-rate", "0.6", "--refine-rounds", "0"]
    assert main([*args, "--out", str(tmp_path), "-q"]) == EXIT_OK


def test_run_in_editing_mode(tmp_path, capsys):
    initial = tmp_path / "initial.json"
    initial.write_text(json.dumps(Canvas().execute([AddObject(ObjectNode("circle", "red"))]).render().to_list()))
    args = ["run", "--prompt", "red circle left-of blue square", "--initial", str(initial), "--fault-rate", "0"]
    args += ["--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    assert "success: true" in capsys.readouterr().out


def test_usage_errors():
    assert main([]) == EXIT_USAGE
    assert main(["run"]) == EXIT_USAGE
    assert main(["run", "--prompt", PROMPT, "--verbose", "--quiet"]) == EXIT_USAGE
    assert main(["--version"]) == EXIT_OK


def test_config_errors(tmp_path, capsys):
    assert main(["verify-math", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert _last_json(capsys.readouterr().err)["error"] == "config"
    assert main(["verify-math", "--workers", "0"]) == EXIT_CONFIG
    bad_image = tmp_path / "image.json"
    bad_image.write_text("{")
    assert main(["run", "--prompt", PROMPT, "--initial", str(bad_image), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_runtime_errors(tmp_path, capsys):
    assert main(["run", "--prompt", "red blob", "--out", str(tmp_path)]) == EXIT_RUNTIME
    record = _last_json(capsys.readouterr().err)
    assert record["error"] == "dsl-syntax"
    assert main(["stats", "--out", str(tmp_path / "empty")]) == EXIT_RUNTIME


def test_verify_math(capsys):
    assert main(["verify-math", "--instances", "10"]) == EXIT_OK
    stdout = capsys.readouterr().out
    assert "FAIL" not in stdout
    assert stdout.count("PASS") == 8


def test_verify_math_uses_the_configured_loss_weight(tmp_path, capsys):
    path = tmp_path / "flow.json"
    path.write_text(json.dumps({"flow": {"lambda_ce": 0.5}}))
    assert main(["verify-math", "--config", str(path), "--instances", "5"]) == EXIT_OK
    assert "configured lambda_ce=0.5" in capsys.readouterr().out


def test_run_refuses_an_unhealthy_judge(tmp_path, capsys):
    args = ["run", "--prompt", PROMPT, "--judge-url", "http://127.0.0.1:9", "--out", str(tmp_path)]
    assert main(args) == EXIT_RUNTIME
    assert _last_json(capsys.readouterr().err)["error"] == "judge"
    assert not os.path.exists(os.path.join(tmp_path, "trajectory_0.json"))


def test_dataset_then_stats(tmp_path, config, capsys):
    out = str(tmp_path / "data")
    assert main(["gen-dataset", "--config", config, "--out", out, "-q"]) == EXIT_OK
    built = json.loads(capsys.readouterr().out)
    assert built["conflict"]["records"] == 4
    assert main(["stats", "--config", config, "--out", out]) == EXIT_OK
    capsys.readouterr()

    path = os.path.join(out, DATASET_FILES["multiturn"])
    with open(path, encoding="utf-8") as f:
        lines = f.readlines()
    with open(path, "w", encoding="utf-8") as f:
        f.writelines(lines[1:])
    assert main(["stats", "--config", config, "--out", out]) == EXIT_RUNTIME
    assert main(["stats", "--config", config, "--out", out, "--no-check"]) == EXIT_OK


def test_eval_writes_reports(tmp_path, config, capsys):
    out = str(tmp_path / "eval")
    assert main(["eval", "--config", config, "--out", out, "--fault-rates", "0", "0.3", "-q"]) == EXIT_OK
    assert "fault rate 0.3" in capsys.readouterr().out
    with open(os.path.join(out, REPORT_JSON), encoding="utf-8") as f:
        assert len(json.load(f)) == 2
