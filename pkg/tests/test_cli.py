import json

import pytest

from promptdiag.cli import build_parser, main

from .conftest import prompts, questions


def write_questions(path, items):
    path.write_text("".join(json.dumps({"id": i, "input": t}) + "\n" for i, t in items))
    return str(path)


@pytest.fixture
def files(tmp_path):
    (tmp_path / "pa.json").write_text(json.dumps(prompts("A", 3)))
    (tmp_path / "pb.json").write_text(json.dumps(prompts("B", 3)))
    (tmp_path / "base.txt").write_text("Answer the question.\n")
    (tmp_path / "task.txt").write_text("Answer the question.\n")
    return {
        "pa": str(tmp_path / "pa.json"),
        "pb": str(tmp_path / "pb.json"),
        "q": write_questions(tmp_path / "q.jsonl", questions(6)),
        "held": write_questions(tmp_path / "h.jsonl", questions(20, "h")),
        "base": str(tmp_path / "base.txt"),
        "task": str(tmp_path / "task.txt"),
        "dir": tmp_path,
    }


def config(tmp_path, **mock):
    lines = ["[executor]", "backend = mock", "max_concurrency = 2"]
    lines += [f"mock_{k} = {v}" for k, v in mock.items()]
    lines += ["[diagnose]", "threshold = 2.0", "[prose]", "population_size = 20"]
    path = tmp_path / "cfg.ini"
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def test_tensor_subcommands(tmp_path, capsys):
    out = tmp_path / "syn"
    assert main(["synth", "--k-a", "4", "--k-b", "4", "--n", "5", "--seed", "2", "--out", str(out)]) == 0
    tensor = str(out / "tensor.jsonl")
    assert main(["anova", "--tensor", tensor, "--json"]) == 0
    payload = json.loads(capsys.readouterr().out.split("\n", 1)[1])
    assert payload["verdict"] == "DECOUPLED"
    assert main(["landscape", "--tensor", tensor]) == 0
    assert main(["simulate-budget", "--tensor", tensor, "--budgets", "4,8", "--trials", "20"]) == 0
    assert "Budget" in capsys.readouterr().out


def test_anova_exit_code_two_when_coupled(tmp_path):
    out = tmp_path / "syn"
    main(["synth", "--k-a", "5", "--k-b", "5", "--n", "10", "--interaction-sd", "5", "--out", str(out)])
    assert main(["anova", "--tensor", str(out / "tensor.jsonl")]) == 2


def test_global_flags_before_subcommand():
    args = build_parser().parse_args(["--seed", "7", "--json", "landscape", "--tensor", "x"])
    assert args.seed == 7 and args.json
    args = build_parser().parse_args(["landscape", "--tensor", "x", "--seed", "3"])
    assert args.seed == 3


def test_grid_headroom_optimize(files, capsys):
    d = files["dir"]
    cfg = config(d, b_sd=0.3, noise_sd=1.0)
    assert main(["--config", cfg, "grid", "--prompts-a", files["pa"], "--prompts-b", files["pb"],
                 "--questions", files["q"], "--out", str(d / "g")]) == 0
    assert (d / "g" / "tensor.jsonl").exists()
    assert main(["--config", cfg, "headroom", "--baseline", files["base"], "--questions", files["held"],
                 "--generate", "10", "--json"]) == 0
    assert json.loads(capsys.readouterr().out.split("\n", 1)[1])["decision"] == "FLAT"
    assert main(["--config", cfg, "optimize", "--baseline", files["base"], "--task-desc", files["task"],
                 "--train-questions", files["q"], "--holdout", files["held"], "--budget", "40",
                 "--out", str(d / "opt")]) == 0
    history = (d / "opt" / "history.jsonl").read_text().splitlines()
    assert json.loads(history[0])["generation"] == 0 and len(history) >= 2
    assert json.loads((d / "opt" / "best_prompt.json").read_text())["task"]


def test_diagnose_and_report_exit_codes(files, capsys):
    d = files["dir"]
    common = ["diagnose", "--prompts-a", files["pa"], "--prompts-b", files["pb"], "--questions", files["q"],
              "--heldout", files["held"], "--task-desc", files["task"]]
    null = config(d, seed=1, a_sd=0.3, b_sd=0.3, noise_sd=1.0)
    assert main(["--config", null, *common, "--out", str(d / "null")]) == 0
    text = (d / "null" / "report.txt").read_text()
    capsys.readouterr()
    assert main(["report", "--input", str(d / "null" / "report.json")]) == 0
    assert capsys.readouterr().out == text

    coupled = config(d, seed=1, a_sd=0.3, b_sd=0.3, interaction=5.0, noise_sd=1.0)
    assert main(["--config", coupled, *common, "--out", str(d / "cpl")]) == 2
    assert main(["report", "--input", str(d / "cpl" / "report.json"), "--costs"]) == 2
    assert "Stage 1" in capsys.readouterr().out


def test_failures_exit_one(tmp_path, capsys):
    assert main(["anova", "--tensor", str(tmp_path / "missing.jsonl")]) == 1
    assert "error:" in capsys.readouterr().err
    assert main(["--config", str(tmp_path / "nope.ini"), "landscape", "--tensor", "x"]) == 1
