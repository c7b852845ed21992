import json

import pytest

from promptopt.cli import main
from promptopt.demo import write_demo
from promptopt.store import read_curve


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    d = tmp_path_factory.mktemp("demo")
    write_demo(d, "source", n_items=40, max_steps=4)
    write_demo(d, "target", n_items=40, max_steps=3)
    return d


def run_json(capsys, *argv):
    code = main(list(argv) + ["--json"])
    out = capsys.readouterr().out
    assert code == 0, out
    return json.loads(out)


def test_two_stage_and_report(demo, capsys):
    src = run_json(capsys, "optimize", "source", "--config", str(demo / "config-source.json"))
    assert src["steps"] == 4 and src["termination"] == "max_steps_reached"
    tgt = run_json(capsys, "optimize", "target", "--seed-run", src["run_id"], "--config", str(demo / "config-target.json"))
    assert tgt["stage"] == "target"

    assert main(["report", tgt["run_id"], "--config", str(demo / "config-target.json")]) == 0
    path = capsys.readouterr().out.strip()
    assert path.endswith("curve.csv")
    assert [r["step"] for r in read_curve(path)] == [1, 2, 3]
    assert (demo / "runs" / tgt["run_id"] / "curve.png").stat().st_size > 0


def test_report_json_no_plot(demo, capsys, tmp_path):
    src = run_json(capsys, "optimize", "source", "--seed", "7", "--config", str(demo / "config-source.json"))
    out = tmp_path / "c.json"
    assert main(["report", src["run_id"], "--format", "json", "--output", str(out), "--no-plot", "--config", str(demo / "config-source.json")]) == 0
    assert capsys.readouterr().out.strip() == str(out)
    assert json.loads(out.read_text())["columns"][0] == "step"
    assert not out.with_suffix(".png").exists()


def test_evaluate_table_and_json(demo, capsys):
    cfg = str(demo / "config-source.json")
    ds = str(demo / "data" / "general-a.jsonl")
    assert main(["evaluate", "Answer systematically.", "--dataset", ds, "--config", cfg]) == 0
    header, values = capsys.readouterr().out.splitlines()[:2]
    assert header.split() == ["IFR", "ACC", "ECE", "ROC", "PR-P", "PR-N", "composite"]
    assert values.split()[0] == "1.00"
    out = run_json(capsys, "evaluate", "Answer systematically.", "--dataset", ds, "--config", cfg)
    assert out["n_total"] == 40 and 0 <= out["metrics"]["composite"] <= 1


def test_prompt_from_file(demo, capsys, tmp_path):
    p = tmp_path / "prompt.txt"
    p.write_text("Answer systematically.\n")
    cfg = str(demo / "config-source.json")
    ds = str(demo / "data" / "general-a.jsonl")
    a = run_json(capsys, "evaluate", str(p), "--dataset", ds, "--config", cfg)
    b = run_json(capsys, "evaluate", "Answer systematically.", "--dataset", ds, "--config", cfg)
    assert a == b


def test_target_without_seed_run(demo, capsys):
    assert main(["optimize", "target", "--config", str(demo / "config-target.json")]) == 1
    assert "--seed-run" in capsys.readouterr().err


def test_missing_config(capsys, tmp_path):
    assert main(["optimize", "source"]) == 1
    assert main(["optimize", "source", "--config", str(tmp_path / "none.json")]) == 1
    assert "not found" in capsys.readouterr().err


def test_bad_dataset_path(demo, capsys, tmp_path):
    cfg = json.loads((demo / "config-source.json").read_text())
    cfg["datasets"]["source"] = [str(demo / "data" / "missing.jsonl")]
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert main(["optimize", "source", "--config", str(p)]) == 1
    assert "missing.jsonl" in capsys.readouterr().err


def test_unknown_seed_run(demo, capsys):
    assert main(["optimize", "target", "--seed-run", "nope", "--config", str(demo / "config-target.json")]) == 1


def test_backend_failure_exit_code(demo, capsys, tmp_path, monkeypatch):
    cfg = json.loads((demo / "config-source.json").read_text())
    cfg["datasets"] = {"source": [str(demo / "data" / "general-a.jsonl")]}
    cfg["backends"]["scorer"] = {
        "kind": "http_chat", "model_name": "m", "endpoint_url": "http://127.0.0.1:9/v1/chat",
        "api_key_env": "PROMPTOPT_TEST_KEY", "max_retries": 0, "request_timeout": 0.5, "supports_logprobs": True,
    }
    cfg["store_root"] = str(tmp_path / "runs")
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    monkeypatch.delenv("PROMPTOPT_TEST_KEY", raising=False)
    assert main(["optimize", "source", "--config", str(p)]) == 1
    assert "PROMPTOPT_TEST_KEY" in capsys.readouterr().err
    monkeypatch.setenv("PROMPTOPT_TEST_KEY", "x")
    assert main(["optimize", "source", "--config", str(p)]) == 2
    assert "backend failure" in capsys.readouterr().err
