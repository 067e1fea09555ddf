"""End-to-end CLI behaviour: exit codes, artifacts, determinism."""

import json
import os

import pytest

from hypalign import __version__
from hypalign.cli import main

TINY = {
    "seed": 11,
    "scenes": {"count": 2, "tracks": 4, "frames": 8},
    "train_scenes": {"count": 2},
    "align": {"c": 16},
    "train": {"epochs": 1, "seeds": [0]},
    "eval": {"latency_iters": 3},
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def run(argv):
    return main(argv)


def stderr_json(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_missing_config_exits_2(tmp_path, capsys):
    code = run(["gen", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)])
    assert code == 2
    doc = stderr_json(capsys)
    assert doc["error"] == "FileNotFoundError" and doc["exit_code"] == 2


def test_invalid_config_exits_3(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"surprise": 1}')
    code = run(["gen", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 3
    assert stderr_json(capsys)["error"] == "ConfigError"


def test_train_before_gen_exits_2(tiny_config, tmp_path, capsys):
    code = run(["train", "--config", tiny_config, "--out", str(tmp_path / "o")])
    assert code == 2
    assert "scenes" in stderr_json(capsys)["message"]


def test_compare_before_eval_exits_2(tiny_config, tmp_path, capsys):
    code = run(["compare", "--config", tiny_config, "--out", str(tmp_path / "o")])
    assert code == 2


def test_locked_output_exits_3(tiny_config, tmp_path, capsys):
    out = tmp_path / "o"
    out.mkdir()
    (out / ".hypalign.lock").write_text("999")
    code = run(["gen", "--config", tiny_config, "--out", str(out), "--quiet"])
    assert code == 3
    assert "lock" in stderr_json(capsys)["message"]


def test_full_pipeline_produces_all_artifacts(tiny_config, tmp_path, capsys):
    out = str(tmp_path / "run")
    for cmd in ("gen", "train", "eval", "compare", "weights"):
        code = run([cmd, "--config", tiny_config, "--out", out, "--quiet"])
        assert code == 0, f"{cmd} failed"
    expected = [
        "scenes.jsonl", "scenes_train.jsonl",
        "params_hat_m5_seed0.hatp", "params_hat_m1_seed0.hatp",
        "params_implicit_seed0.hatp",
        "loss_hat_m5_seed0.csv", "loss_hat_m1_seed0.csv", "loss_implicit_seed0.csv",
        "report.csv", "report.json", "latency.json", "compare.csv", "weights.csv",
    ]
    for name in expected:
        assert os.path.exists(os.path.join(out, name)), name
    assert not os.path.exists(os.path.join(out, ".hypalign.lock"))

    report_lines = open(os.path.join(out, "report.csv")).read().splitlines()
    methods = {ln.split(",")[0] for ln in report_lines[2:]}
    assert {"hat_m5_seed0", "hat_m1_seed0", "implicit_seed0",
            "single_cv", "single_ctrv"} <= methods

    compare_out = capsys.readouterr().out
    assert "hat_m5" in compare_out and "single_cv" in compare_out

    weight_lines = open(os.path.join(out, "weights.csv")).read().splitlines()
    assert weight_lines[1] == ("seed,regime,pairs,w_cv,w_static,w_ca,w_ctrv,w_ctra")
    body = [ln.split(",") for ln in weight_lines[2:]]
    assert any(row[1] == "all" for row in body)
    for row in body:
        total = sum(float(x) for x in row[3:])
        assert abs(total - 1.0) < 1e-9

    latency = json.loads(open(os.path.join(out, "latency.json")).read())
    assert latency["latency_ms"]["hat_m5_seed0"] > 0

    # eval also latency-profiles each single-model baseline exactly once
    assert "single_static" in latency["latency_ms"]


def test_gen_twice_is_byte_identical(tiny_config, tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert run(["gen", "--config", tiny_config, "--out", a, "--quiet"]) == 0
    assert run(["gen", "--config", tiny_config, "--out", b, "--quiet"]) == 0
    for name in ("scenes.jsonl", "scenes_train.jsonl"):
        with open(os.path.join(a, name), "rb") as fa, \
             open(os.path.join(b, name), "rb") as fb:
            assert fa.read() == fb.read(), name


def test_seed_override_changes_scenes(tiny_config, tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert run(["gen", "--config", tiny_config, "--out", a, "--quiet",
                "--seed", "1"]) == 0
    assert run(["gen", "--config", tiny_config, "--out", b, "--quiet",
                "--seed", "2"]) == 0
    with open(os.path.join(a, "scenes.jsonl"), "rb") as fa, \
         open(os.path.join(b, "scenes.jsonl"), "rb") as fb:
        assert fa.read() != fb.read()


def test_selftest_passes(capsys):
    assert run(["selftest"]) == 0
    out = capsys.readouterr().out
    passes = [ln for ln in out.splitlines() if ln.startswith("PASS")]
    assert len(passes) == 5
    assert not any(ln.startswith("FAIL") for ln in out.splitlines())
