from __future__ import annotations

import json

import pytest

from duplex.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, run_command
from duplex.config import GlobalConfig, apply_overrides, from_dict, load_config, parse_override
from duplex.turnpolicy import ConfigError

SMALL = ["--set", "tasks.state.epochs=1", "--set", "tasks.state.hidden=4", "--set", "tasks.state.n_filters=4",
         "--set", "tasks.bargein.epochs=1", "--set", "tasks.bargein.hidden=4",
         "--set", "tasks.backchannel.epochs=2", "--set", "backchannel.n_pairs=60"]


def test_config_roundtrip(tmp_path):
    cfg = GlobalConfig()
    (tmp_path / "c.json").write_text(cfg.to_json())
    assert load_config(tmp_path / "c.json") == cfg


def test_overrides():
    cfg = apply_overrides(GlobalConfig(), ["engine.vad_silence_ms=900", "tasks.state.lr=0.001", "seed=4"])
    assert cfg.engine.vad_silence_ms == 900 and cfg.tasks["state"].lr == 0.001
    assert cfg.seed == 4
    assert parse_override("a.b=[1, 2]") == (["a", "b"], [1, 2])
    assert parse_override("a=text") == (["a"], "text")


@pytest.mark.parametrize("bad", [["engine.nope=1"], ["engine.vad_silence_ms=100"], ["tasks.state.p_threshold=1.5"],
                                 ["noequals"], ["tasks.other.lr=1"]])
def test_bad_overrides(bad):
    with pytest.raises(ConfigError):
        apply_overrides(GlobalConfig(), bad)


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        from_dict({"backchannel": {"inventory": ["a"]}})


def test_usage_errors(capsys):
    assert run_command([]) == EXIT_USAGE
    assert run_command(["frobnicate"]) == EXIT_USAGE
    assert run_command(["train", "--corpus", "x"]) == EXIT_USAGE
    assert run_command(["latency", "--profile", "custom"]) == EXIT_USAGE


def test_data_errors(tmp_path, capsys):
    assert run_command(["latency", "--config", str(tmp_path / "none.json")]) == EXIT_DATA
    assert run_command(["eval", "--task", "bargein", "--rule", "--corpus", str(tmp_path / "nope")]) == EXIT_DATA
    (tmp_path / "p.json").write_text('{"bogus": 1}')
    assert run_command(["latency", "--profile", "custom", "--profile-file", str(tmp_path / "p.json")]) == EXIT_DATA


def test_latency_command(tmp_path, capsys):
    assert run_command(["latency", "--profile", "paper", "--out", str(tmp_path / "l.json")]) == EXIT_OK
    assert json.loads((tmp_path / "l.json").read_text()) == {"with_backchannel_ms": 700,
                                                            "without_backchannel_ms": 1400}
    assert "reduction: 50%" in capsys.readouterr().out


def test_gradcheck_command(capsys):
    assert run_command(["gradcheck", "--hidden", "3"]) == EXIT_OK
    assert "max relative error" in capsys.readouterr().out


def test_pipeline(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    assert run_command(["gen", "--seed", "2", "--n-state", "9", "--n-bargein", "9", "--out", str(corpus)]) == 0
    assert (corpus / "backchannel_pairs.jsonl").exists()
    assert run_command(["gen", "--dry-run", "--out", str(tmp_path / "x")]) == 0
    assert not (tmp_path / "x").exists()

    for task in ("state", "bargein", "backchannel"):
        ckpt = tmp_path / f"{task}.ckpt"
        assert run_command(["train", "--task", task, "--corpus", str(corpus), "--out", str(ckpt)] + SMALL) == 0
        assert run_command(["eval", "--task", task, "--corpus", str(corpus), "--model", str(ckpt),
                            "--out", str(tmp_path / f"{task}.json")] + SMALL) == 0
    assert run_command(["eval", "--task", "bargein", "--rule", "--corpus", str(corpus)]) == 0
    assert run_command(["eval", "--task", "state", "--corpus", str(corpus),
                        "--model", str(tmp_path / "bargein.ckpt")]) == EXIT_DATA

    trace = next(corpus.glob("state-*.jsonl"))
    assert run_command(["replay", "--trace", str(trace), "--out", str(tmp_path / "log.jsonl")]) == 0
    expected = json.loads(trace.read_text().splitlines()[0])["labels"]["expected_actions"]
    got = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert got == expected
    assert run_command(["replay", "--trace", str(trace), "--state-model", str(tmp_path / "state.ckpt"),
                        "--bargein-model", str(tmp_path / "bargein.ckpt")]) == 0

    assert run_command(["features", "--trace", str(trace), "--out", str(tmp_path / "f.csv")]) == 0
    assert (tmp_path / "f.csv").read_text().startswith("t_ms,mel0")
    assert run_command(["misalign", "--corpus", str(corpus), "--out", str(tmp_path / "mis")]) == 0
    assert json.loads((tmp_path / "mis" / "manifest.json").read_text())["misalignment"]["delay_min"] == 300
