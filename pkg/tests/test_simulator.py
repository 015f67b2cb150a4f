from __future__ import annotations

import json

import numpy as np
import pytest

from conftest import Script
from duplex.features import EmbeddingTable
from duplex.simulator.corpus import (ScenarioConfig, allocate, bargein_counts, generate_corpus, iter_corpus,
                                     read_corpus, vocabulary, write_corpus)
from duplex.simulator.evaluate import (LabelError, evaluate, oracle_classifiers, query_time, task_clip,
                                       trace_examples, trace_label)
from duplex.simulator.latency import (PAPER_PROFILE, ZERO_PROFILE, LatencyProfile, latency_table,
                                      latency_total)
from duplex.simulator.metrics import classification_report, confusion_matrix
from duplex.simulator.misalign import apply_misalignment
from duplex.trace import ASR_KINDS, EventKind, validate_trace, write_trace
from duplex.turnpolicy import EngineConfig, UserState, run


@pytest.fixture(scope="module")
def small_corpus():
    return generate_corpus(ScenarioConfig(seed=5, n_state=12, n_bargein=10))


def test_allocation_is_exact():
    assert allocate(10, {"a": 1 / 3, "b": 1 / 3, "c": 1 / 3}) == {"a": 4, "b": 3, "c": 3}
    counts = bargein_counts(1000, 0.11, {"NoIntent": 0.25, "Noise": 0.25, "Echo": 0.25, "MisplacedTurn": 0.25})
    assert counts["True"] == 110
    assert sum(counts.values()) == 1000


def test_scenario_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(state_mix={"turn_switch": 0.5}).validate()
    with pytest.raises(ValueError):
        ScenarioConfig(bargein_prior=1.5).validate()
    with pytest.raises(ValueError):
        ScenarioConfig(n_state=-1).validate()


def test_corpus_is_deterministic_and_valid(small_corpus):
    again = generate_corpus(ScenarioConfig(seed=5, n_state=12, n_bargein=10))
    assert [write_trace(t) for t in again] == [write_trace(t) for t in small_corpus]
    assert all(np.array_equal(a.audio, b.audio) for a, b in zip(again, small_corpus))
    for t in small_corpus:
        assert validate_trace(t) == []
    kinds = {t.labels.get("kind") for t in small_corpus if t.labels["task"] == "bargein"}
    assert "True" in kinds


def test_subset_of_tasks_matches_full_corpus(small_corpus):
    only = list(iter_corpus(ScenarioConfig(seed=5, n_state=12, n_bargein=10), ("bargein",)))
    full = [t for t in small_corpus if t.labels["task"] == "bargein"]
    assert [write_trace(t) for t in only] == [write_trace(t) for t in full]


def test_oracle_replay_matches_expected_actions(small_corpus):
    for t in small_corpus:
        got = [json.loads(a.to_json()) for a in run(EngineConfig(), t, oracle_classifiers(t))]
        assert got == t.labels["expected_actions"], t.session_id


def test_corpus_directory_roundtrip(tmp_path, small_corpus):
    cfg = ScenarioConfig(seed=5, n_state=12, n_bargein=10)
    write_corpus(small_corpus, tmp_path, cfg)
    back = read_corpus(tmp_path)
    assert [write_trace(t) for t in back] == [write_trace(t) for t in small_corpus]
    assert np.array_equal(back[0].audio, small_corpus[0].audio)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seed"] == 5 and len(manifest["traces"]) == 22


def test_misalignment_delays_text_only(small_corpus):
    t = small_corpus[0]
    m = apply_misalignment(t, seed=1)
    assert apply_misalignment(t, seed=1) == m
    asr = [e for e in t.events if e.kind in ASR_KINDS]
    asr_m = [e for e in m.events if e.kind in ASR_KINDS]
    deltas = {e2.t_ms - e1.t_ms for e1, e2 in zip(asr, asr_m)}
    assert all(300 <= d <= 600 for d in deltas)
    others = [(e.t_ms, e.kind) for e in t.events if e.kind not in ASR_KINDS]
    assert [(e.t_ms, e.kind) for e in m.events if e.kind not in ASR_KINDS] == others
    assert validate_trace(m) == []
    with pytest.raises(ValueError):
        apply_misalignment(t, delay_min=5, delay_max=1)


def test_paper_latency_profile():
    assert latency_total(PAPER_PROFILE, False) == 1400
    assert latency_total(PAPER_PROFILE, True) == 700
    assert latency_total(ZERO_PROFILE, True) == 0
    table = latency_table()
    assert "Total latency" in table and "reduction: 50%" in table
    with pytest.raises(ValueError):
        latency_total(LatencyProfile(tts=-1), False)


def test_metrics_against_hand_counts():
    y = [0, 0, 1, 1, 2, 2]
    p = [0, 1, 1, 1, 2, 0]
    assert confusion_matrix(y, p, 3).tolist() == [[1, 1, 0], [0, 2, 0], [1, 0, 1]]
    r = classification_report(y, p, 3)
    assert r.accuracy == pytest.approx(4 / 6)
    f1 = [2 * 0.5 * 0.5 / 1.0, 2 * (2 / 3) * 1 / (2 / 3 + 1), 2 * 1 * 0.5 / 1.5]
    assert r.per_class_f1 == pytest.approx(f1)
    assert r.macro_f1 == pytest.approx(np.mean(f1))
    b = classification_report([1, 0, 0, 1], [1, 1, 0, 0], 2, positive=1)
    assert (b.precision, b.recall) == (0.5, 0.5)
    with pytest.raises(ValueError):
        classification_report([], [], 2)


def test_query_times_and_labels(small_corpus):
    st = next(t for t in small_corpus if t.labels["task"] == "state")
    assert query_time(st) == st.labels["segments"][0]["end_ms"] + 200
    bg = next(t for t in small_corpus if t.labels["task"] == "bargein")
    assert query_time(bg) == bg.labels["query_ms"]
    clip = task_clip(bg)
    assert clip.user_text and clip.playback_elapsed_ms == bg.labels["query_ms"]
    with pytest.raises(LabelError):
        trace_label(st, "bargein")
    with pytest.raises(LabelError):
        query_time(Script().trace())


def test_evaluate_predictors(small_corpus):
    states = [t for t in small_corpus if t.labels["task"] == "state"]
    barge = [t for t in small_corpus if t.labels["task"] == "bargein"]
    oracle = evaluate(lambda clip, it=iter(states): trace_label(next(it), "state"), states, "state")
    assert oracle.accuracy == 1.0
    const = evaluate(lambda clip: UserState.TURN_SWITCH, states, "state")
    assert const.accuracy == pytest.approx(np.mean([t.labels["label"] == 0 for t in states]))
    rule = evaluate("rule", barge, "bargein")
    assert rule.recall == 1.0
    with pytest.raises(LabelError):
        evaluate("rule", states, "state")
    with pytest.raises(ValueError):
        evaluate("rule", [], "bargein")


def test_trace_examples(small_corpus):
    table = EmbeddingTable.random(vocabulary(), 8, seed=0)
    states = [t for t in small_corpus if t.labels["task"] == "state"]
    ex = trace_examples(states[:3], "state", table)
    assert len(ex) == 3 and ex[0].audio.shape[1] == 64 and ex[0].target.sum() == 1
    assert trace_examples(states[:1], "state", table, labeled=False)[0].target is None
