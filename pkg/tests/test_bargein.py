from __future__ import annotations

import numpy as np
import pytest

from conftest import tiny_model
from duplex.bargein import (BargeInClassifier, FalseBargeInKind, UntrainedModelError, Verdict, model_decision,
                            model_scores, rule_baseline, threshold_sweep)
from duplex.trace import FeatureClip
from duplex.turnpolicy import EngineConfig


def test_rule_fires_on_confident_nonempty_text():
    assert rule_baseline("wait", 0.8).interrupt
    assert not rule_baseline("wait", 0.79).interrupt
    assert not rule_baseline("   ", 0.99).interrupt
    d = rule_baseline("stop", 0.9, EngineConfig(bargein_confidence_threshold=0.95), t_ms=40)
    assert d.verdict is Verdict.IGNORE and d.source == "rule" and d.t_ms == 40


def test_false_kinds():
    assert [k.value for k in FalseBargeInKind] == ["NoIntent", "Noise", "Echo", "MisplacedTurn"]


def test_classifier_without_model_uses_rule():
    clf = BargeInClassifier()
    clip = FeatureClip(np.zeros(0), "wait", asr_confidence=0.9, end_ms=7)
    d = clf(clip)
    assert d.interrupt and d.source == "rule" and d.t_ms == 7


def test_model_must_be_trained_binary(table):
    m = tiny_model(table, task="bargein", n_classes=2, use_timing=True)
    with pytest.raises(UntrainedModelError):
        BargeInClassifier(m)
    s = tiny_model(table)
    s.trained = True
    with pytest.raises(ValueError):
        model_scores([FeatureClip(np.zeros(0), "a")], s)


def test_model_decision_threshold(table):
    m = tiny_model(table, task="bargein", n_classes=2, use_timing=True, n_mels=64, dtype=np.float32)
    m.trained = True
    clips = [FeatureClip(np.random.default_rng(i).normal(size=800) * 0.1, "wait stop", "hi", 300, 0, 100 + i)
             for i in range(3)]
    scores = model_scores(clips, m)
    assert scores.shape == (3,) and np.all((scores > 0) & (scores < 1))
    d = model_decision(clips[0], m, threshold=0.0)
    assert d.interrupt and d.source == "model" and d.t_ms == 100
    assert not model_decision(clips[0], m, threshold=1.01).interrupt


def test_threshold_sweep():
    rows = threshold_sweep([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0], [0.0, 0.5, 0.85, 0.95])
    assert [(r["precision"], r["recall"]) for r in rows] == [(0.5, 1.0), (0.5, 0.5), (1.0, 0.5), (1.0, 0.0)]
    assert rows[-1]["n_predicted"] == 0
