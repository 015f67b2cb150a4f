"""Barge-in decisions while the bot is speaking.

Two deciders share one result type: a confidence rule over the streaming
ASR partial, and the multimodal model with the playback-timing feature.
Both plug into the turn-taking engine through :class:`BargeInClassifier`.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .features import FbankConfig
from .neural.data import collate, make_example
from .neural.model import Model, predict_proba
from .trace import FeatureClip
from .turnpolicy import EngineConfig

INTERRUPT = 1  # class index of a genuine barge-in in the K=2 head


class UntrainedModelError(RuntimeError):
    pass


class Verdict(str, enum.Enum):
    INTERRUPT = "Interrupt"
    IGNORE = "Ignore"


class FalseBargeInKind(str, enum.Enum):
    NO_INTENT = "NoIntent"
    NOISE = "Noise"
    ECHO = "Echo"
    MISPLACED_TURN = "MisplacedTurn"


@dataclass(frozen=True)
class BargeInDecision:
    verdict: Verdict
    score: float
    source: str  # "rule" | "model"
    t_ms: int = 0

    @property
    def interrupt(self) -> bool:
        return self.verdict is Verdict.INTERRUPT


def rule_baseline(partial_text: str, confidence: float, config: EngineConfig = EngineConfig(),
                  t_ms: int = 0) -> BargeInDecision:
    """Interrupt on any nonempty partial whose confidence reaches the threshold."""
    fire = bool(partial_text.strip()) and confidence >= config.bargein_confidence_threshold
    return BargeInDecision(Verdict.INTERRUPT if fire else Verdict.IGNORE, float(confidence), "rule", t_ms)


def _check_model(model: Model) -> None:
    if not model.trained:
        raise UntrainedModelError("barge-in model has not been trained or loaded")
    if model.config.n_classes != 2:
        raise ValueError(f"barge-in needs a 2-class model, got {model.config.n_classes}")


def model_scores(clips: Sequence[FeatureClip], model: Model,
                 fbank_config: FbankConfig = FbankConfig()) -> np.ndarray:
    """p(interrupt) for each clip, batched."""
    _check_model(model)
    examples = [make_example(c, model.embeddings, fbank_config=fbank_config) for c in clips]
    return predict_proba(model, collate(examples, model.config.n_mels))[:, INTERRUPT]


def model_decision(clip: FeatureClip, model: Model, threshold: float = 0.5,
                   fbank_config: FbankConfig = FbankConfig()) -> BargeInDecision:
    """Interrupt iff the model's p(interrupt) reaches ``threshold``."""
    score = float(model_scores([clip], model, fbank_config)[0])
    verdict = Verdict.INTERRUPT if score >= threshold else Verdict.IGNORE
    return BargeInDecision(verdict, score, "model", clip.end_ms)


class BargeInClassifier:
    """Engine-facing adapter. Without a model the rule baseline decides."""

    def __init__(self, model: Optional[Model] = None, config: EngineConfig = EngineConfig(),
                 threshold: float = 0.5, fbank_config: FbankConfig = FbankConfig()):
        if model is not None:
            _check_model(model)
        self.model = model
        self.config = config
        self.threshold = threshold
        self.fbank_config = fbank_config

    def __call__(self, clip: FeatureClip) -> BargeInDecision:
        if self.model is None:
            return rule_baseline(clip.user_text, clip.asr_confidence, self.config, clip.end_ms)
        return model_decision(clip, self.model, self.threshold, self.fbank_config)


def threshold_sweep(scores, labels, thresholds) -> list[dict]:
    """Precision and recall of ``score >= threshold`` for each threshold."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    out = []
    for th in thresholds:
        pred = scores >= th
        tp = int(np.sum(pred & labels))
        n_pred = int(pred.sum())
        out.append({
            "threshold": float(th),
            "precision": tp / n_pred if n_pred else 1.0,
            "recall": tp / int(labels.sum()) if labels.any() else 0.0,
            "n_predicted": n_pred,
        })
    return out


def decision_latency_ms(clip: FeatureClip, model: Model, repeats: int = 5) -> float:
    """Median wall time of one :func:`model_decision` call."""
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        model_decision(clip, model)
        times.append((time.perf_counter() - t0) * 1000.0)
    return float(np.median(times))
