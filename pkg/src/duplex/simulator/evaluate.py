"""Replay-based evaluation of classifiers on a labeled synthetic corpus."""

from __future__ import annotations

from typing import Callable, Iterable, Sequence, Union

import numpy as np

from ..bargein import INTERRUPT, model_scores, rule_baseline
from ..features import EmbeddingTable, FbankConfig
from ..neural.data import Example, make_example, one_hot
from ..neural.model import TASKS, Model
from ..neural.train import predict_examples
from ..trace import FeatureClip, Trace, latest_window
from ..turnpolicy import EngineConfig, FunctionClassifiers, UserState
from .corpus import STATE_NAMES
from .metrics import MetricsReport, classification_report

Predictor = Union[Model, str, Callable[[FeatureClip], int]]


class LabelError(ValueError):
    pass


def query_time(trace: Trace, engine: EngineConfig = EngineConfig()) -> int:
    """When the engine consults the classifier for this trace's label.

    User state: at the IPU threshold after the first segment. Barge-in: at
    the first ASR hypothesis heard during playback.
    """
    labels = _labels(trace)
    if labels["task"] == "state":
        return labels["segments"][0]["end_ms"] + engine.ipu_silence_ms
    if labels["task"] == "bargein":
        return labels["query_ms"]
    raise LabelError(f"{trace.session_id}: unknown task {labels['task']!r}")


def _labels(trace: Trace) -> dict:
    if not trace.labels or "task" not in trace.labels:
        raise LabelError(f"{trace.session_id}: trace has no labels")
    return trace.labels


def task_clip(trace: Trace, engine: EngineConfig = EngineConfig()) -> FeatureClip:
    return latest_window(trace, query_time(trace, engine))


def trace_label(trace: Trace, task: str) -> int:
    labels = _labels(trace)
    if labels["task"] != task:
        raise LabelError(f"{trace.session_id}: labeled for {labels['task']!r}, not {task!r}")
    return int(labels["label"])


def trace_examples(traces: Iterable[Trace], task: str, table: EmbeddingTable, labeled: bool = True,
                   engine: EngineConfig = EngineConfig(), fbank_config: FbankConfig = FbankConfig()) -> list[Example]:
    """One example per trace, in order."""
    k = TASKS[task]
    out = []
    for tr in traces:
        y = one_hot(trace_label(tr, task), k) if labeled else None
        out.append(make_example(task_clip(tr, engine), table, y, fbank_config))
    return out


def evaluate(predictor: Predictor, traces: Sequence[Trace], task: str,
             engine: EngineConfig = EngineConfig(), examples: Sequence[Example] = None,
             threshold: float = 0.5) -> MetricsReport:
    """Metrics of ``predictor`` on the traces' ground truth.

    ``predictor`` is a trained Model, ``"rule"`` (barge-in confidence rule),
    or a callable mapping a FeatureClip to a class index. Precomputed
    ``examples`` (aligned with ``traces``) skip feature extraction for models.
    """
    if task not in TASKS:
        raise LabelError(f"unknown task {task!r}")
    if len(traces) == 0:
        raise ValueError("empty corpus")
    y_true = np.array([trace_label(tr, task) for tr in traces])
    k = TASKS[task]
    if isinstance(predictor, Model):
        if predictor.config.task != task:
            raise LabelError(f"model is for {predictor.config.task!r}, corpus task is {task!r}")
        if examples is None:
            examples = trace_examples(traces, task, predictor.embeddings, engine=engine)
        p = predict_examples(predictor, examples)
        y_pred = (p[:, INTERRUPT] >= threshold).astype(int) if task == "bargein" else np.argmax(p, axis=1)
    elif predictor == "rule":
        if task != "bargein":
            raise LabelError("the rule baseline only decides barge-in")
        y_pred = np.array([int(rule_baseline(c.user_text, c.asr_confidence, engine).interrupt)
                           for c in (task_clip(tr, engine) for tr in traces)])
    elif callable(predictor):
        y_pred = np.array([int(predictor(task_clip(tr, engine))) for tr in traces])
    else:
        raise TypeError(f"unsupported predictor {predictor!r}")
    return classification_report(y_true, y_pred, k, task, positive=INTERRUPT if task == "bargein" else None)


def bargein_scores(model: Model, traces: Sequence[Trace], engine: EngineConfig = EngineConfig()) -> np.ndarray:
    return model_scores([task_clip(tr, engine) for tr in traces], model)


def oracle_classifiers(trace: Trace) -> FunctionClassifiers:
    """Classifiers that answer from the trace's own labels: the user state
    of the segment that ended last before the clip, and the barge-in flag."""
    labels = _labels(trace)
    segs = sorted((s["end_ms"], STATE_NAMES[s["state"]]) for s in labels.get("segments", []))

    def user_state(clip: FeatureClip) -> UserState:
        before = [st for end, st in segs if end <= clip.end_ms]
        return before[-1] if before else UserState.TURN_SWITCH

    barge = bool(labels.get("barge_in", False))
    return FunctionClassifiers(user_state, lambda clip: barge)
