"""Desk-scale ablation grid on the synthetic corpus.

User state: multimodal vs text-only vs audio-only (supervised with mixup),
and multimodal with pseudo-label SSL vs without. Barge-in: multimodal model
with the timing feature vs the confidence rule. A separate experiment
trains on aligned or misaligned text and tests on misaligned text.

Traces are streamed into examples so only features stay in memory.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

from ..bargein import rule_baseline
from ..features import EmbeddingTable
from ..neural.model import Model, ModelConfig
from ..neural.train import TrainConfig, fit
from ..turnpolicy import EngineConfig
from .corpus import ScenarioConfig, iter_corpus, vocabulary
from .evaluate import evaluate, task_clip, trace_examples
from .metrics import MetricsReport
from .misalign import apply_misalignment

log = logging.getLogger(__name__)

# offsets that keep the generated splits disjoint
_LABELED, _UNLABELED, _TEST, _BARGE_TRAIN, _BARGE_TEST = range(5)


@dataclass
class DeskConfig:
    seed: int = 0
    n_labeled: int = 2000
    n_unlabeled: int = 6000
    n_test: int = 1000
    n_bargein_train: int = 2000
    n_bargein_test: int = 1000
    emb_dim: int = 32
    hidden: int = 8
    n_filters: int = 32
    epochs: int = 30
    batch_size: int = 32
    # user-state lr; None keeps the per-task default
    state_lr: Optional[float] = 3e-3
    ssl_warmup_epochs: int = 2
    scenario: ScenarioConfig = None

    def __post_init__(self):
        if self.scenario is None:
            self.scenario = ScenarioConfig()

    def split(self, which: int, n_state: int = 0, n_bargein: int = 0) -> ScenarioConfig:
        return replace(self.scenario, seed=self.seed * 100 + which, n_state=n_state, n_bargein=n_bargein)

    def train_config(self, **kw) -> TrainConfig:
        base = dict(epochs=self.epochs, batch_size=self.batch_size, seed=self.seed,
                    ssl_warmup_epochs=self.ssl_warmup_epochs)
        base.update(kw)
        return TrainConfig(**base)


@dataclass
class Split:
    examples: list
    labels: np.ndarray
    traces: list  # label-only stubs, kept for evaluate()


def _collect(cfg: ScenarioConfig, task: str, table: EmbeddingTable, labeled: bool = True,
             misalign_seed: Optional[int] = None, engine: EngineConfig = EngineConfig()) -> Split:
    examples, labels, stubs = [], [], []
    for tr in iter_corpus(cfg, (task,)):
        if misalign_seed is not None:
            tr = apply_misalignment(tr, seed=misalign_seed)
        examples += trace_examples([tr], task, table, labeled=labeled, engine=engine)
        labels.append(tr.labels["label"])
        tr.audio = None
        tr.events = []
        stubs.append(tr)
    return Split(examples, np.array(labels), stubs)


def _model(task: str, table: EmbeddingTable, dc: DeskConfig, **kw) -> Model:
    n = {"state": 3, "bargein": 2}[task]
    mc = ModelConfig(task=task, n_classes=n, hidden=dc.hidden, n_filters=dc.n_filters, **kw)
    return Model(mc, table, seed=dc.seed)


def _evaluate(model: Model, split: Split, task: str) -> MetricsReport:
    return evaluate(model, split.traces, task, examples=split.examples)


def run_desk_experiment(dc: DeskConfig = DeskConfig()) -> dict:
    """Train the ablation grid and return metrics plus the ordering checks."""
    t0 = time.time()
    table = EmbeddingTable.random(vocabulary(), dc.emb_dim, seed=dc.seed)
    lab = _collect(dc.split(_LABELED, n_state=dc.n_labeled), "state", table)
    unl = _collect(dc.split(_UNLABELED, n_state=dc.n_unlabeled), "state", table, labeled=False)
    test = _collect(dc.split(_TEST, n_state=dc.n_test), "state", table)
    log.info("state corpora ready in %.1fs", time.time() - t0)

    state: dict[str, MetricsReport] = {}
    models = {}
    for name, modality in (("multimodal", "both"), ("text", "text"), ("audio", "audio")):
        m = _model("state", table, dc, modality=modality)
        fit(m, lab.examples, cfg=dc.train_config(ssl=False, lr=dc.state_lr))
        state[name] = _evaluate(m, test, "state")
        models[name] = m
        log.info("state/%s acc=%.4f f1=%.4f", name, state[name].accuracy, state[name].macro_f1)
    m = _model("state", table, dc)
    fit(m, lab.examples, unl.examples, cfg=dc.train_config(ssl=True, lr=dc.state_lr))
    state["multimodal_ssl"] = _evaluate(m, test, "state")
    log.info("state/ssl acc=%.4f f1=%.4f", state["multimodal_ssl"].accuracy, state["multimodal_ssl"].macro_f1)
    del unl

    btrain = _collect(dc.split(_BARGE_TRAIN, n_bargein=dc.n_bargein_train), "bargein", table)
    btest_cfg = dc.split(_BARGE_TEST, n_bargein=dc.n_bargein_test)
    btest_full = list(iter_corpus(btest_cfg, ("bargein",)))
    rule = evaluate("rule", btest_full, "bargein")
    btest = _collect(btest_cfg, "bargein", table)
    bm = _model("bargein", table, dc, use_timing=True)
    fit(bm, btrain.examples, cfg=dc.train_config(ssl=False))
    bargein = {"rule": rule, "model": _evaluate(bm, btest, "bargein")}
    false_rate = _false_interrupt_share(btest_full, dc.scenario.engine)

    checks = {
        "multimodal_beats_text": state["multimodal"].accuracy > state["text"].accuracy,
        "multimodal_beats_audio": state["multimodal"].accuracy > state["audio"].accuracy,
        "ssl_f1_at_least_supervised": state["multimodal_ssl"].macro_f1 >= state["multimodal"].macro_f1,
        "bargein_model_beats_rule": bargein["model"].macro_f1 > bargein["rule"].macro_f1,
    }
    return {
        "config": {k: v for k, v in asdict(dc).items() if k != "scenario"},
        "state": {k: asdict(v) for k, v in state.items()},
        "bargein": {k: asdict(v) for k, v in bargein.items()},
        "rule_fires_on_false_share": false_rate,
        "checks": checks,
        "seconds": round(time.time() - t0, 1),
    }


def _false_interrupt_share(traces, engine: EngineConfig) -> float:
    """Share of rule interrupts that were not real barge-ins."""
    clips = [task_clip(tr, engine) for tr in traces]
    fired = [tr for tr, c in zip(traces, clips) if rule_baseline(c.user_text, c.asr_confidence, engine).interrupt]
    if not fired:
        return 0.0
    return float(np.mean([not tr.labels["barge_in"] for tr in fired]))


def run_misalignment_experiment(dc: DeskConfig = DeskConfig(n_labeled=1000, n_test=600), seed: int = 0) -> dict:
    """Aligned-trained vs misalignment-trained, both tested on misaligned
    text. Reported, not asserted."""
    table = EmbeddingTable.random(vocabulary(), dc.emb_dim, seed=dc.seed)
    lab_cfg = dc.split(_LABELED, n_state=dc.n_labeled)
    test = _collect(dc.split(_TEST, n_state=dc.n_test), "state", table, misalign_seed=seed)
    out = {}
    for name, ms in (("trained_aligned", None), ("trained_misaligned", seed + 1)):
        lab = _collect(lab_cfg, "state", table, misalign_seed=ms)
        m = _model("state", table, dc)
        fit(m, lab.examples, cfg=dc.train_config(ssl=False, lr=dc.state_lr))
        out[name] = _evaluate(m, test, "state").accuracy
    out["margin_points"] = 100.0 * (out["trained_misaligned"] - out["trained_aligned"])
    out["margin_ok"] = out["margin_points"] >= 2.0
    return out
