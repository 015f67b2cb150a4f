"""Classification metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np


@dataclass
class MetricsReport:
    task: str
    n: int
    accuracy: float
    macro_f1: float
    precision: float
    recall: float
    per_class_f1: list
    confusion: list  # rows = true class, cols = predicted
    hamming_loss: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    def table(self) -> str:
        rows = [("task", self.task), ("n", str(self.n)), ("accuracy", f"{self.accuracy:.4f}"),
                ("macro_f1", f"{self.macro_f1:.4f}"), ("precision", f"{self.precision:.4f}"),
                ("recall", f"{self.recall:.4f}")]
        if self.hamming_loss is not None:
            rows.append(("hamming_loss", f"{self.hamming_loss:.4f}"))
        for k, v in self.extra.items():
            rows.append((k, f"{v:.4f}" if isinstance(v, float) else str(v)))
        w = max(len(k) for k, _ in rows) + 2
        out = [f"{k:<{w}}{v}" for k, v in rows]
        out.append("confusion (rows=true, cols=pred):")
        out += ["  " + " ".join(f"{c:6d}" for c in row) for row in self.confusion]
        return "\n".join(out)


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def _div(a: float, b: float) -> float:
    return float(a / b) if b else 0.0


def classification_report(y_true, y_pred, n_classes: int, task: str = "",
                           positive: Optional[int] = None) -> MetricsReport:
    """Accuracy, macro-F1 and precision/recall.

    Precision and recall are for class ``positive`` when given (binary
    tasks), otherwise macro-averaged.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) == 0:
        raise ValueError("empty evaluation set")
    cm = confusion_matrix(y_true, y_pred, n_classes)
    tp = np.diag(cm).astype(float)
    pred_pos = cm.sum(axis=0)
    true_pos = cm.sum(axis=1)
    prec = np.array([_div(tp[k], pred_pos[k]) for k in range(n_classes)])
    rec = np.array([_div(tp[k], true_pos[k]) for k in range(n_classes)])
    f1 = np.array([_div(2 * prec[k] * rec[k], prec[k] + rec[k]) for k in range(n_classes)])
    if positive is None:
        p, r = float(prec.mean()), float(rec.mean())
    else:
        p, r = float(prec[positive]), float(rec[positive])
    return MetricsReport(
        task=task, n=int(len(y_true)), accuracy=float(tp.sum() / len(y_true)), macro_f1=float(f1.mean()),
        precision=p, recall=r, per_class_f1=[float(v) for v in f1], confusion=cm.tolist(),
    )
