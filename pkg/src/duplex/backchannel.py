"""Backchannel selection.

Queries paired with the response a human gave are turned into soft
multi-label targets: identical queries are merged into a multi-hot label,
the rest are grouped by hierarchical clustering and share their cluster's
normalized response counts. A text-only sigmoid head scores the ten
responses and a weighted draw among the confident ones picks the reply.
"""

from __future__ import annotations

import json
from collections import Counter, OrderedDict
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .features import EmbeddingTable
from .neural.data import Example, collate
from .neural.model import Model, ModelConfig, predict_proba

INVENTORY = (
    "um-hum", "okay", "sure", "i see", "right",
    "got it", "well", "yes", "one moment", "go on",
)
N_RESPONSES = len(INVENTORY)


@dataclass(frozen=True)
class SoftLabel:
    query: str
    label: np.ndarray  # (10,) in [0, 1]
    provenance: str  # "merged-identical" | "cluster-distribution"

    def to_json(self) -> str:
        return json.dumps({"query": self.query, "label": [float(v) for v in self.label],
                           "provenance": self.provenance})


def _check_index(r) -> int:
    r = int(r)
    if not 0 <= r < N_RESPONSES:
        raise ValueError(f"response index {r} outside 0..{N_RESPONSES - 1}")
    return r


def mean_embedding(text: str, table: EmbeddingTable) -> np.ndarray:
    return table.matrix[table.encode(text)].mean(axis=0)


def cosine_distances(x: np.ndarray) -> np.ndarray:
    """Condensed pairwise cosine distances. Zero vectors sit at distance 1
    from everything, including each other."""
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    u = x / safe[:, None]
    sim = np.clip(u @ u.T, -1.0, 1.0)
    d = 1.0 - sim
    zero = norms == 0
    d[zero, :] = 1.0
    d[:, zero] = 1.0
    iu = np.triu_indices(len(x), k=1)
    return np.maximum(d[iu], 0.0)


def build_soft_labels(pairs: Iterable[tuple[str, int]], table: EmbeddingTable,
                      cluster_threshold: float = 0.35) -> list[SoftLabel]:
    """Soft labels from (query, response index) pairs.

    A query seen more than once keeps a multi-hot label over its observed
    responses. Queries seen once are clustered (average linkage, cosine
    distance of mean embeddings, cut at ``cluster_threshold``) and receive
    their cluster's response distribution.
    """
    groups: "OrderedDict[str, list[int]]" = OrderedDict()
    for query, r in pairs:
        groups.setdefault(" ".join(query.split()), []).append(_check_index(r))
    if not groups:
        raise ValueError("no query/response pairs")

    out: list[SoftLabel] = []
    singles: list[tuple[str, int]] = []
    for query, rs in groups.items():
        if len(rs) > 1:
            label = np.zeros(N_RESPONSES)
            label[sorted(set(rs))] = 1.0
            out.append(SoftLabel(query, label, "merged-identical"))
        else:
            singles.append((query, rs[0]))

    if len(singles) == 1:
        clusters = np.array([1])
    elif singles:
        emb = np.stack([mean_embedding(q, table) for q, _ in singles])
        tree = linkage(cosine_distances(emb), method="average")
        clusters = fcluster(tree, t=cluster_threshold, criterion="distance")
    else:
        clusters = np.zeros(0, dtype=int)

    dist: dict[int, np.ndarray] = {}
    for c, (_, r) in zip(clusters, singles):
        dist.setdefault(int(c), np.zeros(N_RESPONSES))[r] += 1.0
    for c, (query, _) in zip(clusters, singles):
        counts = dist[int(c)]
        out.append(SoftLabel(query, counts / counts.sum(), "cluster-distribution"))
    return out


def save_soft_labels(records: Sequence[SoftLabel], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(rec.to_json() + "\n")


def load_soft_labels(path) -> list[SoftLabel]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                d = json.loads(line)
                out.append(SoftLabel(d["query"], np.asarray(d["label"], dtype=float), d["provenance"]))
    return out


def select_response(probs, threshold: float = 0.5, rng: Optional[np.random.Generator] = None) -> int:
    """Pick a response index from per-label scores.

    With several scores at or above ``threshold`` one is drawn with
    probability proportional to its score; otherwise the argmax wins.
    """
    probs = np.asarray(probs, dtype=float)
    cand = np.flatnonzero((probs >= threshold) & (probs > 0))
    if len(cand) <= 1:
        return int(np.argmax(probs))
    if rng is None:
        rng = np.random.default_rng()
    w = probs[cand] / probs[cand].sum()
    return int(cand[rng.choice(len(cand), p=w)])


def hamming_loss(y, y_hat) -> float:
    """Fraction of label positions where the two binary vectors differ.
    2-D inputs are averaged over rows."""
    y = np.asarray(y)
    y_hat = np.asarray(y_hat)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise ValueError("empty label vectors")
    return float(np.mean(y.astype(bool) != y_hat.astype(bool)))


def binarize(probs, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(probs) >= threshold).astype(np.int64)


# --- model -----------------------------------------------------------------


def head_config(hidden: int = 32, n_filters: int = 32, widths=(2, 3, 4)) -> ModelConfig:
    return ModelConfig(task="backchannel", n_classes=N_RESPONSES, hidden=hidden, widths=widths,
                       n_filters=n_filters, modality="text", use_bot_text=False, output="sigmoid")


def soft_label_examples(records: Sequence[SoftLabel], table: EmbeddingTable) -> list[Example]:
    empty_audio = np.zeros((1, 64), dtype=np.float32)
    return [Example(table.encode(r.query), table.encode(""), empty_audio, 0.0, np.asarray(r.label, float))
            for r in records]


def query_examples(queries: Sequence[str], table: EmbeddingTable) -> list[Example]:
    empty_audio = np.zeros((1, 64), dtype=np.float32)
    return [Example(table.encode(q), table.encode(""), empty_audio) for q in queries]


def score_queries(model: Model, queries: Sequence[str], batch_size: int = 256) -> np.ndarray:
    ex = query_examples(queries, model.embeddings)
    return np.concatenate([predict_proba(model, collate(ex[i:i + batch_size]))
                           for i in range(0, len(ex), batch_size)])


class BackchannelSelector:
    """Trained head plus the selection policy; one rng per session."""

    def __init__(self, model: Model, threshold: float = 0.5, seed: int = 0):
        if model.config.n_classes != N_RESPONSES or model.config.output != "sigmoid":
            raise ValueError("backchannel selector needs a 10-label sigmoid head")
        self.model = model
        self.threshold = threshold
        self.rng = np.random.default_rng(seed)

    def __call__(self, query: str) -> str:
        probs = score_queries(self.model, [query])[0]
        return INVENTORY[select_response(probs, self.threshold, self.rng)]


# --- synthetic query/response data ------------------------------------------

# Each intent has query words and the responses a listener finds fitting,
# with relative preference.
INTENTS = {
    "request": (["please", "can", "you", "help", "me", "book", "a", "ticket", "change", "my", "plan"],
                {"sure": 5, "okay": 3, "one moment": 2}),
    "narrate": (["so", "yesterday", "i", "went", "to", "the", "store", "and", "then", "they", "said"],
                {"um-hum": 4, "i see": 3, "go on": 3}),
    "confirm": (["is", "that", "right", "correct", "the", "number", "you", "have", "on", "file"],
                {"yes": 5, "right": 3, "got it": 2}),
    "inform": (["my", "account", "number", "is", "seven", "four", "two", "nine", "and", "zip"],
               {"got it": 5, "okay": 5}),
    "hesitate": (["um", "well", "i", "think", "maybe", "not", "sure", "about", "uh", "the"],
                 {"go on": 4, "well": 3, "um-hum": 3}),
    "complain": (["this", "is", "terrible", "nobody", "called", "me", "back", "again", "why"],
                 {"i see": 4, "right": 3, "one moment": 3}),
}


def backchannel_vocabulary() -> list[str]:
    words = set()
    for qwords, _ in INTENTS.values():
        words.update(qwords)
    return sorted(words)


@dataclass(frozen=True)
class BackchannelItem:
    query: str
    intent: str
    response: int
    appropriate: tuple  # response indices that fit the intent


def appropriate_set(intent: str) -> np.ndarray:
    y = np.zeros(N_RESPONSES, dtype=np.int64)
    for name in INTENTS[intent][1]:
        y[INVENTORY.index(name)] = 1
    return y


def synthetic_pairs(n: int, seed: int = 0, query_len=(3, 6), repeat_rate: float = 0.3) -> list[BackchannelItem]:
    """``n`` query/response pairs; about ``repeat_rate`` of queries reuse an
    earlier query of the same intent so the merge step has work to do."""
    rng = np.random.default_rng(seed)
    names = sorted(INTENTS)
    seen: dict[str, list[str]] = {k: [] for k in names}
    out = []
    for _ in range(n):
        intent = names[int(rng.integers(len(names)))]
        qwords, prefs = INTENTS[intent]
        if seen[intent] and rng.random() < repeat_rate:
            query = seen[intent][int(rng.integers(len(seen[intent])))]
        else:
            k = int(rng.integers(query_len[0], query_len[1] + 1))
            query = " ".join(qwords[int(i)] for i in rng.integers(len(qwords), size=k))
            seen[intent].append(query)
        resp_names = sorted(prefs)
        w = np.array([prefs[r] for r in resp_names], dtype=float)
        resp = resp_names[int(rng.choice(len(resp_names), p=w / w.sum()))]
        app = tuple(int(i) for i in np.flatnonzero(appropriate_set(intent)))
        out.append(BackchannelItem(query, intent, INVENTORY.index(resp), app))
    return out


def response_counts(items: Sequence[BackchannelItem]) -> Counter:
    return Counter(INVENTORY[it.response] for it in items)
