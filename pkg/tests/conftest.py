from __future__ import annotations

import numpy as np
import pytest

from duplex.features import EmbeddingTable
from duplex.neural.data import Example, collate, one_hot
from duplex.neural.model import Model, ModelConfig
from duplex.trace import Event, EventKind, Trace

VOCAB = ["i", "want", "to", "pay", "my", "bill", "please", "and", "um", "card", "wait", "stop",
         "hello", "how", "can", "help", "you"]


@pytest.fixture(scope="session")
def table() -> EmbeddingTable:
    return EmbeddingTable.random(VOCAB, 6, seed=3)


def random_examples(table: EmbeddingTable, n: int, k: int, seed: int = 0, n_mels: int = 64,
                    labeled: bool = True) -> list[Example]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        user = " ".join(rng.choice(VOCAB, size=int(rng.integers(1, 6))))
        bot = " ".join(rng.choice(VOCAB, size=int(rng.integers(1, 4))))
        audio = rng.normal(size=(int(rng.integers(2, 6)), n_mels)).astype(np.float32)
        y = one_hot(int(rng.integers(k)), k) if labeled else None
        out.append(Example(table.encode(user), table.encode(bot), audio, float(rng.uniform()), y))
    return out


@pytest.fixture
def tiny_batch(table):
    return collate(random_examples(table, 5, 3, seed=1, n_mels=8), n_mels=8)


def tiny_model(table, hidden: int = 4, seed: int = 0, dtype=np.float64, **kw) -> Model:
    cfg = dict(task="state", n_classes=3, hidden=hidden, n_filters=3, widths=(2, 3), n_mels=8)
    cfg.update(kw)
    return Model(ModelConfig(**cfg), table, seed=seed, dtype=dtype)


class Script:
    """Builds traces event by event with increasing sequence numbers."""

    def __init__(self, session_id: str = "s"):
        self.session_id = session_id
        self.events: list[Event] = []
        self.segment = 0

    def add(self, t_ms: int, kind: EventKind, **payload) -> "Script":
        self.events.append(Event(t_ms, kind, len(self.events), payload))
        return self

    def speech(self, start: int, end: int, text: str, conf: float = 0.9) -> "Script":
        """VAD edges around one ASR segment whose final lands at ``end``."""
        self.add(start, EventKind.VAD_SPEECH_START)
        words = text.split()
        if len(words) > 1:
            self.add((start + end) // 2, EventKind.ASR_PARTIAL, segment=self.segment, text=words[0],
                     confidence=conf)
        self.add(end, EventKind.ASR_FINAL, segment=self.segment, text=text, confidence=conf)
        self.add(end, EventKind.VAD_SPEECH_END)
        self.segment += 1
        return self

    def trace(self, labels=None) -> Trace:
        events = sorted(self.events, key=lambda e: (e.t_ms, e.seq))
        return Trace(self.session_id, events, labels=labels, audio=np.zeros(0, dtype=np.int16))


ACCEPTANCE: list[str] = []


def record(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
