"""Log mel-filterbank front-end, tokenizer and word embeddings."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

OOV = "<unk>"


@dataclass(frozen=True)
class FbankConfig:
    sample_rate_hz: int = 8000
    n_fft: int = 1024
    hop: int = 512
    n_mels: int = 64
    log_floor: float = 1e-10

    def validate(self) -> None:
        if not 0 < self.hop <= self.n_fft:
            raise ValueError("need 0 < hop <= n_fft")
        if not 0 < self.n_mels < self.n_fft // 2 + 1:
            raise ValueError("need 0 < n_mels < n_fft/2 + 1")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: FbankConfig = FbankConfig()) -> np.ndarray:
    """Triangular HTK-mel filters, shape ``(n_mels, n_fft // 2 + 1)``.

    Peaks are 1; edges are equally spaced on the mel scale from 0 Hz to
    Nyquist.
    """
    config.validate()
    n_bins = config.n_fft // 2 + 1
    bin_hz = np.arange(n_bins) * config.sample_rate_hz / config.n_fft
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(config.sample_rate_hz / 2.0), config.n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz - lo) / (mid - lo)
    falling = (hi - bin_hz) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def frame_count(n_samples: int, config: FbankConfig = FbankConfig()) -> int:
    if n_samples <= 0:
        raise ValueError("empty audio")
    if n_samples < config.n_fft:
        return 1
    return 1 + (n_samples - config.n_fft) // config.hop


def frames(samples: np.ndarray, config: FbankConfig = FbankConfig()) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    n = frame_count(len(x), config)
    if len(x) < config.n_fft:
        x = np.pad(x, (0, config.n_fft - len(x)))
    idx = np.arange(config.n_fft)[None, :] + config.hop * np.arange(n)[:, None]
    return x[idx]


def hann(n: int) -> np.ndarray:
    # periodic Hann, the usual STFT choice
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def power_spectrogram(samples: np.ndarray, config: FbankConfig = FbankConfig()) -> np.ndarray:
    """|rfft|^2 of Hann-windowed frames, shape ``(frames, n_fft // 2 + 1)``."""
    spec = np.fft.rfft(frames(samples, config) * hann(config.n_fft), axis=1)
    return spec.real**2 + spec.imag**2


_FILTER_CACHE: dict = {}


def fbank(samples: np.ndarray, config: FbankConfig = FbankConfig()) -> np.ndarray:
    """Natural-log mel energies, shape ``(frames, n_mels)``.

    Raises ``ValueError("empty audio")`` for zero-length input.
    """
    if len(samples) == 0:
        raise ValueError("empty audio")
    fb = _FILTER_CACHE.get(config)
    if fb is None:
        fb = _FILTER_CACHE[config] = mel_filterbank(config)
    mel = power_spectrogram(samples, config) @ fb.T
    return np.log(np.maximum(mel, config.log_floor))


def frame_times_ms(n_frames: int, config: FbankConfig = FbankConfig()) -> np.ndarray:
    """Start time of each frame in milliseconds."""
    return np.arange(n_frames) * config.hop * 1000.0 / config.sample_rate_hz


# --- text -------------------------------------------------------------------------


def tokenize(text: str, vocab=None) -> list[str]:
    """Whitespace tokens; out-of-vocabulary words fall back to characters,
    and characters that are still unknown become ``OOV``.

    Without a vocabulary every whitespace token is kept as is.
    """
    tokens: list[str] = []
    for word in text.split():
        if vocab is None or word in vocab:
            tokens.append(word)
            continue
        tokens.extend(ch if ch in vocab else OOV for ch in word)
    return tokens


@dataclass
class EmbeddingTable:
    vocab: dict
    matrix: np.ndarray
    oov_index: int = 0
    tokens: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __contains__(self, token: str) -> bool:
        return token in self.vocab

    def index(self, token: str) -> int:
        return self.vocab.get(token, self.oov_index)

    def indices(self, tokens: Sequence[str]) -> np.ndarray:
        """Row ids; an empty sequence maps to a single OOV row."""
        if not tokens:
            return np.array([self.oov_index], dtype=np.int64)
        return np.array([self.index(t) for t in tokens], dtype=np.int64)

    def encode(self, text: str) -> np.ndarray:
        return self.indices(tokenize(text, self))

    @classmethod
    def from_tokens(cls, tokens: Sequence[str], matrix: np.ndarray) -> "EmbeddingTable":
        tokens = list(tokens)
        matrix = np.asarray(matrix)
        if OOV not in tokens:
            tokens = [OOV] + tokens
            matrix = np.vstack([np.zeros((1, matrix.shape[1]), dtype=matrix.dtype), matrix])
        if len(tokens) != matrix.shape[0]:
            raise ValueError("one row per token required")
        vocab = {t: i for i, t in enumerate(tokens)}
        if len(vocab) != len(tokens):
            raise ValueError("duplicate tokens")
        return cls(vocab=vocab, matrix=matrix, oov_index=vocab[OOV], tokens=tokens)

    @classmethod
    def random(cls, tokens: Sequence[str], dim: int, seed: int = 0, scale: float = 0.5) -> "EmbeddingTable":
        rng = np.random.default_rng(seed)
        toks = [OOV] + [t for t in dict.fromkeys(tokens) if t != OOV]
        mat = rng.normal(0.0, scale, size=(len(toks), dim))
        mat[0] = 0.0
        return cls.from_tokens(toks, mat)


def embed(tokens: Sequence[str], table: EmbeddingTable) -> np.ndarray:
    return table.matrix[table.indices(tokens)]


def load_embeddings(path, dim: Optional[int] = None) -> EmbeddingTable:
    """Read a text embedding file: ``token v1 ... vD`` per line."""
    tokens, rows = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2 or not parts[0]:
                continue
            vec = [float(v) for v in parts[1:]]
            if dim is None:
                dim = len(vec)
            if len(vec) != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(vec)}")
            tokens.append(parts[0])
            rows.append(vec)
    if not rows:
        raise ValueError(f"{path}: no embeddings")
    return EmbeddingTable.from_tokens(tokens, np.array(rows, dtype=np.float64))


def save_embeddings(table: EmbeddingTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok in table.tokens:
            row = table.matrix[table.vocab[tok]]
            fh.write(tok + " " + " ".join(repr(float(v)) for v in row) + "\n")


def fbank_csv(matrix: np.ndarray, config: FbankConfig = FbankConfig()) -> str:
    times = frame_times_ms(len(matrix), config)
    head = "t_ms," + ",".join(f"mel{i}" for i in range(matrix.shape[1]))
    rows = [f"{t:g}," + ",".join(f"{v:.6f}" for v in row) for t, row in zip(times, matrix)]
    return "\n".join([head] + rows) + "\n"
