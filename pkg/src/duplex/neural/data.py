"""Turning feature clips into padded training batches."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..features import EmbeddingTable, FbankConfig, fbank
from ..trace import FeatureClip
from .model import Batch

# 5 s at 8 kHz with hop 512
MAX_FRAMES = 77


@dataclass
class Example:
    user_ids: np.ndarray
    bot_ids: np.ndarray
    audio: np.ndarray  # (T, n_mels) float32
    timing: float = 0.0
    target: Optional[np.ndarray] = None  # (K,) hard or soft label


def timing_feature(elapsed_ms: Optional[int]) -> float:
    if elapsed_ms is None:
        return 0.0
    return float(min(max(elapsed_ms / 10000.0, 0.0), 1.0))


def clip_fbank(clip: FeatureClip, config: FbankConfig = FbankConfig()) -> np.ndarray:
    """FBANK of the clip audio; an empty clip yields one floor-valued frame."""
    audio = clip.audio_window
    if len(audio) == 0:
        audio = np.zeros(1)
    return fbank(audio, config)[-MAX_FRAMES:].astype(np.float32)


def make_example(clip: FeatureClip, table: EmbeddingTable, target=None,
                 fbank_config: FbankConfig = FbankConfig()) -> Example:
    return Example(
        user_ids=table.encode(clip.user_text),
        bot_ids=table.encode(clip.bot_text),
        audio=clip_fbank(clip, fbank_config),
        timing=timing_feature(clip.playback_elapsed_ms),
        target=None if target is None else np.asarray(target, dtype=np.float64),
    )


def one_hot(label: int, k: int) -> np.ndarray:
    y = np.zeros(k)
    y[label] = 1.0
    return y


def _pad_ids(seqs: Sequence[np.ndarray]) -> np.ndarray:
    L = max(len(s) for s in seqs)
    out = np.full((len(seqs), L), -1, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def collate(examples: Sequence[Example], n_mels: Optional[int] = None) -> Batch:
    """Pad into a batch; ``n_mels`` defaults to the examples' feature width."""
    if n_mels is None:
        n_mels = examples[0].audio.shape[1]
    T = max(len(e.audio) for e in examples)
    audio = np.zeros((len(examples), T, n_mels), dtype=np.float32)
    mask = np.zeros((len(examples), T), dtype=np.float32)
    for i, e in enumerate(examples):
        n = len(e.audio)
        audio[i, T - n:] = e.audio
        mask[i, T - n:] = 1.0
    targets = None
    if all(e.target is not None for e in examples):
        targets = np.stack([e.target for e in examples])
    return Batch(
        user_ids=_pad_ids([e.user_ids for e in examples]),
        bot_ids=_pad_ids([e.bot_ids for e in examples]),
        audio=audio,
        audio_mask=mask,
        timing=np.array([e.timing for e in examples], dtype=np.float64),
        targets=targets,
    )


def batches(examples: Sequence[Example], size: int, order: Optional[np.ndarray] = None):
    idx = np.arange(len(examples)) if order is None else order
    for s in range(0, len(idx), size):
        yield collate([examples[i] for i in idx[s:s + size]])


def audio_frames(examples: Sequence[Example]) -> np.ndarray:
    return np.concatenate([e.audio for e in examples], axis=0)
