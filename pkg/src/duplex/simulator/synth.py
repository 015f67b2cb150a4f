"""Parametric stand-ins for speech: harmonic tone syllables, fillers, noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SR = 8000


@dataclass(frozen=True)
class AudioParams:
    sample_rate_hz: int = SR
    syllable_ms: tuple = (130, 240)
    syllable_gap_ms: tuple = (20, 90)
    user_f0_hz: tuple = (110.0, 240.0)
    bot_f0_hz: float = 300.0
    amplitude: float = 0.4
    noise_snr_db: float = 25.0
    echo_gain: float = 0.25


def _envelope(n: int, attack: int, release: int, tail: float = 0.0) -> np.ndarray:
    """Raised-cosine attack and release; ``tail`` is the level the release ends at."""
    env = np.ones(n)
    a = min(attack, n)
    if a > 0:
        env[:a] = 0.5 - 0.5 * np.cos(np.pi * np.arange(a) / a)
    r = min(release, n - a)
    if r > 0:
        ramp = 0.5 + 0.5 * np.cos(np.pi * np.arange(1, r + 1) / r)
        env[n - r:] *= tail + (1.0 - tail) * ramp
    return env


def tone(n: int, f0_start: float, f0_end: float, harmonics=(1.0, 0.5, 0.3, 0.15),
         sr: int = SR, phase: float = 0.0) -> np.ndarray:
    """Harmonic tone with a linear pitch glide."""
    f0 = np.linspace(f0_start, f0_end, n)
    ph = phase + 2.0 * np.pi * np.cumsum(f0) / sr
    out = np.zeros(n)
    for k, amp in enumerate(harmonics, start=1):
        if k * max(f0_start, f0_end) < sr / 2:
            out += amp * np.sin(k * ph)
    return out / sum(harmonics)


def syllable(rng: np.random.Generator, f0: float, p: AudioParams, dur_ms=None,
             f0_end=None, amp=1.0, release_ms=30, tail=0.0) -> np.ndarray:
    ms = rng.uniform(*p.syllable_ms) if dur_ms is None else dur_ms
    n = int(ms * p.sample_rate_hz / 1000)
    wobble = f0 * rng.uniform(0.95, 1.05)
    end = wobble * rng.uniform(0.97, 1.03) if f0_end is None else f0_end
    sig = tone(n, wobble, end, sr=p.sample_rate_hz, phase=rng.uniform(0, 2 * np.pi))
    env = _envelope(n, int(0.02 * p.sample_rate_hz), int(release_ms * p.sample_rate_hz / 1000), tail)
    return amp * p.amplitude * sig * env


def gap(rng: np.random.Generator, p: AudioParams) -> np.ndarray:
    return np.zeros(int(rng.uniform(*p.syllable_gap_ms) * p.sample_rate_hz / 1000))


def speech(rng: np.random.Generator, n_syll: int, f0: float, p: AudioParams) -> list[np.ndarray]:
    """Syllables separated by short gaps (always shorter than an IPU pause)."""
    parts = []
    for i in range(n_syll):
        if i:
            parts.append(gap(rng, p))
        parts.append(syllable(rng, f0 * rng.uniform(0.9, 1.1), p))
    return parts


def ending(rng: np.random.Generator, style: str, f0: float, p: AudioParams) -> list[np.ndarray]:
    """Closing syllables carrying the user-state cue.

    ``switch``: falling pitch, long fade to silence. ``keep``: rising pitch,
    cut off at full energy. ``hesitation``: long quiet filler hum that trails
    off. ``neutral``: a plain syllable shared by all classes.
    """
    sr = p.sample_rate_hz
    if style == "switch":
        dur = rng.uniform(280, 380)
        return [gap(rng, p), syllable(rng, f0, p, dur_ms=dur, f0_end=f0 * rng.uniform(0.6, 0.72),
                                      release_ms=dur * 0.7)]
    if style == "keep":
        dur = rng.uniform(160, 240)
        return [gap(rng, p), syllable(rng, f0, p, dur_ms=dur, f0_end=f0 * rng.uniform(1.15, 1.3),
                                      release_ms=5, tail=0.0)]
    if style == "hesitation":
        dur = rng.uniform(450, 700)
        n = int(dur * sr / 1000)
        hum = tone(n, f0 * 0.85, f0 * 0.83, harmonics=(1.0, 0.2), sr=sr, phase=rng.uniform(0, 2 * np.pi))
        env = _envelope(n, int(0.05 * sr), int(0.5 * n))
        return [gap(rng, p), 0.35 * p.amplitude * hum * env]
    if style == "neutral":
        return [gap(rng, p), syllable(rng, f0, p, dur_ms=rng.uniform(180, 260), release_ms=60)]
    raise ValueError(f"unknown ending style {style!r}")


def noise(rng: np.random.Generator, n: int, level: float) -> np.ndarray:
    return level * rng.normal(0.0, 1.0, n)


def babble(rng: np.random.Generator, n: int, p: AudioParams) -> np.ndarray:
    """Background chatter or environment noise: overlapping random tones plus hiss."""
    out = noise(rng, n, 0.25 * p.amplitude * rng.uniform(0.3, 1.0))
    for _ in range(rng.integers(2, 5)):
        m = int(rng.uniform(0.15, 0.6) * n)
        start = rng.integers(0, max(1, n - m))
        f = rng.uniform(150, 1500)
        out[start:start + m] += 0.3 * p.amplitude * tone(m, f, f * rng.uniform(0.8, 1.2), sr=p.sample_rate_hz,
                                                          harmonics=(1.0,)) * _envelope(m, 80, 80)
    return out


def bot_voice(rng: np.random.Generator, n: int, p: AudioParams) -> np.ndarray:
    """The agent's synthetic voice: regular syllables around a fixed pitch."""
    out = np.zeros(n)
    pos = 0
    while pos < n:
        s = syllable(rng, p.bot_f0_hz, p, dur_ms=150, release_ms=40)
        m = min(len(s), n - pos)
        out[pos:pos + m] = s[:m]
        pos += m + int(0.05 * p.sample_rate_hz)
    return out


def lowpass(x: np.ndarray, k: int = 5) -> np.ndarray:
    return np.convolve(x, np.ones(k) / k, mode="same")


def concat(parts: list[np.ndarray]) -> np.ndarray:
    return np.concatenate(parts) if parts else np.zeros(0)
