"""Synthetic sessions with exact ground truth.

Two session families are generated:

* user-state sessions: a bot prompt, then one or two user speech segments
  whose closing syllable and closing word carry the user-state cue. Each
  modality is independently replaced by a class-neutral ending with a
  configurable probability, so neither modality alone is sufficient.
* barge-in sessions: a long bot playback during which something produces
  an ASR hypothesis: a real interruption, or one of the four false kinds
  (no intent, noise, echo, misplaced turn).

Every trace carries its labels and the action script the turn engine must
produce when driven by an oracle classifier.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from ..trace import Event, EventKind, Trace, float_to_pcm16, load_trace, save_trace
from ..turnpolicy import EngineConfig, UserState
from . import synth
from .synth import AudioParams

STATE_NAMES = {
    "turn_switch": UserState.TURN_SWITCH,
    "turn_keep": UserState.TURN_KEEP,
    "hesitation": UserState.TURN_KEEP_HESITATION,
}
STATE_KEYS = {v: k for k, v in STATE_NAMES.items()}
FALSE_KINDS = ("NoIntent", "Noise", "Echo", "MisplacedTurn")

BODY_WORDS = ("i we want need would like check pay change cancel update about my_order bill "
              "account delivery refund address phone plan service package payment last month "
              "new this help with look at").split()
SWITCH_END = ("please", "thanks", "today", "now", "asap")
KEEP_END = ("and", "but", "because", "so", "the", "to")
HESITATION_END = ("um", "uh", "er", "hmm")
NEUTRAL_END = ("card", "number", "details", "info")
ENDINGS = {
    UserState.TURN_SWITCH: SWITCH_END,
    UserState.TURN_KEEP: KEEP_END,
    UserState.TURN_KEEP_HESITATION: HESITATION_END,
}
AUDIO_STYLE = {
    UserState.TURN_SWITCH: "switch",
    UserState.TURN_KEEP: "keep",
    UserState.TURN_KEEP_HESITATION: "hesitation",
}
BARGE_WORDS = ("wait stop no hold on actually i have a question that is wrong let me speak "
               "to agent not what asked sorry excuse").split()
NO_INTENT_WORDS = ("ok", "yes", "um-hum", "right", "yeah", "sure")
BOT_TEXTS = (
    "your order has been shipped and will arrive within three working days",
    "i can help you with your bill what would you like to know",
    "please tell me the phone number linked to your account",
    "the refund was issued to your original payment method last week",
    "your current plan includes unlimited calls and ten gigabytes of data",
    "is there anything else i can help you with today",
    "let me check the delivery status for you one moment",
    "you can update the address in the app under account settings",
)


def vocabulary() -> list[str]:
    words = set(BODY_WORDS) | set(SWITCH_END) | set(KEEP_END) | set(HESITATION_END)
    words |= set(NEUTRAL_END) | set(BARGE_WORDS) | set(NO_INTENT_WORDS)
    for t in BOT_TEXTS:
        words |= set(t.split())
    return sorted(words)


@dataclass
class ScenarioConfig:
    seed: int = 0
    n_state: int = 300
    state_mix: dict = field(default_factory=lambda: {"turn_switch": 1 / 3, "turn_keep": 1 / 3,
                                                     "hesitation": 1 / 3})
    resume_rate: float = 0.3
    text_ambiguity: float = 0.35
    audio_ambiguity: float = 0.35
    n_bargein: int = 300
    bargein_prior: float = 0.11
    false_kind_mix: dict = field(default_factory=lambda: {k: 0.25 for k in FALSE_KINDS})
    bargein_confidence_threshold: float = 0.8
    audio: AudioParams = field(default_factory=AudioParams)
    engine: EngineConfig = field(default_factory=EngineConfig)

    def validate(self) -> None:
        for name in ("state_mix", "false_kind_mix"):
            mix = getattr(self, name)
            if any(v < 0 for v in mix.values()) or abs(sum(mix.values()) - 1.0) > 1e-9:
                raise ValueError(f"{name} proportions must be nonnegative and sum to 1")
        if set(self.state_mix) - set(STATE_NAMES):
            raise ValueError(f"unknown user states in state_mix: {set(self.state_mix) - set(STATE_NAMES)}")
        if set(self.false_kind_mix) - set(FALSE_KINDS):
            raise ValueError("unknown false barge-in kinds")
        if not 0.0 <= self.bargein_prior <= 1.0:
            raise ValueError("bargein_prior must lie in [0, 1]")
        for name in ("resume_rate", "text_ambiguity", "audio_ambiguity"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.n_state < 0 or self.n_bargein < 0:
            raise ValueError("counts must be nonnegative")
        self.engine.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "audio" in d and isinstance(d["audio"], dict):
            a = dict(d["audio"])
            for k in ("syllable_ms", "syllable_gap_ms", "user_f0_hz"):
                if k in a:
                    a[k] = tuple(a[k])
            d["audio"] = AudioParams(**a)
        if "engine" in d and isinstance(d["engine"], dict):
            d["engine"] = EngineConfig(**d["engine"])
        return cls(**d)


def allocate(n: int, proportions: dict) -> dict:
    """Exact class counts by the largest-remainder rule (ties by key order)."""
    keys = list(proportions)
    raw = np.array([proportions[k] * n for k in keys])
    counts = np.floor(raw + 1e-9).astype(int)
    rem = raw - counts
    order = sorted(range(len(keys)), key=lambda i: (-rem[i], i))
    for i in order[: n - counts.sum()]:
        counts[i] += 1
    return {k: int(c) for k, c in zip(keys, counts)}


def bargein_counts(n: int, prior: float, false_mix: dict) -> dict:
    n_true = int(round(prior * n))
    counts = {"True": n_true}
    counts.update(allocate(n - n_true, false_mix))
    return counts


# --- session assembly ----------------------------------------------------------------


class _Session:
    def __init__(self, session_id: str, rng: np.random.Generator, p: AudioParams):
        self.session_id = session_id
        self.rng = rng
        self.p = p
        self.sr = p.sample_rate_hz
        self.events: list[Event] = []
        self.chunks: list[tuple[int, np.ndarray]] = []
        self.segment = 0

    def ms(self, n_samples: int) -> int:
        return int(round(n_samples * 1000 / self.sr))

    def add(self, t_ms: int, kind: EventKind, **payload) -> None:
        self.events.append(Event(int(t_ms), kind, len(self.events), payload))

    def place(self, start_ms: int, parts: list[np.ndarray]) -> list[tuple[int, int]]:
        """Lay audio parts out from ``start_ms``; returns (start, end) ms of each."""
        pos = start_ms * self.sr // 1000
        spans = []
        for part in parts:
            self.chunks.append((pos, part))
            spans.append((self.ms(pos), self.ms(pos + len(part))))
            pos += len(part)
        return spans

    def speech_segment(self, start_ms: int, parts: list[np.ndarray], words: list[str],
                       confidence: float, gapped: bool = True) -> tuple[int, int]:
        """Place audio plus VAD edges and streaming ASR for one segment.

        With ``gapped`` the parts alternate word, pause, word, ...; otherwise
        every part is one word.
        """
        spans = self.place(start_ms, parts)
        word_spans = spans[0::2] if gapped else spans
        if len(word_spans) != len(words):
            raise AssertionError("one audio part per word expected")
        end = word_spans[-1][1]
        seg = self.segment
        self.segment += 1
        self.add(start_ms, EventKind.VAD_SPEECH_START)
        stamps = [[w, int(a), int(b)] for w, (a, b) in zip(words, word_spans)]
        for i in range(len(words) - 1):
            self.add(word_spans[i][1], EventKind.ASR_PARTIAL, segment=seg, text=" ".join(words[: i + 1]),
                     confidence=confidence, words=stamps[: i + 1])
        self.add(end, EventKind.ASR_FINAL, segment=seg, text=" ".join(words),
                 confidence=confidence, words=stamps)
        self.add(end, EventKind.VAD_SPEECH_END)
        self.first_word_end = word_spans[0][1]
        return start_ms, end

    def finish(self, tail_ms: int, labels: dict) -> Trace:
        end = max((pos + len(x) for pos, x in self.chunks), default=0)
        n = end + tail_ms * self.sr // 1000
        audio = synth.noise(self.rng, n, self.p.amplitude * 10 ** (-self.p.noise_snr_db / 20))
        for pos, x in self.chunks:
            audio[pos:pos + len(x)] += x
        frame = self.sr // 10
        for off in range(0, n, frame):
            self.add(self.ms(off), EventKind.AUDIO_FRAME, offset=off, length=min(frame, n - off))
        events = sorted(self.events, key=lambda e: (e.t_ms, e.seq))
        events = [replace(e, seq=i) for i, e in enumerate(events)]
        return Trace(session_id=self.session_id, events=events, sample_rate_hz=self.sr,
                     audio_ref=f"{self.session_id}.wav", labels=labels, audio=float_to_pcm16(audio))


def _user_utterance(rng, state: UserState, text_cue: bool, audio_cue: bool, f0: float,
                    p: AudioParams, n_body: Optional[int] = None):
    n_body = int(rng.integers(3, 8)) if n_body is None else n_body
    words = list(rng.choice(BODY_WORDS, size=n_body))
    words.append(str(rng.choice(ENDINGS[state] if text_cue else NEUTRAL_END)))
    parts = synth.speech(rng, n_body, f0, p)
    parts += synth.ending(rng, AUDIO_STYLE[state] if audio_cue else "neutral", f0, p)
    return words, parts


def user_state_session(idx: int, state: UserState, rng: np.random.Generator,
                       cfg: ScenarioConfig) -> Trace:
    p = cfg.audio
    e = cfg.engine
    s = _Session(f"state-{idx:05d}", rng, p)
    f0 = rng.uniform(*p.user_f0_hz)
    bot_text = str(rng.choice(BOT_TEXTS))
    bot_ms = int(rng.integers(1000, 2000))
    s.add(0, EventKind.BOT_PLAYBACK_START, utterance_id=f"{s.session_id}-bot0", text=bot_text)
    s.add(bot_ms, EventKind.BOT_PLAYBACK_END)

    text_cue = rng.random() >= cfg.text_ambiguity
    audio_cue = rng.random() >= cfg.audio_ambiguity
    resume = rng.random() < cfg.resume_rate
    start = bot_ms + int(rng.integers(300, 700))
    conf = float(np.round(rng.uniform(0.85, 0.99), 3))

    segments = []
    words, parts = _user_utterance(rng, state, text_cue, audio_cue, f0, p)
    a, b = s.speech_segment(start, parts, words, conf)
    segments.append({"start_ms": a, "end_ms": b, "state": STATE_KEYS[state], "text": " ".join(words),
                     "text_cue": bool(text_cue), "audio_cue": bool(audio_cue)})
    if resume:
        if state is UserState.TURN_SWITCH:
            gap = int(rng.integers(e.vad_silence_ms + 200, e.timeout_ms + 1500))
        elif rng.random() < 0.25:
            gap = int(rng.integers(e.ipu_silence_ms + 100, e.vad_silence_ms - 100))
        else:
            gap = int(rng.integers(e.vad_silence_ms + 100, e.timeout_ms - 100))
        nxt = UserState.TURN_SWITCH
        words2, parts2 = _user_utterance(rng, nxt, True, True, f0, p, n_body=int(rng.integers(2, 5)))
        a2, b2 = s.speech_segment(b + gap, parts2, words2, conf)
        segments.append({"start_ms": a2, "end_ms": b2, "state": STATE_KEYS[nxt], "text": " ".join(words2),
                         "text_cue": True, "audio_cue": True})

    labels = {
        "task": "state",
        "state": STATE_KEYS[state],
        "label": int(state),
        "resume": bool(resume),
        "bot_text": bot_text,
        "segments": segments,
    }
    labels["expected_actions"] = expected_script(segments, e)
    return s.finish(300, labels)


def bargein_session(idx: int, kind: str, rng: np.random.Generator, cfg: ScenarioConfig) -> Trace:
    p = cfg.audio
    s = _Session(f"bargein-{idx:05d}", rng, p)
    bot_text = str(rng.choice(BOT_TEXTS))
    play_ms = int(rng.integers(4000, 9000))
    s.add(0, EventKind.BOT_PLAYBACK_START, utterance_id=f"{s.session_id}-bot0", text=bot_text)
    s.add(play_ms, EventKind.BOT_PLAYBACK_END)
    thr = cfg.bargein_confidence_threshold
    conf = float(np.round(rng.uniform(thr, 1.0), 3))
    f0 = rng.uniform(*p.user_f0_hz)

    if kind == "MisplacedTurn":
        onset = int(rng.integers(50, 500))
    elif kind == "True":
        onset = int(rng.integers(800, play_ms - 1800))
    else:
        onset = int(rng.integers(300, play_ms - 1800))

    if kind == "True":
        n = int(rng.integers(3, 7))
        words = list(rng.choice(BARGE_WORDS, size=n))
        parts = synth.speech(rng, n, f0, p)
    elif kind == "NoIntent":
        n = int(rng.integers(1, 3))
        words = list(rng.choice(NO_INTENT_WORDS, size=n))
        parts = [0.6 * x for x in synth.speech(rng, n, f0, p)]
    elif kind == "MisplacedTurn":
        words = [str(rng.choice(SWITCH_END))]
        parts = synth.ending(rng, "switch", f0, p)[1:]
    elif kind == "Noise":
        n = int(rng.integers(1, 3))
        vocab = vocabulary()
        words = [str(w) for w in rng.choice(vocab, size=n)]
        dur = int(rng.uniform(0.25, 0.5) * p.sample_rate_hz)
        parts = [synth.babble(rng, dur, p) for _ in range(n)]
    elif kind == "Echo":
        bw = bot_text.split()
        n = int(rng.integers(2, 5))
        j = int(rng.integers(0, len(bw) - n + 1))
        words = bw[j:j + n]
        dur = int(0.2 * p.sample_rate_hz)
        parts = [p.echo_gain * synth.lowpass(synth.bot_voice(rng, dur, p)) for _ in range(n)]
    else:
        raise ValueError(f"unknown barge-in kind {kind!r}")

    a, b = s.speech_segment(onset, parts, words, conf, gapped=kind in ("True", "NoIntent"))
    first_partial = s.first_word_end if len(words) > 1 else b
    labels = {
        "task": "bargein",
        "kind": kind,
        "barge_in": kind == "True",
        "label": int(kind == "True"),
        "query_ms": first_partial,
        "playback_ms": [0, play_ms],
        "bot_text": bot_text,
        "segments": [{"start_ms": a, "end_ms": b, "state": "turn_switch", "text": " ".join(words)}],
    }
    actions = []
    if kind == "True":
        stop_at = first_partial + cfg.engine.classifier_latency_ms
        actions.append({"t_ms": stop_at, "action": "StopPlayback",
                        "payload": {"reason": "barge-in", "score": 1.0, "source": "callback",
                                    "utterance_id": f"{s.session_id}-bot0"}})
        actions += expected_script(labels["segments"], cfg.engine)
    labels["expected_actions"] = actions
    return s.finish(300, labels)


def expected_script(segments: list[dict], e: EngineConfig) -> list[dict]:
    """Actions an oracle-driven engine must emit, stepped by hand from the
    silence thresholds. Segments are consecutive user speech in one turn
    chain; each carries its end time, state and final text."""
    out: list[dict] = []
    query: list[str] = []
    lat = e.classifier_latency_ms
    for k, seg in enumerate(segments):
        query.append(seg["text"])
        q = " ".join(" ".join(query).split())
        end = seg["end_ms"]
        nxt = segments[k + 1]["start_ms"] if k + 1 < len(segments) else None
        silence = float("inf") if nxt is None else nxt - end
        state = STATE_NAMES[seg["state"]]
        if silence <= e.ipu_silence_ms:
            continue
        result_at = end + e.ipu_silence_ms + lat
        vad_at = max(end + e.vad_silence_ms, result_at)
        timeout_at = max(end + e.timeout_ms, result_at)

        def reached(t):
            return nxt is None or nxt >= t

        if state is UserState.TURN_SWITCH:
            if reached(result_at):
                out.append({"t_ms": result_at, "action": "RequestBackchannel", "payload": {"text": q}})
            if reached(vad_at):
                out.append({"t_ms": vad_at, "action": "EndOfTurn", "payload": {"text": q}})
                query = []
            continue
        if state is UserState.TURN_KEEP_HESITATION and reached(vad_at):
            out.append({"t_ms": vad_at, "action": "RequestBackchannel", "payload": {"text": q}})
        if reached(timeout_at):
            out.append({"t_ms": timeout_at, "action": "EndOfTurn", "payload": {"text": q}})
            query = []
        elif silence >= e.vad_silence_ms:
            out.append({"t_ms": nxt, "action": "ConcatAsr", "payload": {"text": q}})
    return out


# --- corpus ---------------------------------------------------------------------------


def _schedule(counts: dict, rng: np.random.Generator) -> list[str]:
    kinds = [k for k, c in counts.items() for _ in range(c)]
    order = rng.permutation(len(kinds))
    return [kinds[i] for i in order]


def iter_corpus(cfg: ScenarioConfig, tasks=("state", "bargein")) -> Iterator[Trace]:
    """Yield traces one at a time; each has its own seed derived from
    ``cfg.seed`` and its index, so any subset is reproducible alone."""
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    state_seq, barge_seq, order_seq = root.spawn(3)
    order_rng = np.random.default_rng(order_seq)
    state_plan = _schedule(allocate(cfg.n_state, cfg.state_mix), order_rng)
    barge_plan = _schedule(bargein_counts(cfg.n_bargein, cfg.bargein_prior, cfg.false_kind_mix), order_rng)
    if "state" in tasks:
        for i, (name, ss) in enumerate(zip(state_plan, state_seq.spawn(len(state_plan)))):
            yield user_state_session(i, STATE_NAMES[name], np.random.default_rng(ss), cfg)
    if "bargein" in tasks:
        for i, (kind, ss) in enumerate(zip(barge_plan, barge_seq.spawn(len(barge_plan)))):
            yield bargein_session(i, kind, np.random.default_rng(ss), cfg)


def generate_corpus(cfg: ScenarioConfig, tasks=("state", "bargein")) -> list[Trace]:
    return list(iter_corpus(cfg, tasks))


def write_corpus(traces, out_dir, cfg: ScenarioConfig) -> Path:
    """Directory of ``<id>.jsonl`` + ``<id>.wav``, ``labels.jsonl`` and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = []
    with open(out / "labels.jsonl", "w", encoding="utf-8") as fh:
        for tr in traces:
            save_trace(tr, out / f"{tr.session_id}.jsonl")
            rec = {"session_id": tr.session_id, **(tr.labels or {})}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            ids.append(tr.session_id)
    manifest = {"seed": cfg.seed, "config": cfg.to_dict(), "traces": ids}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return out


def read_corpus(corpus_dir) -> list[Trace]:
    d = Path(corpus_dir)
    manifest = json.loads((d / "manifest.json").read_text())
    return [load_trace(d / f"{sid}.jsonl") for sid in manifest["traces"]]
