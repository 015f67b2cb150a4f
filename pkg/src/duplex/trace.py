"""Session event model, JSON Lines trace format and inference windows."""

from __future__ import annotations

import enum
import json
import wave
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np

FORMAT_VERSION = "1"
SAMPLE_RATE_HZ = 8000
MAX_WINDOW_MS = 5000
# speech gaps shorter than this do not split a window region
WINDOW_GAP_MS = 200


class TraceError(ValueError):
    """Base class for trace problems."""


class TraceParseError(TraceError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TraceValidationError(TraceError):
    def __init__(self, violations: list[tuple[str, int]]):
        rules = "; ".join(f"{rule} (event {idx})" for rule, idx in violations)
        super().__init__(rules)
        self.violations = violations


class EventKind(str, enum.Enum):
    AUDIO_FRAME = "AudioFrame"
    ASR_PARTIAL = "AsrPartial"
    ASR_FINAL = "AsrFinal"
    VAD_SPEECH_START = "VadSpeechStart"
    VAD_SPEECH_END = "VadSpeechEnd"
    BOT_PLAYBACK_START = "BotPlaybackStart"
    BOT_PLAYBACK_END = "BotPlaybackEnd"


ASR_KINDS = (EventKind.ASR_PARTIAL, EventKind.ASR_FINAL)


@dataclass(frozen=True)
class Event:
    """One timestamped session event.

    ``payload`` holds the kind-specific fields:

    * AudioFrame: ``offset`` and ``length`` in samples
    * AsrPartial / AsrFinal: ``segment``, ``text``, ``confidence``,
      ``words`` as ``[word, start_ms, end_ms]`` triples
    * BotPlaybackStart: ``utterance_id``, ``text``, optional ``backchannel``
    """

    t_ms: int
    kind: EventKind
    seq: int = 0
    payload: dict = field(default_factory=dict)

    @property
    def text(self) -> str:
        return self.payload.get("text", "")

    @property
    def confidence(self) -> float:
        return float(self.payload.get("confidence", 0.0))


@dataclass
class Trace:
    session_id: str
    events: list[Event]
    sample_rate_hz: int = SAMPLE_RATE_HZ
    audio_ref: str = ""
    labels: Optional[dict] = None
    # int16 samples, loaded lazily from audio_ref when not given
    audio: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def samples(self, base_dir: Optional[Path] = None) -> np.ndarray:
        if self.audio is None:
            if not self.audio_ref:
                self.audio = np.zeros(0, dtype=np.int16)
            else:
                path = Path(self.audio_ref)
                if base_dir is not None and not path.is_absolute():
                    path = base_dir / path
                self.audio, _ = read_wav(path)
        return self.audio


@dataclass
class FeatureClip:
    audio_window: np.ndarray  # float samples in [-1, 1]
    user_text: str = ""
    bot_text: str = ""
    playback_elapsed_ms: Optional[int] = None
    start_ms: int = 0
    end_ms: int = 0
    asr_confidence: float = 0.0

    @property
    def duration_ms(self) -> int:
        return self.end_ms - self.start_ms


# --- WAV --------------------------------------------------------------------


def read_wav(path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1 or wf.getsampwidth() != 2:
            raise TraceError(f"{path}: expected mono 16-bit PCM")
        rate = wf.getframerate()
        data = wf.readframes(wf.getnframes())
    return np.frombuffer(data, dtype="<i2").astype(np.int16), rate


def write_wav(path, samples: np.ndarray, sample_rate_hz: int = SAMPLE_RATE_HZ) -> None:
    pcm = np.asarray(samples)
    if pcm.dtype != np.int16:
        pcm = float_to_pcm16(pcm)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate_hz)
        wf.writeframes(pcm.astype("<i2").tobytes())


def float_to_pcm16(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, -1.0, 1.0) * 32767.0).astype(np.int16)


def pcm16_to_float(x: np.ndarray) -> np.ndarray:
    return x.astype(np.float64) / 32768.0


# --- validation ---------------------------------------------------------------


def validate_trace(trace: Trace, audio_len: Optional[int] = None) -> list[tuple[str, int]]:
    """Return ``(rule, event_index)`` pairs; empty iff the trace is valid.

    ``audio_len`` bounds AudioFrame references; when omitted the in-memory
    audio is used if present.
    """
    out: list[tuple[str, int]] = []
    if audio_len is None and trace.audio is not None:
        audio_len = len(trace.audio)

    prev_key = None
    audio_end = None
    vad_open = None
    finished_segments: set = set()
    for i, ev in enumerate(trace.events):
        if not isinstance(ev.t_ms, int) or isinstance(ev.t_ms, bool) or ev.t_ms < 0:
            out.append(("t_ms must be a non-negative integer", i))
        key = (ev.t_ms, ev.seq)
        if prev_key is not None and key <= prev_key:
            out.append(("events not sorted", i))
        prev_key = key

        p = ev.payload
        if ev.kind is EventKind.AUDIO_FRAME:
            off, n = p.get("offset"), p.get("length")
            if not isinstance(off, int) or not isinstance(n, int) or off < 0 or n <= 0:
                out.append(("audio frame needs offset >= 0 and length > 0", i))
                continue
            if audio_end is not None and off < audio_end:
                out.append(("audio frames overlap or go backwards", i))
            audio_end = off + n
            if audio_len is not None and off + n > audio_len:
                out.append(("audio frame beyond end of audio", i))
        elif ev.kind in ASR_KINDS:
            conf = p.get("confidence", 0.0)
            if not isinstance(conf, (int, float)) or not 0.0 <= conf <= 1.0:
                out.append(("confidence must lie in [0, 1]", i))
            if not isinstance(p.get("text", ""), str):
                out.append(("asr text must be a string", i))
            seg = p.get("segment", 0)
            if seg in finished_segments:
                out.append(("asr event after final of its segment", i))
            if ev.kind is EventKind.ASR_FINAL:
                finished_segments.add(seg)
            for w in p.get("words", []):
                if len(w) != 3 or w[1] > w[2]:
                    out.append(("word timestamps must be [word, start, end]", i))
                    break
        elif ev.kind is EventKind.VAD_SPEECH_START:
            if vad_open is True:
                out.append(("VAD edges must alternate", i))
            vad_open = True
        elif ev.kind is EventKind.VAD_SPEECH_END:
            if vad_open is not True:
                out.append(("VAD edges must alternate", i))
            vad_open = False
    return out


def check_trace(trace: Trace) -> Trace:
    violations = validate_trace(trace)
    if violations:
        raise TraceValidationError(violations)
    return trace


# --- serialization ------------------------------------------------------------


def _event_record(ev: Event) -> dict:
    rec: dict[str, Any] = {"seq": ev.seq, "t_ms": ev.t_ms, "kind": ev.kind.value}
    for k in sorted(ev.payload):
        rec[k] = ev.payload[k]
    return rec


def write_trace(trace: Trace) -> bytes:
    """Serialize to canonical JSON Lines. Invalid traces are refused."""
    check_trace(trace)
    header: dict[str, Any] = {
        "session_id": trace.session_id,
        "sample_rate_hz": trace.sample_rate_hz,
        "audio_ref": trace.audio_ref,
        "version": FORMAT_VERSION,
    }
    if trace.labels is not None:
        header["labels"] = trace.labels
    lines = [json.dumps(header, sort_keys=True, ensure_ascii=False)]
    lines += [json.dumps(_event_record(ev), ensure_ascii=False) for ev in trace.events]
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_trace(data: bytes | str) -> Trace:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    lines = text.splitlines()
    if not lines:
        raise TraceParseError(1, "missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise TraceParseError(1, f"bad header: {exc.msg}") from None
    if not isinstance(header, dict):
        raise TraceParseError(1, "header must be an object")
    for key in ("session_id", "sample_rate_hz", "audio_ref", "version"):
        if key not in header:
            raise TraceParseError(1, f"header missing {key!r}")
    if header["version"] != FORMAT_VERSION:
        raise TraceParseError(1, f"unsupported version {header['version']!r}")

    events = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            seq = rec.pop("seq")
            t_ms = rec.pop("t_ms")
            kind = EventKind(rec.pop("kind"))
        except json.JSONDecodeError as exc:
            raise TraceParseError(lineno, exc.msg) from None
        except (KeyError, ValueError, AttributeError, TypeError) as exc:
            raise TraceParseError(lineno, f"malformed event: {exc}") from None
        events.append(Event(t_ms=t_ms, kind=kind, seq=seq, payload=rec))

    trace = Trace(
        session_id=header["session_id"],
        events=events,
        sample_rate_hz=header["sample_rate_hz"],
        audio_ref=header["audio_ref"],
        labels=header.get("labels"),
    )
    return check_trace(trace)


def load_trace(path) -> Trace:
    path = Path(path)
    trace = parse_trace(path.read_bytes())
    if trace.audio_ref and not Path(trace.audio_ref).is_absolute():
        trace.samples(base_dir=path.parent)
    return trace


def save_trace(trace: Trace, path, write_audio: bool = True) -> None:
    path = Path(path)
    if write_audio and trace.audio is not None and trace.audio_ref:
        write_wav(path.parent / trace.audio_ref, trace.audio, trace.sample_rate_hz)
    path.write_bytes(write_trace(trace))


def renumber(events: Iterable[Event]) -> list[Event]:
    """Stable-sort by time and reassign sequence numbers."""
    ordered = sorted(events, key=lambda e: (e.t_ms, e.seq))
    return [replace(ev, seq=i) for i, ev in enumerate(ordered)]


# --- windows ------------------------------------------------------------------


def speech_regions(trace: Trace, t_query_ms: int, gap_ms: int = WINDOW_GAP_MS) -> list[tuple[int, int]]:
    """VAD speech regions up to ``t_query_ms``, merging gaps below ``gap_ms``.

    A region still open at the query time ends at the query time.
    """
    regions: list[list[int]] = []
    start = None
    for ev in trace.events:
        if ev.t_ms > t_query_ms:
            break
        if ev.kind is EventKind.VAD_SPEECH_START:
            start = ev.t_ms
        elif ev.kind is EventKind.VAD_SPEECH_END and start is not None:
            regions.append([start, ev.t_ms])
            start = None
    if start is not None:
        regions.append([start, t_query_ms])
    merged: list[list[int]] = []
    for r in regions:
        if merged and r[0] - merged[-1][1] < gap_ms:
            merged[-1][1] = r[1]
        else:
            merged.append(r)
    return [(a, b) for a, b in merged]


def visible_text(trace: Trace, t_query_ms: int) -> tuple[str, str, Optional[int], float]:
    """User text, bot text, playback start and latest ASR confidence
    visible at ``t_query_ms``.

    User text joins every ASR segment seen since the most recent
    non-backchannel bot playback: the final text when present, otherwise
    the latest partial.
    """
    seg_text: dict = {}
    seg_final: set = set()
    bot_text = ""
    playback_start = None
    playing = False
    confidence = 0.0
    for ev in trace.events:
        if ev.t_ms > t_query_ms:
            break
        if ev.kind is EventKind.BOT_PLAYBACK_START and not ev.payload.get("backchannel", False):
            bot_text = ev.text
            playback_start = ev.t_ms
            playing = True
            seg_text.clear()
            seg_final.clear()
        elif ev.kind is EventKind.BOT_PLAYBACK_END:
            playing = False
        elif ev.kind in ASR_KINDS:
            seg = ev.payload.get("segment", 0)
            if seg in seg_final:
                continue
            seg_text[seg] = ev.text
            confidence = ev.confidence
            if ev.kind is EventKind.ASR_FINAL:
                seg_final.add(seg)
    user_text = join_text(seg_text.values())
    return user_text, bot_text, (playback_start if playing else None), confidence


def join_text(parts: Iterable[str]) -> str:
    return " ".join(" ".join(parts).split())


def latest_window(trace: Trace, t_query_ms: int, max_ms: int = MAX_WINDOW_MS,
                  gap_ms: int = WINDOW_GAP_MS) -> FeatureClip:
    """Clip for inference at ``t_query_ms``: the tail (at most ``max_ms``)
    of the most recent user speech region plus the visible texts."""
    if t_query_ms < 0:
        raise ValueError("t_query_ms must be >= 0")
    user_text, bot_text, pb_start, conf = visible_text(trace, t_query_ms)
    elapsed = None if pb_start is None else t_query_ms - pb_start
    regions = speech_regions(trace, t_query_ms, gap_ms)
    if not regions:
        return FeatureClip(np.zeros(0), user_text, bot_text, elapsed, t_query_ms, t_query_ms, conf)
    start, end = regions[-1]
    start = max(start, end - max_ms)
    audio = trace.samples()
    sr = trace.sample_rate_hz
    a = min(len(audio), start * sr // 1000)
    b = min(len(audio), end * sr // 1000)
    return FeatureClip(pcm16_to_float(audio[a:b]), user_text, bot_text, elapsed, start, end, conf)
