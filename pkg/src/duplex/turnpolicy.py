"""Event-driven turn-taking engine.

Silence after a VAD speech end is watched against three thresholds. The
user-state classifier runs once per IPU (at the IPU threshold) and its
cached result drives the later decisions:

=============  ==================  ==============  ==================
silence        turn-switch         turn-keep       keep + hesitation
=============  ==================  ==============  ==================
IPU            backchannel         -               -
VAD            end of turn         -               backchannel
VAD..timeout   -                   concat on resume  concat on resume
timeout        -                   end of turn     end of turn
=============  ==================  ==============  ==================

While the bot is speaking, every change of the ASR hypothesis asks the
barge-in classifier whether to stop playback.
"""

from __future__ import annotations

import enum
import heapq
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np

from .trace import ASR_KINDS, Event, EventKind, FeatureClip, Trace, join_text, latest_window


class ConfigError(ValueError):
    pass


class OrderingError(RuntimeError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    ipu_silence_ms: int = 200
    vad_silence_ms: int = 800
    timeout_ms: int = 3000
    backchannel_prob_threshold: float = 0.5
    bargein_confidence_threshold: float = 0.8
    classifier_latency_ms: int = 10

    def validate(self) -> None:
        if not 0 < self.ipu_silence_ms < self.vad_silence_ms < self.timeout_ms:
            raise ConfigError(
                "need 0 < ipu_silence_ms < vad_silence_ms < timeout_ms, got "
                f"{self.ipu_silence_ms}/{self.vad_silence_ms}/{self.timeout_ms}"
            )
        if self.classifier_latency_ms < 0:
            raise ConfigError("classifier_latency_ms must be >= 0")
        for name in ("backchannel_prob_threshold", "bargein_confidence_threshold"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")


class UserState(enum.IntEnum):
    TURN_SWITCH = 0
    TURN_KEEP = 1
    TURN_KEEP_HESITATION = 2


class ActionKind(str, enum.Enum):
    REQUEST_BACKCHANNEL = "RequestBackchannel"
    END_OF_TURN = "EndOfTurn"
    CONCAT_ASR = "ConcatAsr"
    STOP_PLAYBACK = "StopPlayback"


@dataclass(frozen=True)
class Action:
    t_ms: int
    kind: ActionKind
    payload: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"t_ms": self.t_ms, "action": self.kind.value, "payload": self.payload},
                          sort_keys=True, ensure_ascii=False)


class Mode(str, enum.Enum):
    IDLE = "Idle"
    USER_SPEAKING = "UserSpeaking"
    SILENCE_PENDING = "SilencePending"
    BOT_SPEAKING = "BotSpeaking"


class Classifiers(Protocol):
    def user_state(self, clip: FeatureClip) -> UserState: ...

    def barge_in(self, clip: FeatureClip) -> "bool | float | object": ...


@dataclass
class FunctionClassifiers:
    """Adapter for plain callables.

    ``barge_in`` may return a bool, a probability (compared with
    ``bargein_threshold``) or an object with ``interrupt``/``score``.
    """

    user_state_fn: Callable[[FeatureClip], UserState]
    barge_in_fn: Callable[[FeatureClip], object] = lambda clip: False

    def user_state(self, clip):
        return self.user_state_fn(clip)

    def barge_in(self, clip):
        return self.barge_in_fn(clip)


def _interpret_barge_in(result, threshold: float = 0.5) -> tuple[bool, float, str]:
    if hasattr(result, "interrupt"):
        return bool(result.interrupt), float(result.score), str(getattr(result, "source", "model"))
    if isinstance(result, (bool, np.bool_)):
        return bool(result), float(result), "callback"
    score = float(result)
    return score >= threshold, score, "callback"


class Engine:
    """One session's turn-taking state. Feed events with :meth:`step`."""

    def __init__(self, config: EngineConfig = EngineConfig(),
                 clip_source: Optional[Callable[[int], FeatureClip]] = None):
        config.validate()
        self.config = config
        self.mode = Mode.IDLE
        self.silence_start_ms: Optional[int] = None
        self.user_state: Optional[UserState] = None
        self.pending_query: list[str] = []
        self.playback: Optional[dict] = None
        self.now_ms = 0
        self.decisions: list[dict] = []
        self._clip_source = clip_source
        self._timers: list = []
        self._timer_seq = 0
        self._generation = 0
        self._vad_active = False
        self._last_vad_end: Optional[int] = None
        self._partials: dict = {}
        self._finals: dict = {}
        self._playback_finals: dict = {}
        self._last_bargein_text: Optional[str] = None
        self._stop_scheduled = False
        self._eot_done = False
        self._last_confidence = 0.0

    # -- scheduling ---------------------------------------------------------

    def _schedule(self, t_ms: int, fn, priority: int = 1) -> None:
        # at equal times lower priority fires first
        heapq.heappush(self._timers, (t_ms, priority, self._timer_seq, self._generation, fn))
        self._timer_seq += 1

    def _cancel_timers(self) -> None:
        self._generation += 1

    def _fire_until(self, t_ms: int, out: list[Action]) -> None:
        while self._timers and self._timers[0][0] <= t_ms:
            due, _, _, gen, fn = heapq.heappop(self._timers)
            if gen != self._generation:
                continue
            self.now_ms = due
            fn(due, out)

    # -- public API ---------------------------------------------------------

    def step(self, event: Event, classifiers: Classifiers) -> list[Action]:
        if event.t_ms < self.now_ms:
            raise OrderingError(f"event at {event.t_ms} ms arrived after {self.now_ms} ms")
        self._classifiers = classifiers
        out: list[Action] = []
        self._fire_until(event.t_ms, out)
        self.now_ms = event.t_ms
        handler = _HANDLERS.get(event.kind)
        if handler is not None:
            handler(self, event, out)
        return out

    def flush(self, classifiers: Optional[Classifiers] = None, until_ms: Optional[int] = None) -> list[Action]:
        """Fire pending timers, as if silence lasted until ``until_ms``."""
        if classifiers is not None:
            self._classifiers = classifiers
        out: list[Action] = []
        self._fire_until(until_ms if until_ms is not None else 2**62, out)
        return out

    # -- clips ----------------------------------------------------------------

    def _clip(self, t_ms: int) -> FeatureClip:
        if self._clip_source is not None:
            return self._clip_source(t_ms)
        segs = sorted(set(self._partials) | set(self._finals))
        texts = [self._finals.get(s, self._partials.get(s, "")) for s in segs]
        pb = self.playback
        elapsed = None if pb is None else t_ms - pb["t_ms"]
        return FeatureClip(np.zeros(0), join_text(texts), pb["text"] if pb else "", elapsed, t_ms, t_ms,
                           self._last_confidence)

    # -- event handlers -----------------------------------------------------------

    def _on_vad_start(self, ev: Event, out: list[Action]) -> None:
        self._vad_active = True
        if self.mode is Mode.SILENCE_PENDING:
            silence = ev.t_ms - self.silence_start_ms
            self._cancel_timers()
            if (silence >= self.config.vad_silence_ms and not self._eot_done
                    and self.user_state in (UserState.TURN_KEEP, UserState.TURN_KEEP_HESITATION)):
                out.append(Action(ev.t_ms, ActionKind.CONCAT_ASR, {"text": self._query_text()}))
            self._enter_speaking()
        elif self.mode is Mode.IDLE:
            self._enter_speaking()

    def _enter_speaking(self) -> None:
        self.mode = Mode.USER_SPEAKING
        self.silence_start_ms = None
        self.user_state = None
        self._eot_done = False

    def _on_vad_end(self, ev: Event, out: list[Action]) -> None:
        self._vad_active = False
        self._last_vad_end = ev.t_ms
        if self.mode is Mode.USER_SPEAKING:
            self._start_silence(ev.t_ms)

    def _start_silence(self, t0: int) -> None:
        cfg = self.config
        self.mode = Mode.SILENCE_PENDING
        self.silence_start_ms = t0
        self.user_state = None
        self._eot_done = False
        result_at = t0 + cfg.ipu_silence_ms + cfg.classifier_latency_ms
        self._schedule(t0 + cfg.ipu_silence_ms, self._at_ipu)
        self._schedule(max(t0 + cfg.vad_silence_ms, result_at), self._at_vad)
        self._schedule(max(t0 + cfg.timeout_ms, result_at), self._at_timeout)

    def _at_ipu(self, t: int, out: list[Action]) -> None:
        state = UserState(self._classifiers.user_state(self._clip(t)))
        self.user_state = state
        if state is UserState.TURN_SWITCH:
            self._schedule(t + self.config.classifier_latency_ms, self._ipu_backchannel, priority=0)

    def _ipu_backchannel(self, t: int, out: list[Action]) -> None:
        out.append(Action(t, ActionKind.REQUEST_BACKCHANNEL, {"text": self._query_text()}))

    def _at_vad(self, t: int, out: list[Action]) -> None:
        if self.user_state is UserState.TURN_SWITCH:
            self._end_of_turn(t, out)
        elif self.user_state is UserState.TURN_KEEP_HESITATION:
            out.append(Action(t, ActionKind.REQUEST_BACKCHANNEL, {"text": self._query_text()}))

    def _at_timeout(self, t: int, out: list[Action]) -> None:
        if not self._eot_done:
            self._end_of_turn(t, out)

    def _end_of_turn(self, t: int, out: list[Action]) -> None:
        query = self._query_text()
        if query:
            out.append(Action(t, ActionKind.END_OF_TURN, {"text": query}))
        self.pending_query = []
        self._partials.clear()
        self._finals.clear()
        self._eot_done = True
        self._cancel_timers()
        self.mode = Mode.IDLE
        self.silence_start_ms = None

    def _query_text(self) -> str:
        return join_text(self.pending_query)

    def _on_asr(self, ev: Event, out: list[Action]) -> None:
        seg = ev.payload.get("segment", 0)
        final = ev.kind is EventKind.ASR_FINAL
        self._last_confidence = ev.confidence
        if self.mode is Mode.BOT_SPEAKING:
            if final:
                self._playback_finals[seg] = ev.text
            if self._stop_scheduled or ev.text == self._last_bargein_text or not ev.text:
                return
            self._last_bargein_text = ev.text
            self._partials[seg] = ev.text
            clip = self._clip(ev.t_ms)
            interrupt, score, source = _interpret_barge_in(self._classifiers.barge_in(clip))
            self.decisions.append({"t_ms": ev.t_ms, "interrupt": interrupt, "score": score, "source": source})
            if interrupt:
                self._stop_scheduled = True
                self._schedule(ev.t_ms + self.config.classifier_latency_ms,
                               lambda t, o: self._stop_playback(t, o, score, source))
            return
        if final:
            self._finals[seg] = ev.text
            self.pending_query.append(ev.text)
        else:
            self._partials[seg] = ev.text

    def _stop_playback(self, t: int, out: list[Action], score: float, source: str) -> None:
        if self.playback is None:
            return
        out.append(Action(t, ActionKind.STOP_PLAYBACK,
                          {"reason": "barge-in", "score": round(score, 6), "source": source,
                           "utterance_id": self.playback.get("utterance_id")}))
        self.playback = None
        self._stop_scheduled = False
        self.pending_query.extend(self._playback_finals[s] for s in sorted(self._playback_finals))
        self._playback_finals.clear()
        self._last_bargein_text = None
        if self._vad_active:
            self._enter_speaking()
        elif self._last_vad_end is not None:
            self._start_silence(self._last_vad_end)
        else:
            self.mode = Mode.IDLE

    def _on_playback_start(self, ev: Event, out: list[Action]) -> None:
        self.playback = {"t_ms": ev.t_ms, "utterance_id": ev.payload.get("utterance_id"), "text": ev.text}
        if ev.payload.get("backchannel", False) and self.mode is not Mode.IDLE:
            return
        self._cancel_timers()
        self.mode = Mode.BOT_SPEAKING
        self.silence_start_ms = None
        self._stop_scheduled = False
        self._last_bargein_text = None
        self._playback_finals.clear()
        self._partials.clear()

    def _on_playback_end(self, ev: Event, out: list[Action]) -> None:
        self.playback = None
        if self.mode is Mode.BOT_SPEAKING:
            # a decision still in flight dies with the playback
            self._cancel_timers()
            self._stop_scheduled = False
            self._playback_finals.clear()
            self._partials.clear()
            self.mode = Mode.IDLE


_HANDLERS = {
    EventKind.VAD_SPEECH_START: Engine._on_vad_start,
    EventKind.VAD_SPEECH_END: Engine._on_vad_end,
    EventKind.ASR_PARTIAL: Engine._on_asr,
    EventKind.ASR_FINAL: Engine._on_asr,
    EventKind.BOT_PLAYBACK_START: Engine._on_playback_start,
    EventKind.BOT_PLAYBACK_END: Engine._on_playback_end,
}


def new_engine(config: EngineConfig = EngineConfig(), clip_source=None) -> Engine:
    return Engine(config, clip_source)


class ReplayError(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"event {index}: {cause}")
        self.index = index
        self.cause = cause


def run(config: EngineConfig, trace: Trace, classifiers: Classifiers) -> list[Action]:
    """Replay ``trace`` through a fresh engine and return the action log."""
    engine = Engine(config, clip_source=lambda t: latest_window(trace, t))
    log: list[Action] = []
    for i, ev in enumerate(trace.events):
        try:
            log.extend(engine.step(ev, classifiers))
        except Exception as exc:
            raise ReplayError(i, exc) from exc
    try:
        log.extend(engine.flush(classifiers))
    except Exception as exc:
        raise ReplayError(len(trace.events), exc) from exc
    return log


def format_log(actions: list[Action]) -> str:
    return "".join(a.to_json() + "\n" for a in actions)
