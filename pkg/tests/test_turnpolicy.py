from __future__ import annotations

import pytest

from conftest import Script
from duplex.trace import Event, EventKind
from duplex.turnpolicy import (ActionKind, ConfigError, Engine, EngineConfig, FunctionClassifiers, Mode,
                               OrderingError, ReplayError, UserState, format_log, run)


def constant(state: UserState, barge=False):
    calls = []

    def user_state(clip):
        calls.append(clip.end_ms)
        return state

    return FunctionClassifiers(user_state, lambda clip: barge), calls


def actions(trace, clf, config=EngineConfig()):
    return [(a.t_ms, a.kind.value, a.payload.get("text")) for a in run(config, trace, clf)]


def test_turn_switch_backchannel_then_end_of_turn():
    t = Script().speech(1000, 2000, "i want to pay please").trace()
    clf, calls = constant(UserState.TURN_SWITCH)
    assert actions(t, clf) == [(2210, "RequestBackchannel", "i want to pay please"),
                               (2800, "EndOfTurn", "i want to pay please")]
    # one query per IPU, on the clip that ends with the speech
    assert calls == [2000]


def test_turn_keep_waits_for_timeout():
    t = Script().speech(1000, 2000, "i want to").trace()
    clf, _ = constant(UserState.TURN_KEEP)
    assert actions(t, clf) == [(5000, "EndOfTurn", "i want to")]


def test_hesitation_backchannel_at_vad_then_timeout():
    t = Script().speech(1000, 2000, "i want um").trace()
    clf, _ = constant(UserState.TURN_KEEP_HESITATION)
    assert actions(t, clf) == [(2800, "RequestBackchannel", "i want um"), (5000, "EndOfTurn", "i want um")]


def test_resume_after_vad_concatenates_query():
    t = Script().speech(1000, 2000, "i want um").speech(3500, 4000, "pay my bill").trace()
    states = iter([UserState.TURN_KEEP_HESITATION, UserState.TURN_SWITCH])
    clf = FunctionClassifiers(lambda clip: next(states))
    assert actions(t, clf) == [
        (2800, "RequestBackchannel", "i want um"),
        (3500, "ConcatAsr", "i want um"),
        (4210, "RequestBackchannel", "i want um pay my bill"),
        (4800, "EndOfTurn", "i want um pay my bill"),
    ]


def test_resume_before_vad_is_silent():
    t = Script().speech(1000, 2000, "i want").speech(2500, 3000, "to pay").trace()
    states = iter([UserState.TURN_KEEP, UserState.TURN_SWITCH])
    clf = FunctionClassifiers(lambda clip: next(states))
    assert actions(t, clf) == [(3210, "RequestBackchannel", "i want to pay"), (3800, "EndOfTurn", "i want to pay")]


def test_short_pause_never_reaches_classifier():
    t = Script().speech(1000, 2000, "i want").speech(2150, 2600, "to pay").trace()
    clf, calls = constant(UserState.TURN_SWITCH)
    out = actions(t, clf)
    assert calls == [2600]
    assert out[-1] == (3400, "EndOfTurn", "i want to pay")


def test_classifier_latency_delays_late_decisions():
    cfg = EngineConfig(classifier_latency_ms=700)
    t = Script().speech(1000, 2000, "i want").trace()
    clf, _ = constant(UserState.TURN_SWITCH)
    assert actions(t, clf, cfg) == [(2900, "RequestBackchannel", "i want"), (2900, "EndOfTurn", "i want")]


def test_barge_in_stops_playback_after_latency():
    s = Script()
    s.add(0, EventKind.BOT_PLAYBACK_START, utterance_id="b0", text="your balance is")
    s.add(500, EventKind.VAD_SPEECH_START)
    s.add(700, EventKind.ASR_PARTIAL, segment=0, text="wait", confidence=0.9)
    s.add(700, EventKind.ASR_PARTIAL, segment=0, text="wait", confidence=0.9)
    s.add(900, EventKind.ASR_FINAL, segment=0, text="wait stop", confidence=0.9)
    s.add(900, EventKind.VAD_SPEECH_END)
    s.add(5000, EventKind.BOT_PLAYBACK_END)
    seen = []

    def barge(clip):
        seen.append(clip.user_text)
        return True

    out = run(EngineConfig(), s.trace(), FunctionClassifiers(lambda c: UserState.TURN_SWITCH, barge))
    assert seen == ["wait"]
    assert (out[0].t_ms, out[0].kind) == (710, ActionKind.STOP_PLAYBACK)
    assert out[0].payload["utterance_id"] == "b0"
    assert [(a.t_ms, a.kind.value) for a in out[1:]] == [(1110, "RequestBackchannel"), (1700, "EndOfTurn")]
    assert out[-1].payload["text"] == "wait stop"


def test_barge_in_reevaluates_only_on_text_change():
    s = Script()
    s.add(0, EventKind.BOT_PLAYBACK_START, utterance_id="b0", text="x")
    for i, text in enumerate(["ok", "ok", "ok yes", "ok yes"]):
        s.add(100 + 10 * i, EventKind.ASR_PARTIAL, segment=0, text=text, confidence=0.9)
    s.add(2000, EventKind.BOT_PLAYBACK_END)
    seen = []
    clf = FunctionClassifiers(lambda c: UserState.TURN_SWITCH, lambda c: seen.append(c.user_text) or 0.1)
    assert run(EngineConfig(), s.trace(), clf) == []
    assert seen == ["ok", "ok yes"]


def test_backchannel_playback_does_not_interrupt_silence():
    s = Script().speech(1000, 2000, "i want")
    s.add(2210, EventKind.BOT_PLAYBACK_START, utterance_id="bc", text="um-hum", backchannel=True)
    s.add(2500, EventKind.BOT_PLAYBACK_END)
    clf, _ = constant(UserState.TURN_SWITCH)
    assert actions(s.trace(), clf)[-1] == (2800, "EndOfTurn", "i want")


def test_out_of_order_events_raise():
    eng = Engine()
    clf, _ = constant(UserState.TURN_SWITCH)
    eng.step(Event(100, EventKind.VAD_SPEECH_START), clf)
    with pytest.raises(OrderingError):
        eng.step(Event(50, EventKind.VAD_SPEECH_END), clf)


def test_replay_wraps_classifier_errors():
    t = Script().speech(0, 100, "a").trace()

    def boom(clip):
        raise RuntimeError("model down")

    with pytest.raises(ReplayError):
        run(EngineConfig(), t, FunctionClassifiers(boom))


@pytest.mark.parametrize("kw", [dict(ipu_silence_ms=900), dict(vad_silence_ms=4000), dict(ipu_silence_ms=0),
                                dict(classifier_latency_ms=-1), dict(bargein_confidence_threshold=2.0)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        EngineConfig(**kw).validate()


def test_modes_follow_events():
    eng = Engine()
    clf, _ = constant(UserState.TURN_SWITCH)
    assert eng.mode is Mode.IDLE
    eng.step(Event(0, EventKind.VAD_SPEECH_START), clf)
    assert eng.mode is Mode.USER_SPEAKING
    eng.step(Event(100, EventKind.VAD_SPEECH_END), clf)
    assert eng.mode is Mode.SILENCE_PENDING
    eng.step(Event(200, EventKind.BOT_PLAYBACK_START, payload={"text": "hi"}), clf)
    assert eng.mode is Mode.BOT_SPEAKING
    assert eng.flush() == []


def test_log_format_is_json_lines():
    t = Script().speech(0, 100, "a").trace()
    clf, _ = constant(UserState.TURN_SWITCH)
    text = format_log(run(EngineConfig(), t, clf))
    assert text.splitlines()[0] == '{"action": "RequestBackchannel", "payload": {"text": "a"}, "t_ms": 310}'
