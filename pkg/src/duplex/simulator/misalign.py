"""Streaming-ASR lag simulation: text events trail the audio."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..trace import ASR_KINDS, Trace, renumber


def apply_misalignment(trace: Trace, delay_min: int = 300, delay_max: int = 600, seed: int = 0) -> Trace:
    """Delay every ASR event of a segment by one uniform draw in
    ``[delay_min, delay_max]`` ms; word timestamps move with it.

    Audio and VAD events keep their times. The draw for segment ``k`` of a
    trace depends only on ``seed``, the session id and ``k``.
    """
    if not 0 <= delay_min <= delay_max:
        raise ValueError("need 0 <= delay_min <= delay_max")
    segments = sorted({ev.payload.get("segment", 0) for ev in trace.events if ev.kind in ASR_KINDS})
    key = [seed] + list(trace.session_id.encode("utf-8"))
    rng = np.random.default_rng(key)
    delays = {seg: int(rng.integers(delay_min, delay_max + 1)) for seg in segments}
    events = []
    for ev in trace.events:
        if ev.kind in ASR_KINDS:
            d = delays[ev.payload.get("segment", 0)]
            payload = dict(ev.payload)
            if "words" in payload:
                payload["words"] = [[w, a + d, b + d] for w, a, b in payload["words"]]
            ev = replace(ev, t_ms=ev.t_ms + d, payload=payload)
        events.append(ev)
    return replace(trace, events=renumber(events), audio=trace.audio)
