"""Response-latency accounting with and without an early backchannel."""

from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class LatencyProfile:
    connect_transmit: int = 100
    asr_processing: int = 150
    vad_silence: int = 800
    vad_silence_backchannel: int = 200
    vad_delay: int = 100
    dialog_engine: int = 50
    duplex_request: int = 10
    tts: int = 100
    tts_backchannel: int = 40
    playback_return: int = 100

    def validate(self) -> None:
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"{k} must be >= 0")


PAPER_PROFILE = LatencyProfile()
ZERO_PROFILE = LatencyProfile(*([0] * 10))


def latency_stages(profile: LatencyProfile, with_backchannel: bool) -> list[tuple[str, int]]:
    p = profile
    if with_backchannel:
        return [
            ("Establish connection and transmit audio", p.connect_transmit),
            ("ASR processing", p.asr_processing),
            ("VAD silence threshold (IPU)", p.vad_silence_backchannel),
            ("VAD delay", p.vad_delay),
            ("Request duplex conversation", p.duplex_request),
            ("Request TTS (backchannel)", p.tts_backchannel),
            ("Return audio stream and play", p.playback_return),
        ]
    return [
        ("Establish connection and transmit audio", p.connect_transmit),
        ("ASR processing", p.asr_processing),
        ("VAD silence threshold", p.vad_silence),
        ("VAD delay", p.vad_delay),
        ("Request core dialog engine", p.dialog_engine),
        ("Request TTS", p.tts),
        ("Return audio stream and play", p.playback_return),
    ]


def latency_total(profile: LatencyProfile, with_backchannel: bool) -> int:
    profile.validate()
    return sum(v for _, v in latency_stages(profile, with_backchannel))


def latency_table(profile: LatencyProfile = PAPER_PROFILE) -> str:
    without = latency_stages(profile, False)
    with_bc = latency_stages(profile, True)
    rows = [(n1 if n1 == n2 else f"{n1} / {n2}", v1, v2) for (n1, v1), (n2, v2) in zip(without, with_bc)]
    t0, t1 = latency_total(profile, False), latency_total(profile, True)
    rows.append(("Total latency", t0, t1))
    width = max(len(n) for n, _, _ in rows) + 2
    lines = [f"{'stage':<{width}}{'w/o backchannel':>16}{'w/ backchannel':>16}"]
    lines += [f"{name:<{width}}{v1:>14}ms{v2:>14}ms" for name, v1, v2 in rows]
    if t0:
        lines.append(f"reduction: {100.0 * (t0 - t1) / t0:.0f}%")
    return "\n".join(lines)
