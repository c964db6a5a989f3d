"""Additive sine synthesis of note events, plus 16-bit WAV I/O."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .midi import NoteEvent, map_program
from .rolls import InstrumentVocab

SAMPLE_RATE = 16000
HOP = 512
PEAK = 0.9


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TimbreProfile:
    name: str
    partials: tuple[float, ...]  # relative gain of harmonic k+1
    attack_s: float = 0.01
    decay_s: float = 0.1
    sustain_level: float = 0.7
    release_s: float = 0.05
    gain: float = 0.3

    def __post_init__(self):
        if not self.partials:
            raise ValueError("a timbre needs at least one partial")
        if min(self.partials) < 0:
            raise ValueError("partial amplitudes must be non-negative")
        if min(self.attack_s, self.decay_s, self.release_s) < 0:
            raise ValueError("envelope times must be non-negative")
        if not 0.0 <= self.sustain_level <= 1.0:
            raise ValueError("sustain level must lie in [0, 1]")


# Recipes only need to be told apart by the network; none of them imitates a real instrument.
TIMBRES: dict[str, TimbreProfile] = {
    p.name: p
    for p in (
        TimbreProfile("piano", (1.0, 0.5, 0.3, 0.2, 0.12, 0.08), 0.005, 0.4, 0.35, 0.04),
        TimbreProfile("acoustic guitar", (1.0, 0.7, 0.45, 0.3, 0.2, 0.12, 0.08), 0.003, 0.25, 0.2, 0.03),
        TimbreProfile("electric guitar", (1.0, 0.9, 0.6, 0.6, 0.4, 0.35, 0.25, 0.2), 0.005, 0.15, 0.6, 0.03),
        TimbreProfile("trumpet", (0.6, 0.9, 1.0, 0.8, 0.6, 0.45, 0.3, 0.2), 0.03, 0.05, 0.85, 0.03),
        TimbreProfile("sax", (1.0, 0.15, 0.7, 0.1, 0.45, 0.08, 0.3), 0.02, 0.05, 0.8, 0.03),
        TimbreProfile("violin", tuple(1.0 / k for k in range(1, 11)), 0.04, 0.05, 0.9, 0.04),
        TimbreProfile("cello", (1.0, 0.8, 0.55, 0.45, 0.3, 0.2, 0.12), 0.05, 0.05, 0.9, 0.04),
        TimbreProfile("flute", (1.0, 0.12, 0.04), 0.03, 0.05, 0.85, 0.03),
    )
}


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


def envelope(t_s, note_duration_s: float, profile: TimbreProfile):
    """Piecewise-linear ADSR gain at ``t_s`` seconds after note onset.

    The release ramp starts from whatever level the envelope reached when the
    note ended, so short notes that never hit sustain still fade out smoothly.
    """
    t = np.asarray(t_s, dtype=np.float64)
    a, d, s, r = profile.attack_s, profile.decay_s, profile.sustain_level, profile.release_s

    def held(x):
        x = np.asarray(x, dtype=np.float64)
        if a > 0:
            attack = x / a
        else:
            attack = np.ones_like(x)
        if d > 0:
            decay = 1.0 + (s - 1.0) * (x - a) / d
        else:
            decay = np.full_like(x, s)
        return np.where(x < a, attack, np.where(x < a + d, decay, s))

    level_at_off = held(note_duration_s)
    if r > 0:
        release = level_at_off * (1.0 - (t - note_duration_s) / r)
    else:
        release = np.zeros_like(t)
    out = np.where(t < note_duration_s, held(t), np.where(t < note_duration_s + r, release, 0.0))
    out = np.where(t < 0, 0.0, out)
    return out if out.ndim else float(out)


def midi_to_hz(pitch) -> float:
    return 440.0 * 2.0 ** ((np.asarray(pitch, dtype=np.float64) - 69.0) / 12.0)


def render_note(ev: NoteEvent, profile: TimbreProfile, sample_rate: int = SAMPLE_RATE) -> tuple[int, np.ndarray]:
    """Return (start sample, samples) for a single note including its release tail."""
    start = int(round(ev.onset_s * sample_rate))
    dur = ev.offset_s - ev.onset_s
    n = int(np.ceil((dur + profile.release_s) * sample_rate))
    t = np.arange(n) / sample_rate
    env = envelope(t, dur, profile)
    f0 = float(midi_to_hz(ev.pitch))
    tone = np.zeros(n)
    for k, amp in enumerate(profile.partials, start=1):
        if k * f0 >= sample_rate / 2:
            break
        if amp:
            tone += amp * np.sin(2.0 * np.pi * k * f0 * t)
    return start, profile.gain * env * tone


def profiles_for(vocab: InstrumentVocab) -> dict[int, TimbreProfile]:
    missing = [n for n in vocab.names if n not in TIMBRES]
    if missing:
        raise SynthConfigError(f"no timbre profile for {missing}")
    return {i: TIMBRES[n] for i, n in enumerate(vocab.names)}


def render(
    events: Sequence[NoteEvent],
    profiles: Mapping[int, TimbreProfile],
    vocab: InstrumentVocab,
    sample_rate: int = SAMPLE_RATE,
    duration_s: float | None = None,
    fallback: TimbreProfile | None = None,
    normalize: bool = True,
) -> Waveform:
    """Mix all notes.

    Without ``duration_s`` the output lasts for the latest offset plus the
    longest release, plus one hop of silence; with it, the output is cut or zero-padded to exactly
    that length.
    """
    placed = []
    max_release = 0.0
    for ev in events:
        m = map_program(ev.program, ev.channel, vocab)
        profile = profiles.get(m) if m is not None else None
        if profile is None:
            profile = fallback
        if profile is None:
            raise SynthConfigError(f"program {ev.program} on channel {ev.channel} has no timbre profile")
        placed.append(render_note(ev, profile, sample_rate))
        max_release = max(max_release, profile.release_s)

    if duration_s is not None:
        length = int(round(duration_s * sample_rate))
    elif placed:
        last = max(ev.offset_s for ev in events) + max_release
        length = max(int(np.ceil(round(last * sample_rate, 6))), max(s + len(x) for s, x in placed)) + HOP
    else:
        length = 0
    out = np.zeros(length)
    for start, x in placed:
        stop = min(start + len(x), length)
        if stop > start:
            out[start:stop] += x[: stop - start]
    peak = np.max(np.abs(out)) if length else 0.0
    if normalize and peak > PEAK:
        out *= PEAK / peak
    return Waveform(out, sample_rate)


def write_wav(wave_: Waveform, path) -> None:
    pcm = np.round(np.clip(wave_.samples, -1.0, 1.0) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(wave_.sample_rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path) -> Waveform:
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
                raise ValueError(f"{path}: expected 16-bit mono PCM")
            rate = fh.getframerate()
            pcm = np.frombuffer(fh.readframes(fh.getnframes()), dtype="<i2")
    except (wave.Error, EOFError) as exc:
        raise ValueError(f"{path}: not a readable WAV file ({exc})") from exc
    return Waveform(pcm.astype(np.float64) / 32767.0, rate)
