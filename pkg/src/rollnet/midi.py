"""Standard MIDI File ingestion and label rasterization."""

from __future__ import annotations

import bisect
import io
import math
import struct
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import mido
import numpy as np

from .rolls import FRAME_RATE, N_PITCHES, PITCH_OFFSET, InstrumentVocab, Pianoroll

DEFAULT_TEMPO = 500_000  # microseconds per quarter, i.e. 120 BPM
PERCUSSION_CHANNEL = 9


class MidiParseError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class NoteEvent:
    onset_s: float
    offset_s: float
    pitch: int
    program: int
    channel: int = 0
    velocity: int = 100

    def __post_init__(self):
        if not (math.isfinite(self.onset_s) and math.isfinite(self.offset_s)):
            raise ValueError("note times must be finite")
        if self.onset_s < 0 or self.offset_s <= self.onset_s:
            raise ValueError(f"invalid note interval [{self.onset_s}, {self.offset_s})")
        if not 0 <= self.pitch <= 127 or not 0 <= self.program <= 127:
            raise ValueError("pitch and program must lie in [0, 127]")
        if not 0 <= self.channel <= 15 or not 1 <= self.velocity <= 127:
            raise ValueError("channel must lie in [0, 15] and velocity in [1, 127]")


class TempoMap:
    """Piecewise-constant tempo; converts ticks to seconds."""

    def __init__(self, changes: Iterable[tuple[int, int]], ticks_per_beat: int):
        self.tpb = ticks_per_beat
        points: dict[int, int] = {0: DEFAULT_TEMPO}
        for tick, tempo in sorted(changes, key=lambda c: c[0]):
            points[tick] = tempo  # last change at a tick wins
        self.ticks = sorted(points)
        self.tempos = [points[t] for t in self.ticks]
        self.seconds = [0.0]
        for i in range(1, len(self.ticks)):
            span = self.ticks[i] - self.ticks[i - 1]
            self.seconds.append(self.seconds[-1] + span * self.tempos[i - 1] / (1e6 * self.tpb))

    def to_seconds(self, tick: int) -> float:
        i = bisect.bisect_right(self.ticks, tick) - 1
        return self.seconds[i] + (tick - self.ticks[i]) * self.tempos[i] / (1e6 * self.tpb)


def _check_header(data: bytes) -> None:
    if len(data) < 14 or data[:4] != b"MThd":
        raise MidiParseError("missing MThd header chunk")
    length, fmt, _ntracks, division = struct.unpack(">IHHH", data[4:14])
    if length < 6:
        raise MidiParseError(f"header chunk too short ({length} bytes)")
    if fmt == 2:
        raise MidiParseError("SMF format 2 is not supported")
    if fmt not in (0, 1):
        raise MidiParseError(f"unknown SMF format {fmt}")
    if division & 0x8000:
        raise MidiParseError("SMPTE time division is not supported")
    if division == 0:
        raise MidiParseError("division of zero ticks per quarter note")


def parse_midi(data: bytes) -> list[NoteEvent]:
    """Decode an SMF (format 0 or 1) into note events sorted by onset."""
    _check_header(data)
    try:
        mid = mido.MidiFile(file=io.BytesIO(data))
    except (OSError, EOFError, ValueError, KeyError) as exc:
        raise MidiParseError(f"malformed MIDI data: {exc}") from exc

    tempo_changes = []
    programs: dict[int, list[tuple[int, int, int]]] = defaultdict(list)
    tracks = []
    for ti, track in enumerate(mid.tracks):
        tick = 0
        msgs = []
        for order, msg in enumerate(track):
            tick += msg.time
            if msg.type == "set_tempo":
                tempo_changes.append((tick, msg.tempo))
            elif msg.type == "program_change":
                programs[msg.channel].append((tick, ti, order, msg.program))
            msgs.append((tick, msg))
        tracks.append((tick, msgs))

    tmap = TempoMap(tempo_changes, mid.ticks_per_beat)
    for ch in programs:
        programs[ch].sort()
    program_ticks = {ch: [p[0] for p in lst] for ch, lst in programs.items()}

    def program_at(channel: int, tick: int) -> int:
        ticks = program_ticks.get(channel)
        if not ticks:
            return 0
        i = bisect.bisect_right(ticks, tick) - 1
        return programs[channel][i][3] if i >= 0 else 0

    events = []

    def close(on_tick, off_tick, pitch, channel, velocity):
        if off_tick <= on_tick:
            return
        events.append(
            NoteEvent(
                tmap.to_seconds(on_tick),
                tmap.to_seconds(off_tick),
                pitch,
                program_at(channel, on_tick),
                channel,
                velocity,
            )
        )

    for end_tick, msgs in tracks:
        active: dict[tuple[int, int], deque] = defaultdict(deque)
        for tick, msg in msgs:
            if msg.type == "note_on" and msg.velocity > 0:
                active[(msg.channel, msg.note)].append((tick, msg.velocity))
            elif msg.type in ("note_off", "note_on"):
                queue = active.get((msg.channel, msg.note))
                if queue:
                    on_tick, vel = queue.popleft()
                    close(on_tick, tick, msg.note, msg.channel, vel)
        for (channel, pitch), queue in active.items():
            for on_tick, vel in queue:
                close(on_tick, end_tick, pitch, channel, vel)

    events.sort()
    return events


def read_midi(path) -> list[NoteEvent]:
    with open(path, "rb") as fh:
        return parse_midi(fh.read())


def map_program(program: int, channel: int, vocab: InstrumentVocab) -> int | None:
    if channel == PERCUSSION_CHANNEL:
        return None
    for i, (_, programs) in enumerate(vocab.entries):
        if program in programs:
            return i
    return None


def events_to_pianoroll(
    events: Sequence[NoteEvent],
    frame_rate: float,
    duration_s: float,
    vocab: InstrumentVocab,
) -> Pianoroll:
    """Rasterize notes; a frame is active if the note overlaps it at all."""
    if not frame_rate > 0:
        raise ValueError("frame_rate must be positive")
    n_frames = n_frames_for(duration_s, frame_rate)
    data = np.zeros((N_PITCHES, n_frames, vocab.size), dtype=np.uint8)
    for ev in events:
        m = map_program(ev.program, ev.channel, vocab)
        row = ev.pitch - PITCH_OFFSET
        if m is None or not 0 <= row < N_PITCHES:
            continue
        start = math.floor(ev.onset_s * frame_rate)
        stop = min(math.ceil(ev.offset_s * frame_rate), n_frames)
        if start < stop:
            data[row, start:stop, m] = 1
    return Pianoroll(data, frame_rate, PITCH_OFFSET, vocab.id)


def n_frames_for(duration_s: float, frame_rate: float = FRAME_RATE) -> int:
    # round first so that e.g. 20 s * 31.25 stays 625, not 626
    return max(0, math.ceil(round(duration_s * frame_rate, 9)))


def write_midi(
    tracks: Sequence[tuple[int, int, Sequence[tuple[int, int, int, int]]]],
    tempo: int = DEFAULT_TEMPO,
    ticks_per_beat: int = 480,
) -> bytes:
    """Encode an SMF-1 file.

    ``tracks`` holds ``(program, channel, notes)`` with notes given as
    ``(on_tick, off_tick, pitch, velocity)``. A conductor track carrying the
    tempo comes first.
    """
    mid = mido.MidiFile(type=1, ticks_per_beat=ticks_per_beat)
    conductor = mido.MidiTrack()
    conductor.append(mido.MetaMessage("set_tempo", tempo=tempo, time=0))
    conductor.append(mido.MetaMessage("time_signature", numerator=4, denominator=4, time=0))
    conductor.append(mido.MetaMessage("end_of_track", time=0))
    mid.tracks.append(conductor)
    for program, channel, notes in tracks:
        timeline = []
        for on, off, pitch, vel in notes:
            # offs sort before ons at the same tick so repeated notes stay separate
            timeline.append((off, 0, pitch, 0))
            timeline.append((on, 1, pitch, vel))
        timeline.sort()
        track = mido.MidiTrack()
        track.append(mido.Message("program_change", channel=channel, program=program, time=0))
        now = 0
        for tick, is_on, pitch, vel in timeline:
            kind = "note_on" if is_on else "note_off"
            track.append(mido.Message(kind, channel=channel, note=pitch, velocity=vel, time=tick - now))
            now = tick
        track.append(mido.MetaMessage("end_of_track", time=0))
        mid.tracks.append(track)
    buf = io.BytesIO()
    mid.save(file=buf)
    return buf.getvalue()


def events_to_midi(events: Sequence[NoteEvent]) -> bytes:
    """SMF-1 bytes for events in seconds, one track per (program, channel), 1 ms ticks."""
    groups: dict[tuple[int, int], list[tuple[int, int, int, int]]] = defaultdict(list)
    for ev in sorted(events):
        on = int(round(ev.onset_s * 1000))
        off = max(int(round(ev.offset_s * 1000)), on + 1)
        groups[(ev.program, ev.channel)].append((on, off, ev.pitch, ev.velocity))
    tracks = [(prog, ch, notes) for (prog, ch), notes in sorted(groups.items(), key=lambda g: (g[0][1], g[0][0]))]
    # 1 s per quarter at 1000 ticks per quarter gives millisecond ticks
    return write_midi(tracks, tempo=1_000_000, ticks_per_beat=1000)
