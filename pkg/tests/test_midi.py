import io
import math
import struct

import mido
import numpy as np
import pytest
from hypothesis import given, strategies as st

from rollnet.midi import (
    MidiParseError,
    NoteEvent,
    TempoMap,
    events_to_midi,
    events_to_pianoroll,
    map_program,
    n_frames_for,
    parse_midi,
    write_midi,
)
from rollnet.rolls import InstrumentVocab, marginalize_pitch

VOCAB = InstrumentVocab.default()


def smf(tracks, tpb=480, fmt=1):
    mid = mido.MidiFile(type=fmt, ticks_per_beat=tpb)
    for msgs in tracks:
        t = mido.MidiTrack()
        t.extend(msgs)
        mid.tracks.append(t)
    buf = io.BytesIO()
    mid.save(file=buf)
    return buf.getvalue()


def note(kind, pitch, time, ch=0, vel=64):
    return mido.Message(kind, note=pitch, velocity=vel, time=time, channel=ch)


class TestParse:
    def test_one_beat(self):
        data = smf([[note("note_on", 60, 0), note("note_off", 60, 480)]])
        (ev,) = parse_midi(data)
        assert (ev.onset_s, ev.offset_s, ev.pitch, ev.program) == (0.0, 0.5, 60, 0)

    def test_empty_track_list(self):
        assert parse_midi(smf([])) == []

    def test_velocity_zero_is_note_off(self):
        data = smf([[note("note_on", 60, 0), note("note_on", 60, 240, vel=0)]])
        (ev,) = parse_midi(data)
        assert ev.offset_s == pytest.approx(0.25)

    def test_tempo_change_mid_note(self):
        tpb = 96
        changes = [(0, 500_000), (100, 300_000), (250, 800_000)]
        conductor = []
        prev = 0
        for tick, tempo in changes:
            conductor.append(mido.MetaMessage("set_tempo", tempo=tempo, time=tick - prev))
            prev = tick
        data = smf([conductor, [note("note_on", 64, 40), note("note_off", 64, 300)]], tpb)
        (ev,) = parse_midi(data)

        def oracle(tick):
            # per-tick summation of the tempo in force at each tick
            total = 0.0
            for k in range(tick):
                tempo = [tp for t0, tp in changes if t0 <= k][-1]
                total += tempo / (1e6 * tpb)
            return total

        assert ev.onset_s == pytest.approx(oracle(40), abs=1e-12)
        assert ev.offset_s == pytest.approx(oracle(340), abs=1e-12)

    @given(st.lists(st.tuples(st.integers(0, 2000), st.integers(100_000, 2_000_000)), max_size=6), st.integers(0, 3000))
    def test_tempo_map_oracle(self, changes, tick):
        tpb = 120
        tmap = TempoMap(changes, tpb)
        points = {0: 500_000}
        for t0, tp in sorted(changes, key=lambda c: c[0]):
            points[t0] = tp
        total = sum(points[max(t for t in points if t <= k)] / (1e6 * tpb) for k in range(tick))
        assert tmap.to_seconds(tick) == pytest.approx(total, rel=1e-9, abs=1e-12)

    def test_program_at_onset(self):
        track = [
            mido.Message("program_change", program=40, channel=2, time=0),
            note("note_on", 70, 0, ch=2),
            note("note_off", 70, 480, ch=2),
            mido.Message("program_change", program=73, channel=2, time=0),
            note("note_on", 72, 0, ch=2),
            note("note_off", 72, 480, ch=2),
        ]
        evs = parse_midi(smf([track]))
        assert [(e.pitch, e.program, e.channel) for e in evs] == [(70, 40, 2), (72, 73, 2)]

    def test_program_change_on_other_track(self):
        data = smf([
            [mido.Message("program_change", program=42, channel=1, time=0)],
            [note("note_on", 50, 10, ch=1), note("note_off", 50, 10, ch=1)],
        ])
        assert parse_midi(data)[0].program == 42

    def test_unclosed_note_closed_at_track_end(self):
        data = smf([[note("note_on", 60, 0), mido.MetaMessage("end_of_track", time=960)]])
        (ev,) = parse_midi(data)
        assert ev.offset_s == pytest.approx(1.0)

    def test_format0(self):
        data = smf([[note("note_on", 60, 0), note("note_off", 60, 480)]], fmt=0)
        assert len(parse_midi(data)) == 1

    def test_bad_header(self):
        with pytest.raises(MidiParseError):
            parse_midi(b"RIFF" + b"\0" * 20)

    def test_format2(self):
        data = bytearray(smf([[note("note_on", 60, 0), note("note_off", 60, 10)]]))
        data[8:10] = struct.pack(">H", 2)
        with pytest.raises(MidiParseError):
            parse_midi(bytes(data))

    def test_zero_division(self):
        data = bytearray(smf([[note("note_on", 60, 0), note("note_off", 60, 10)]]))
        data[12:14] = struct.pack(">H", 0)
        with pytest.raises(MidiParseError):
            parse_midi(bytes(data))

    def test_truncated_track(self):
        data = smf([[note("note_on", 60, 0), note("note_off", 60, 10)]])
        with pytest.raises(MidiParseError):
            parse_midi(data[:-6])


class TestNoteEvent:
    @pytest.mark.parametrize("kw", [
        dict(onset_s=1.0, offset_s=1.0),
        dict(onset_s=-0.1, offset_s=1.0),
        dict(onset_s=0.0, offset_s=math.inf),
        dict(pitch=128),
        dict(channel=16),
        dict(velocity=0),
    ])
    def test_invariants(self, kw):
        base = dict(onset_s=0.0, offset_s=1.0, pitch=60, program=0)
        with pytest.raises(ValueError):
            NoteEvent(**{**base, **kw})


class TestMapProgram:
    def test_piano(self):
        assert map_program(0, 0, VOCAB) == VOCAB.index("piano")

    def test_violin(self):
        assert map_program(40, 0, VOCAB) == VOCAB.index("violin")

    def test_percussion(self):
        assert map_program(0, 9, VOCAB) is None

    def test_unmapped(self):
        assert map_program(127, 0, VOCAB) is None


def overlap_oracle(events, fr, duration, vocab):
    t_n = math.ceil(round(duration * fr, 9))
    out = np.zeros((88, t_n, vocab.size), np.uint8)
    for ev in events:
        m = map_program(ev.program, ev.channel, vocab)
        if m is None or not 21 <= ev.pitch <= 108:
            continue
        for t in range(t_n):
            lo, hi = t / fr, (t + 1) / fr
            if min(hi, ev.offset_s) - max(lo, ev.onset_s) > 0:
                out[ev.pitch - 21, t, m] = 1
    return out


def random_events(r, n, duration=4.0):
    evs = []
    for _ in range(n):
        on = float(r.uniform(0, duration - 0.05))
        off = float(min(on + r.uniform(0.001, 1.0), duration + 0.5))
        prog = int(r.choice([0, 40, 73, 42, 127]))
        ch = int(r.choice([0, 1, 9]))
        evs.append(NoteEvent(on, off, int(r.integers(10, 120)), prog, ch))
    return evs


class TestRasterize:
    def test_a4_example(self):
        roll = events_to_pianoroll([NoteEvent(0.0, 0.1, 69, 0)], 31.25, 1.0, VOCAB)
        active = np.flatnonzero(roll.data[48, :, 0])
        assert active.tolist() == [0, 1, 2, 3]
        assert roll.data.sum() == 4

    def test_empty(self):
        roll = events_to_pianoroll([], 31.25, 2.0, VOCAB)
        assert roll.data.shape == (88, 63, 8) and not roll.data.any()

    def test_frame_count(self):
        assert n_frames_for(20.0, 31.25) == 625
        assert n_frames_for(0.01, 31.25) == 1

    def test_overlap_oracle(self):
        r = np.random.default_rng(5)
        evs = random_events(r, 50)
        roll = events_to_pianoroll(evs, 31.25, 4.0, VOCAB)
        np.testing.assert_array_equal(roll.data, overlap_oracle(evs, 31.25, 4.0, VOCAB))

    @given(st.integers(0, 2**32 - 1), st.integers(0, 12))
    def test_nonempty_iff_mapped_events(self, seed, n):
        evs = random_events(np.random.default_rng(seed), n)
        roll = events_to_pianoroll(evs, 31.25, 4.0, VOCAB)
        usable = [e for e in evs if map_program(e.program, e.channel, VOCAB) is not None
                  and 21 <= e.pitch <= 108 and e.onset_s < 4.0]
        assert roll.data.any() == bool(usable)

    @given(st.integers(0, 2**32 - 1))
    def test_pitch_labels_instrument_agnostic(self, seed):
        evs = random_events(np.random.default_rng(seed), 10)
        roll = events_to_pianoroll(evs, 31.25, 4.0, VOCAB)
        merged_vocab = InstrumentVocab("all", (("all", frozenset(p for _, s in VOCAB.entries for p in s)),))
        merged = events_to_pianoroll(evs, 31.25, 4.0, merged_vocab)
        np.testing.assert_array_equal(marginalize_pitch(roll).data, merged.data[:, :, 0])


class TestWrite:
    def test_roundtrip_ticks(self):
        notes = [(0, 240, 60, 90), (240, 720, 62, 80), (240, 480, 67, 70)]
        data = write_midi([(40, 3, notes)], tempo=600_000, ticks_per_beat=480)
        evs = parse_midi(data)
        sec = 600_000 / 1e6 / 480
        got = sorted((round(e.onset_s / sec), round(e.offset_s / sec), e.pitch, e.velocity) for e in evs)
        assert got == sorted(notes)
        assert all(e.program == 40 and e.channel == 3 for e in evs)

    def test_repeated_pitch_stays_separate(self):
        notes = [(0, 240, 60, 90), (240, 480, 60, 90)]
        evs = parse_midi(write_midi([(0, 0, notes)]))
        assert len(evs) == 2

    def test_events_to_midi_ms_precision(self):
        evs = [NoteEvent(0.1234, 0.5, 60, 0), NoteEvent(0.2, 0.9, 72, 40, 1)]
        back = parse_midi(events_to_midi(evs))
        assert len(back) == 2
        for a, b in zip(sorted(evs), back):
            assert abs(a.onset_s - b.onset_s) <= 5e-4 and abs(a.offset_s - b.offset_s) <= 5e-4
            assert (a.pitch, a.program, a.channel) == (b.pitch, b.program, b.channel)
