import hashlib

import numpy as np
import pytest

from rollnet.corpus import (
    PITCH_RANGES,
    TICKS_PER_BEAT,
    CorpusConfig,
    CorpusManifest,
    _clip_notes,
    build_corpus,
    generate_corpus,
    manifest_paths,
)
from rollnet.midi import events_to_pianoroll, parse_midi
from rollnet.rolls import FRAME_RATE, InstrumentVocab, prl_bytes, read_prl


def tree_hash(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


SMALL = CorpusConfig(n_clips=4, clip_seconds=3.0, vocab=InstrumentVocab.default().subset(["piano", "violin", "flute"]))


def test_seed_reproducible(tmp_path):
    generate_corpus(7, CorpusConfig(), tmp_path / "a")
    generate_corpus(7, CorpusConfig(), tmp_path / "b")
    assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")
    generate_corpus(8, CorpusConfig(), tmp_path / "c")
    assert tree_hash(tmp_path / "a") != tree_hash(tmp_path / "c")


def test_thread_count_invariant(tmp_path):
    build_corpus(5, SMALL, tmp_path / "one", workers=1)
    build_corpus(5, SMALL, tmp_path / "many", workers=3)
    assert tree_hash(tmp_path / "one") == tree_hash(tmp_path / "many")


def test_split_counts(tmp_path):
    m = generate_corpus(1, CorpusConfig(n_clips=8, split_fraction=0.75), tmp_path)
    assert len(m.split("train")) == 6 and len(m.split("test")) == 2
    assert {e.clip_id for e in m.split("train")}.isdisjoint({e.clip_id for e in m.split("test")})


def test_cello_range(tmp_path):
    vocab = InstrumentVocab.default().subset(["cello", "flute"])
    cfg = CorpusConfig(n_clips=6, clip_seconds=5.0, vocab=vocab, instruments_per_clip=(1, 2))
    m = generate_corpus(2, cfg, tmp_path)
    seen = 0
    for e in m.entries:
        for ev in parse_midi((tmp_path / e.midi_path).read_bytes()):
            if ev.program == 42:
                assert 36 <= ev.pitch <= 67
                seen += 1
            else:
                lo, hi = PITCH_RANGES["flute"]
                assert lo <= ev.pitch <= hi
    assert seen > 0


def test_instruments_per_clip(tmp_path):
    m = generate_corpus(3, CorpusConfig(n_clips=10, clip_seconds=3.0), tmp_path)
    for e in m.entries:
        progs = {ev.program for ev in parse_midi((tmp_path / e.midi_path).read_bytes())}
        assert 1 <= len(progs) <= 4


def test_reparse_matches_generator(tmp_path):
    m = generate_corpus(4, SMALL, tmp_path)
    children = np.random.SeedSequence(4).spawn(SMALL.n_clips)
    for e, child in zip(m.entries, children):
        tracks, tempo = _clip_notes(np.random.default_rng(child), SMALL)
        sec = tempo / 1e6 / TICKS_PER_BEAT
        want = sorted((on, off, p, prog) for prog, _, notes in tracks for on, off, p, _ in notes)
        got = sorted(
            (round(ev.onset_s / sec), round(ev.offset_s / sec), ev.pitch, ev.program)
            for ev in parse_midi((tmp_path / e.midi_path).read_bytes())
        )
        assert got == want


def test_labels_rederived_from_midi(tmp_path):
    m = build_corpus(6, SMALL, tmp_path)
    for e in m.entries:
        events = parse_midi((tmp_path / e.midi_path).read_bytes())
        roll = events_to_pianoroll(events, FRAME_RATE, e.duration_s, SMALL.vocab)
        assert prl_bytes(roll) == (tmp_path / e.label_path).read_bytes()
        assert read_prl(tmp_path / e.label_path).n_frames == 94


def test_manifest_roundtrip_and_paths(tmp_path):
    m = build_corpus(6, SMALL, tmp_path)
    back = CorpusManifest.read(tmp_path / "manifest.tsv")
    assert back.entries == m.entries and back.seed == 6 and back.vocab_id == SMALL.vocab.id
    assert all(p.exists() for p in manifest_paths(back))
    assert InstrumentVocab.load(tmp_path / "vocab.json") == SMALL.vocab


def test_manifest_rejects_duplicates(tmp_path):
    (tmp_path / "m.tsv").write_text("a\ta.mid\ta.wav\ttrain\t1.0\na\ta.mid\ta.wav\ttest\t1.0\n")
    with pytest.raises(ValueError):
        CorpusManifest.read(tmp_path / "m.tsv")


def test_manifest_rejects_bad_split(tmp_path):
    (tmp_path / "m.tsv").write_text("a\ta.mid\ta.wav\tdev\t1.0\n")
    with pytest.raises(ValueError):
        CorpusManifest.read(tmp_path / "m.tsv")


@pytest.mark.parametrize("kw", [dict(n_clips=1), dict(clip_seconds=1.0)])
def test_preconditions(tmp_path, kw):
    with pytest.raises(ValueError):
        generate_corpus(0, CorpusConfig(**kw), tmp_path)


def test_audio_matches_duration(tmp_path):
    from rollnet.synth import read_wav

    m = build_corpus(9, SMALL, tmp_path)
    w = read_wav(tmp_path / m.entries[0].audio_path)
    assert len(w.samples) == 3 * 16000 and np.abs(w.samples).max() <= 0.9 + 1e-4
