"""Procedural MIDI corpus: the desk-scale stand-in for a crawled audio/MIDI collection.

Each clip gets 1-4 instruments from the vocabulary. Every instrument plays on
an eighth/quarter-note grid at the clip's tempo, drawing pitches only from its
own range, so pitch and timbre are correlated the way they are in real music.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .midi import PERCUSSION_CHANNEL, events_to_pianoroll, parse_midi, write_midi
from .rolls import FRAME_RATE, InstrumentVocab, write_prl
from .synth import profiles_for, render, write_wav

log = logging.getLogger(__name__)

TICKS_PER_BEAT = 480

PITCH_RANGES = {
    "piano": (36, 96),
    "acoustic guitar": (40, 76),
    "electric guitar": (40, 84),
    "trumpet": (55, 82),
    "sax": (49, 80),
    "violin": (55, 93),
    "cello": (36, 67),
    "flute": (60, 96),
}


@dataclass
class CorpusConfig:
    n_clips: int = 8
    clip_seconds: float = 20.0
    vocab: InstrumentVocab = field(default_factory=InstrumentVocab.default)
    pitch_ranges: dict = field(default_factory=lambda: dict(PITCH_RANGES))
    instruments_per_clip: tuple[int, int] = (1, 4)
    polyphony: tuple[int, int] = (1, 2)
    tempo_bpm: tuple[float, float] = (90.0, 150.0)
    rest_probability: float = 0.2
    split_fraction: float = 0.75


@dataclass(frozen=True)
class ManifestEntry:
    clip_id: str
    midi_path: str
    audio_path: str
    split: str
    duration_s: float

    @property
    def label_path(self) -> str:
        return str(Path(self.audio_path).with_suffix(".prl"))


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry]
    vocab_id: str
    seed: int
    root: Path = Path(".")

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def write(self, path) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write(f"# vocab_id={self.vocab_id}\n# seed={self.seed}\n")
            writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
            for e in self.entries:
                writer.writerow([e.clip_id, e.midi_path, e.audio_path, e.split, repr(float(e.duration_s))])

    @classmethod
    def read(cls, path) -> "CorpusManifest":
        path = Path(path)
        meta = {}
        entries = []
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, value = line[1:].strip().partition("=")
                    meta[key.strip()] = value.strip()
                    continue
                fields = line.split("\t")
                if len(fields) != 5:
                    raise ValueError(f"{path}: malformed manifest line {line!r}")
                clip_id, midi_path, audio_path, split, duration = fields
                if split not in ("train", "test"):
                    raise ValueError(f"{path}: unknown split {split!r}")
                entries.append(ManifestEntry(clip_id, midi_path, audio_path, split, float(duration)))
        ids = [e.clip_id for e in entries]
        if len(set(ids)) != len(ids):
            raise ValueError(f"{path}: duplicate clip ids")
        return cls(entries, meta.get("vocab_id", ""), int(meta.get("seed", 0)), path.parent)


def _clip_notes(rng: np.random.Generator, cfg: CorpusConfig):
    """Tracks as (program, channel, notes-in-ticks) plus the tempo in us/quarter."""
    vocab = cfg.vocab
    bpm = rng.uniform(*cfg.tempo_bpm)
    tempo = int(round(60e6 / bpm))
    # leave room for the longest release so audio never outlives the clip
    usable_s = cfg.clip_seconds - 0.25
    total_ticks = int(usable_s * 1e6 / tempo * TICKS_PER_BEAT)
    eighth = TICKS_PER_BEAT // 2

    lo_k, hi_k = cfg.instruments_per_clip
    k = int(rng.integers(lo_k, min(hi_k, vocab.size) + 1))
    chosen = sorted(rng.choice(vocab.size, size=k, replace=False).tolist())
    channels = [c for c in range(16) if c != PERCUSSION_CHANNEL]
    tracks = []
    for slot, m in enumerate(chosen):
        name, programs = vocab.entries[m]
        program = int(min(programs))
        lo, hi = cfg.pitch_ranges.get(name, (21, 108))
        notes = []
        tick = 0
        while tick < total_ticks:
            length = eighth * int(rng.integers(1, 3))
            length = min(length, total_ticks - tick)
            if length <= 0:
                break
            if rng.random() >= cfg.rest_probability:
                voices = int(rng.integers(cfg.polyphony[0], cfg.polyphony[1] + 1))
                voices = min(voices, hi - lo + 1)
                pitches = rng.choice(np.arange(lo, hi + 1), size=voices, replace=False)
                # a short gap keeps repeated pitches audibly separate
                off = tick + max(length - eighth // 8, 1)
                for p in sorted(pitches.tolist()):
                    notes.append((tick, off, int(p), int(rng.integers(70, 111))))
            tick += length
        tracks.append((program, channels[slot % len(channels)], notes))
    return tracks, tempo


def generate_corpus(seed: int, config: CorpusConfig, out_dir) -> CorpusManifest:
    """Write clip_NNN.mid files plus manifest.tsv and vocab.json into ``out_dir``.

    Clip i draws from its own child seed, so the output does not depend on the
    order or parallelism in which clips are produced.
    """
    if config.n_clips < 2:
        raise ValueError("need at least 2 clips")
    if config.clip_seconds < 2:
        raise ValueError("clips must be at least 2 s long")
    if config.vocab.size < 1:
        raise ValueError("empty vocabulary")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(seed).spawn(config.n_clips)
    n_train = int(round(config.n_clips * config.split_fraction))
    entries = []
    for i, child in enumerate(children):
        tracks, tempo = _clip_notes(np.random.default_rng(child), config)
        clip_id = f"clip_{i:03d}"
        (out / f"{clip_id}.mid").write_bytes(write_midi(tracks, tempo, TICKS_PER_BEAT))
        split = "train" if i < n_train else "test"
        entries.append(ManifestEntry(clip_id, f"{clip_id}.mid", f"{clip_id}.wav", split, float(config.clip_seconds)))
    manifest = CorpusManifest(entries, config.vocab.id, seed, out)
    config.vocab.save(out / "vocab.json")
    manifest.write(out / "manifest.tsv")
    return manifest


def render_clip(entry: ManifestEntry, manifest: CorpusManifest, vocab: InstrumentVocab) -> None:
    """Synthesize audio and rasterize labels for one manifest entry."""
    events = parse_midi(manifest.resolve(entry.midi_path).read_bytes())
    wave = render(events, profiles_for(vocab), vocab, duration_s=entry.duration_s)
    write_wav(wave, manifest.resolve(entry.audio_path))
    roll = events_to_pianoroll(events, FRAME_RATE, entry.duration_s, vocab)
    write_prl(roll, manifest.resolve(entry.label_path))


def build_corpus(seed: int, config: CorpusConfig, out_dir, workers: int = 1) -> CorpusManifest:
    """MIDI generation followed by audio rendering and PRL label writing."""
    manifest = generate_corpus(seed, config, out_dir)
    jobs = [(e, manifest, config.vocab) for e in manifest.entries]
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(lambda job: render_clip(*job), jobs))
    else:
        for job in jobs:
            render_clip(*job)
    log.info("corpus of %d clips written to %s", len(manifest.entries), out_dir)
    return manifest


def manifest_paths(manifest: CorpusManifest) -> Sequence[Path]:
    return [manifest.resolve(p) for e in manifest.entries for p in (e.midi_path, e.audio_path, e.label_path)]
