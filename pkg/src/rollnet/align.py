"""DTW alignment of recorded audio against audio rendered from its MIDI."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .midi import NoteEvent
from .rolls import InstrumentVocab
from .synth import TIMBRES, Waveform, render

MIN_NOTE_S = 1e-3


@dataclass(frozen=True, eq=False)
class AlignmentPath:
    pairs: np.ndarray  # (L, 2) int: (audio_frame, midi_frame)
    total_cost: float  # cells plus step penalties along the path
    penalty: float

    @property
    def cost(self) -> float:
        """Total cost normalized by path length."""
        return self.total_cost / len(self.pairs)

    def dump(self) -> str:
        return "".join(f"{a}\t{m}\n" for a, m in self.pairs)


def cost_matrix(a, b) -> np.ndarray:
    """1 - cosine similarity between the columns of two (88, T) feature matrices."""
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ValueError(f"incompatible feature matrices {a.shape} and {b.shape}")
    if a.shape[1] == 0 or b.shape[1] == 0:
        raise ValueError("empty spectrogram")
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = (a.T @ b) / np.outer(na, nb)
    cost = 1.0 - sim
    cost[(na == 0)[:, None] | (nb == 0)[None, :]] = 1.0
    return np.clip(cost, 0.0, 2.0)


def dtw(cost) -> AlignmentPath:
    """Minimum-cost monotone path from (0, 0) to (T_a-1, T_m-1).

    Steps are (1,1), (1,0) and (0,1); the latter two pay an extra penalty equal
    to the median cost. Ties prefer the diagonal, then (1,0).
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.size == 0:
        raise ValueError("cost matrix must be non-empty and 2-D")
    phi = float(np.median(c))
    n, m = c.shape
    acc = np.full((n, m), np.inf)
    step = np.zeros((n, m), dtype=np.int8)  # 0 diag, 1 from (i-1, j), 2 from (i, j-1)
    acc[0, 0] = c[0, 0]
    row = c.tolist()
    for i in range(n):
        prev = acc[i - 1].tolist() if i else None
        cur = acc[i].tolist()
        ci = row[i]
        for j in range(m):
            if i == 0 and j == 0:
                continue
            best = np.inf
            move = 0
            if i and j:
                best = prev[j - 1]
            if i:
                v = prev[j] + phi
                if v < best:
                    best, move = v, 1
            if j:
                v = cur[j - 1] + phi
                if v < best:
                    best, move = v, 2
            cur[j] = ci[j] + best
            step[i, j] = move
        acc[i] = cur

    path = []
    i, j = n - 1, m - 1
    while True:
        path.append((i, j))
        if i == 0 and j == 0:
            break
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            move = step[i, j]
            if move == 0:
                i, j = i - 1, j - 1
            elif move == 1:
                i -= 1
            else:
                j -= 1
    pairs = np.array(path[::-1], dtype=np.int64)
    return AlignmentPath(pairs, float(acc[-1, -1]), phi)


def frame_map(path: AlignmentPath):
    """MIDI frame -> audio frame, using the last audio frame matched to each MIDI frame."""
    pairs = path.pairs
    midi = np.unique(pairs[:, 1])
    audio = np.array([pairs[pairs[:, 1] == mf, 0].max() for mf in midi], dtype=np.float64)
    return midi.astype(np.float64), audio


def warp_events(events, path: AlignmentPath, frame_rate: float) -> list[NoteEvent]:
    """Retime notes through the piecewise-linear MIDI->audio frame map."""
    xs, ys = frame_map(path)
    out = []
    for ev in events:
        on = float(np.interp(ev.onset_s * frame_rate, xs, ys)) / frame_rate
        off = float(np.interp(ev.offset_s * frame_rate, xs, ys)) / frame_rate
        off = max(off, on + MIN_NOTE_S)
        out.append(NoteEvent(on, off, ev.pitch, ev.program, ev.channel, ev.velocity))
    return out


def align_audio(wave: Waveform, events, vocab: InstrumentVocab | None = None):
    """Align a recording against a rendering of ``events``.

    The MIDI side is synthesized at the recording's length and both sides go
    through the same CQT. Returns (path, warped events).
    """
    from .dsp import cqt

    vocab = vocab or InstrumentVocab.default()
    duration = len(wave.samples) / wave.sample_rate
    profiles = {i: TIMBRES[n] for i, n in enumerate(vocab.names) if n in TIMBRES}
    rendered = render(events, profiles, vocab, wave.sample_rate, duration, fallback=TIMBRES["piano"])
    audio_spec = cqt(wave)
    midi_spec = cqt(rendered)
    path = dtw(cost_matrix(audio_spec.data, midi_spec.data))
    return path, warp_events(events, path, audio_spec.frame_rate)
