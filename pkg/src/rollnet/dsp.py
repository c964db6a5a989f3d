"""Constant-Q front end and fixed-length segmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .rolls import Pianoroll
from .synth import HOP, SAMPLE_RATE, Waveform

N_BINS = 88
FMIN = 27.5
BINS_PER_OCTAVE = 12
LOG_GAIN = 20.0
SEGMENT_FRAMES = 320
Q = 1.0 / (2.0 ** (1.0 / BINS_PER_OCTAVE) - 1.0)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    data: np.ndarray  # (88, T), log-compressed magnitudes
    sample_rate: int = SAMPLE_RATE
    hop: int = HOP

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class Segment:
    spec: np.ndarray  # (88, SEGMENT_FRAMES)
    labels: np.ndarray | None  # (88, SEGMENT_FRAMES, M) uint8
    mask: np.ndarray  # (SEGMENT_FRAMES,) uint8, 1 for real frames
    start: int  # first frame in the source clip

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())


def bin_frequencies(n_bins: int = N_BINS, fmin: float = FMIN) -> np.ndarray:
    return fmin * 2.0 ** (np.arange(n_bins) / BINS_PER_OCTAVE)


@lru_cache(maxsize=4)
def cqt_kernels(sample_rate: int = SAMPLE_RATE, n_bins: int = N_BINS, fmin: float = FMIN):
    """Per-bin (cos, sin) kernels of shape (N_n, 2), Hann-windowed, unit window sum."""
    kernels = []
    for f in bin_frequencies(n_bins, fmin):
        n = math.ceil(Q * sample_rate / f)
        k = np.arange(n)
        win = 0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)  # periodic Hann
        phase = 2.0 * np.pi * f * (k - n // 2) / sample_rate
        kern = np.stack([win * np.cos(phase), win * np.sin(phase)], axis=1) / win.sum()
        kern.setflags(write=False)
        kernels.append(kern)
    return tuple(kernels)


def n_cqt_frames(n_samples: int, hop: int = HOP) -> int:
    return 1 + (n_samples - 1) // hop


def cqt_magnitude(wave: Waveform) -> np.ndarray:
    """Raw (uncompressed) CQT magnitudes, frames centred on multiples of the hop."""
    if wave.sample_rate != SAMPLE_RATE:
        raise ValueError(f"expected {SAMPLE_RATE} Hz audio, got {wave.sample_rate} Hz (resample first)")
    x = np.asarray(wave.samples, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("cqt needs a non-empty mono waveform")
    kernels = cqt_kernels(wave.sample_rate)
    pad = max(len(k) for k in kernels) // 2 + 1
    xp = np.pad(x, pad, mode="reflect") if x.size > 1 else np.full(x.size + 2 * pad, x[0])
    n_frames = n_cqt_frames(x.size)
    out = np.empty((len(kernels), n_frames))
    for b, kern in enumerate(kernels):
        n = len(kern)
        first = pad - n // 2
        frames = sliding_window_view(xp[first:], n)[:: HOP][:n_frames]
        re_im = frames @ kern
        out[b] = np.hypot(re_im[:, 0], re_im[:, 1])
    return out


def cqt(wave: Waveform) -> Spectrogram:
    return Spectrogram(np.log1p(LOG_GAIN * cqt_magnitude(wave)), wave.sample_rate, HOP)


def segment(
    spec: Spectrogram,
    labels: Pianoroll | None = None,
    length: int = SEGMENT_FRAMES,
) -> list[Segment]:
    """Cut into consecutive ``length``-frame windows; the last one is zero-padded."""
    n = spec.n_frames
    if labels is not None:
        if abs(labels.frame_rate - spec.frame_rate) > 1e-9:
            raise ValueError("spectrogram and labels use different frame rates")
        if abs(labels.n_frames - n) > 1:
            raise ValueError(f"label length {labels.n_frames} does not match spectrogram length {n}")
        n = min(n, labels.n_frames)
    out = []
    for start in range(0, n, length):
        valid = min(length, n - start)
        x = np.zeros((spec.data.shape[0], length), dtype=spec.data.dtype)
        x[:, :valid] = spec.data[:, start:start + valid]
        y = None
        if labels is not None:
            y = np.zeros((labels.data.shape[0], length, labels.data.shape[2]), dtype=np.uint8)
            y[:, :valid] = labels.data[:, start:start + valid]
        mask = np.zeros(length, dtype=np.uint8)
        mask[:valid] = 1
        out.append(Segment(x, y, mask, start))
    return out
