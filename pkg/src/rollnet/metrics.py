"""Frame-level accuracy, instrument F1, per-second AUC, and the evaluation report."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .rolls import InstrumentVocab, Pianoroll, binarize, marginalize_instrument, marginalize_pitch

log = logging.getLogger(__name__)

THRESHOLD = 0.5


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __iadd__(self, other: "Counts") -> "Counts":
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        return self

    @property
    def accuracy(self) -> float:
        denom = self.tp + self.fp + self.fn
        return 1.0 if denom == 0 else self.tp / denom

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 1.0 if denom == 0 else 2 * self.tp / denom


def _binary(a) -> np.ndarray:
    a = np.asarray(a)
    if a.size and not np.all((a == 0) | (a == 1)):
        raise ValueError("expected a binary array")
    return a.astype(bool)


def count(pred, truth) -> Counts:
    p, t = _binary(pred), _binary(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    return Counts(int(np.sum(p & t)), int(np.sum(p & ~t)), int(np.sum(~p & t)))


def frame_accuracy(pred, truth) -> float:
    """TP / (TP + FP + FN) over all cells; 1.0 when both sides are empty."""
    return count(pred, truth).accuracy


def instrument_counts(pred, truth) -> list[Counts]:
    """Per-instrument frame counts for (M, T) instrument rolls."""
    p, t = _binary(pred), _binary(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    return [count(p[m], t[m]) for m in range(p.shape[0])]


def instrument_f1(pred, truth) -> tuple[list[float], float]:
    """Per-instrument F1 and their mean over instruments active in ``truth``.

    An instrument absent from both sides scores 1; if no instrument is active
    in ``truth`` at all, the mean runs over every instrument.
    """
    per = instrument_counts(pred, truth)
    scores = [c.f1 for c in per]
    present = [s for s, c in zip(scores, per) if c.tp + c.fn > 0]
    pool = present or scores
    return scores, float(np.mean(pool)) if pool else 1.0


def second_bounds(n_frames: int, frame_rate: float) -> list[tuple[int, int]]:
    """Frame ranges [floor(s * fr), floor((s + 1) * fr)) covering every frame."""
    bounds = []
    s = 0
    while True:
        lo = math.floor(s * frame_rate)
        if lo >= n_frames:
            return bounds
        bounds.append((lo, min(math.floor((s + 1) * frame_rate), n_frames)))
        s += 1


def per_second_aggregate(frame_values, frame_rate: float) -> np.ndarray:
    """(M, T) frame probabilities or labels -> (M, S) per-second maxima."""
    if not frame_rate > 0:
        raise ValueError("frame_rate must be positive")
    v = np.asarray(frame_values)
    bounds = second_bounds(v.shape[-1], frame_rate)
    out = np.empty(v.shape[:-1] + (len(bounds),), dtype=v.dtype)
    for s, (lo, hi) in enumerate(bounds):
        out[..., s] = v[..., lo:hi].max(axis=-1)
    return out


def auc(scores, labels) -> float | None:
    """Mann-Whitney AUC with ties counted as half; None when only one class is present."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = _binary(labels).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class EvalReport:
    instruments: list[str]
    pitch: Counts = field(default_factory=Counts)
    roll: Counts = field(default_factory=Counts)
    per_instrument: list[Counts] = field(default_factory=list)
    auc: list[float | None] = field(default_factory=list)
    n_clips: int = 0
    skipped: list[str] = field(default_factory=list)
    threshold: float = THRESHOLD

    @property
    def pitch_accuracy(self) -> float:
        return self.pitch.accuracy

    @property
    def roll_accuracy(self) -> float:
        return self.roll.accuracy

    @property
    def f1(self) -> list[float]:
        return [c.f1 for c in self.per_instrument]

    def _present(self) -> list[int]:
        present = [m for m, c in enumerate(self.per_instrument) if c.tp + c.fn > 0]
        return present or list(range(len(self.per_instrument)))

    @property
    def f1_macro(self) -> float:
        idx = self._present()
        return float(np.mean([self.f1[m] for m in idx])) if idx else 1.0

    @property
    def f1_micro(self) -> float:
        total = Counts()
        for c in self.per_instrument:
            total += c
        return total.f1

    @property
    def auc_mean(self) -> float | None:
        vals = [self.auc[m] for m in self._present() if self.auc[m] is not None]
        return float(np.mean(vals)) if vals else None

    def records(self) -> list[tuple[str, str, float | int | None]]:
        recs: list[tuple[str, str, float | int | None]] = [
            ("pitch_acc", "all", self.pitch_accuracy),
            ("pianoroll_acc", "all", self.roll_accuracy),
            ("instrument_f1_macro", "all", self.f1_macro),
            ("instrument_f1_micro", "all", self.f1_micro),
            ("auc_mean", "all", self.auc_mean),
            ("clips", "all", self.n_clips),
            ("threshold", "all", self.threshold),
        ]
        for name, c, a in zip(self.instruments, self.per_instrument, self.auc):
            recs += [
                ("f1", name, c.f1),
                ("auc", name, a),
                ("tp", name, c.tp),
                ("fp", name, c.fp),
                ("fn", name, c.fn),
            ]
        for metric, c in (("pitch", self.pitch), ("pianoroll", self.roll)):
            recs += [(f"{metric}_tp", "all", c.tp), (f"{metric}_fp", "all", c.fp), (f"{metric}_fn", "all", c.fn)]
        return recs

    def records_text(self) -> str:
        def fmt(v):
            return "nan" if v is None else (str(v) if isinstance(v, int) else f"{v:.6f}")

        return "".join(f"{m}\t{i}\t{fmt(v)}\n" for m, i, v in self.records())

    def table(self) -> str:
        def fmt(v):
            return "   n/a" if v is None else f"{v:6.3f}"

        width = max([len(n) for n in self.instruments] + [10])
        lines = [f"{'instrument':<{width}}  {'F1':>6}  {'AUC':>6}"]
        for name, f, a in zip(self.instruments, self.f1, self.auc):
            lines.append(f"{name:<{width}}  {fmt(f)}  {fmt(a)}")
        lines += [
            "-" * (width + 16),
            f"{'mean':<{width}}  {fmt(self.f1_macro)}  {fmt(self.auc_mean)}",
            "",
            f"instrument F1 (macro / micro): {self.f1_macro:.3f} / {self.f1_micro:.3f}",
            f"pitch Acc:      {self.pitch_accuracy:.3f}",
            f"pianoroll Acc:  {self.roll_accuracy:.3f}",
            f"clips: {self.n_clips}  skipped: {len(self.skipped)}  threshold: {self.threshold}",
        ]
        return "\n".join(lines) + "\n"


def evaluate_rolls(
    pairs: Iterable[tuple[Pianoroll, Pianoroll]],
    vocab: InstrumentVocab,
    threshold: float = THRESHOLD,
) -> EvalReport:
    """Pool counts over (predicted probabilities, binary truth) pairs, then compute rates."""
    report = EvalReport(vocab.names, per_instrument=[Counts() for _ in vocab.names], threshold=threshold)
    scores: list[list[np.ndarray]] = [[] for _ in vocab.names]
    labels: list[list[np.ndarray]] = [[] for _ in vocab.names]
    for pred, truth in pairs:
        if pred.data.shape != truth.data.shape:
            raise ValueError(f"prediction {pred.data.shape} and truth {truth.data.shape} differ")
        hard = binarize(pred, threshold) if pred.data.dtype != np.uint8 else pred
        report.roll += count(hard.data, truth.data)
        report.pitch += count(marginalize_pitch(hard).data, marginalize_pitch(truth).data)
        inst_true = marginalize_instrument(truth).data
        for m, c in enumerate(instrument_counts(marginalize_instrument(hard).data, inst_true)):
            report.per_instrument[m] += c
        sec_scores = per_second_aggregate(marginalize_instrument(pred).data, truth.frame_rate)
        sec_labels = per_second_aggregate(inst_true, truth.frame_rate)
        for m in range(len(vocab.names)):
            scores[m].append(sec_scores[m])
            labels[m].append(sec_labels[m])
        report.n_clips += 1
    report.auc = [
        auc(np.concatenate(s), np.concatenate(y)) if s else None for s, y in zip(scores, labels)
    ]
    return report


def evaluate(ckpt, manifest, split: str = "test", oracle: bool = False, threshold: float = THRESHOLD) -> EvalReport:
    """Predict every clip of ``split`` and pool the metrics.

    With ``oracle`` the ground truth itself stands in for the prediction,
    which must score perfectly; it checks the evaluation plumbing end to end.
    """
    from .model.train import clip_labels, predict
    from .synth import read_wav

    entries = manifest.split(split)
    if not entries:
        raise ValueError(f"split {split!r} is empty")
    vocab = ckpt.vocab if ckpt is not None else InstrumentVocab.load(manifest.resolve("vocab.json"))
    skipped: list[str] = []

    def pairs():
        for e in entries:
            try:
                truth = clip_labels(e, manifest, vocab)
                if oracle:
                    pred = Pianoroll(truth.data.astype(np.float32), truth.frame_rate, vocab_id=truth.vocab_id)
                else:
                    pred = predict(read_wav(manifest.resolve(e.audio_path)), ckpt).roll
                    n = min(pred.n_frames, truth.n_frames)
                    if abs(pred.n_frames - truth.n_frames) > 1:
                        raise ValueError(f"{pred.n_frames} predicted frames vs {truth.n_frames} labelled")
                    pred = Pianoroll(pred.data[:, :n], pred.frame_rate, vocab_id=pred.vocab_id)
                    truth = Pianoroll(truth.data[:, :n], truth.frame_rate, vocab_id=truth.vocab_id)
            except (OSError, ValueError) as exc:
                log.warning("skipping clip %s: %s", e.clip_id, exc)
                skipped.append(e.clip_id)
                continue
            yield pred, truth

    report = evaluate_rolls(pairs(), vocab, threshold)
    report.skipped = skipped
    return report


def pooled_auc_inputs(frame_probs: Sequence[np.ndarray], frame_labels: Sequence[np.ndarray], frame_rate: float):
    s = np.concatenate([per_second_aggregate(p, frame_rate) for p in frame_probs], axis=-1)
    y = np.concatenate([per_second_aggregate(t, frame_rate) for t in frame_labels], axis=-1)
    return s, y
