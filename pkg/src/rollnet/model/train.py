"""SGD training over segmented clips, and segment-stitched prediction."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import expit

from ..corpus import CorpusManifest, ManifestEntry
from ..dsp import SEGMENT_FRAMES, Segment, cqt, segment
from ..midi import events_to_pianoroll, read_midi
from ..rolls import FRAME_RATE, InstrumentVocab, Pianoroll, marginalize_instrument, marginalize_pitch, read_prl
from ..synth import Waveform, read_wav
from .checkpoint import Checkpoint, save_checkpoint
from .loss import LossBreakdown, multitask_loss
from .unet import ModelConfig, ModelParams, backward, init_params, unet_forward

log = logging.getLogger(__name__)


class NumericError(ArithmeticError):
    """Non-finite values reached the parameter update."""


@dataclass
class TrainConfig:
    epochs: int = 1
    batch_size: int = 8
    lr: float = 0.005
    seed: int = 0
    max_steps: int | None = None
    widths: tuple[int, ...] = (16, 32, 64, 128)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[tuple[int, LossBreakdown]] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)


def sgd_step(params: ModelParams, grads: dict, lr: float = 0.005) -> ModelParams:
    """Plain SGD on learnable tensors; running BN statistics are carried over unchanged."""
    for name in params.learnable():
        if name not in grads:
            raise KeyError(f"missing gradient for {name}")
        if grads[name].shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {grads[name].shape} != {params[name].shape}")
    bad = [name for name in params.learnable() if not np.all(np.isfinite(grads[name]))]
    if bad:
        raise NumericError(f"non-finite gradients in {', '.join(bad[:5])}; step aborted")
    dtype = params.config.dtype
    new = {
        name: (t - np.asarray(lr * grads[name], dtype=dtype)) if name in grads and ".running_" not in name else t.copy()
        for name, t in params.items()
    }
    return ModelParams(params.config, new)


def clip_labels(entry: ManifestEntry, manifest: CorpusManifest, vocab: InstrumentVocab) -> Pianoroll:
    """Labels for a clip: the stored PRL when present, else rasterized from its MIDI."""
    prl = manifest.resolve(entry.label_path)
    if prl.exists():
        roll = read_prl(prl)
        if roll.vocab_id == vocab.id and roll.data.shape[2] == vocab.size:
            return roll
    events = read_midi(manifest.resolve(entry.midi_path))
    return events_to_pianoroll(events, FRAME_RATE, entry.duration_s, vocab)


def load_segments(entries, manifest: CorpusManifest, vocab: InstrumentVocab, skipped: list | None = None):
    segments: list[Segment] = []
    for entry in entries:
        try:
            spec = cqt(read_wav(manifest.resolve(entry.audio_path)))
            labels = clip_labels(entry, manifest, vocab)
            segments.extend(segment(spec, labels))
        except (OSError, ValueError, EOFError) as exc:
            log.warning("skipping clip %s: %s", entry.clip_id, exc)
            if skipped is not None:
                skipped.append(entry.clip_id)
    return segments


def batches(n_items: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n_items)
    return [order[i:i + batch_size] for i in range(0, n_items, batch_size)]


def train_step(params: ModelParams, segs: list[Segment], lr: float):
    x = np.stack([s.spec for s in segs])
    y = np.stack([s.labels for s in segs])
    mask = np.stack([s.mask for s in segs])
    logits, cache = unet_forward(x, params, train=True)
    loss, dlogits = multitask_loss(logits, y, mask)
    if not math.isfinite(loss.total):
        raise NumericError(f"non-finite loss {loss.total}")
    grads = backward(cache, dlogits, params)
    return sgd_step(params, grads, lr), loss


def train_segments(
    segments: list[Segment],
    vocab: InstrumentVocab,
    config: TrainConfig,
    model_config: ModelConfig | None = None,
    out_dir=None,
    on_step: Callable[[int, LossBreakdown], None] | None = None,
) -> TrainResult:
    if not segments:
        raise ValueError("no training segments")
    model_config = model_config or ModelConfig(vocab.size, widths=config.widths)
    params = init_params(model_config, config.seed)
    result = TrainResult(Checkpoint(params, vocab, 0))
    step = 0
    loss_fh = open(Path(out_dir) / "loss.tsv", "w", encoding="utf-8") if out_dir else None
    if loss_fh:
        # raw BCE sums per term, then the weighted total
        loss_fh.write("step\tl_roll\tl_p\tl_i\ttotal\n")
    try:
        for epoch in range(config.epochs):
            rng = np.random.default_rng([config.seed, epoch])
            for idx in batches(len(segments), config.batch_size, rng):
                if config.max_steps is not None and step >= config.max_steps:
                    break
                params, loss = train_step(params, [segments[i] for i in idx], config.lr)
                step += 1
                result.log.append((step, loss))
                if loss_fh:
                    loss_fh.write(loss.record(step) + "\n")
                if on_step:
                    on_step(step, loss)
            result.checkpoint = Checkpoint(params, vocab, step)
            if out_dir:
                loss_fh.flush()
                save_checkpoint(result.checkpoint, Path(out_dir) / "checkpoint.unw")
            if config.max_steps is not None and step >= config.max_steps:
                break
    finally:
        if loss_fh:
            loss_fh.close()
    return result


def train(manifest: CorpusManifest, vocab: InstrumentVocab, config: TrainConfig, out_dir=None, **kw) -> TrainResult:
    entries = manifest.split("train")
    if not entries:
        raise ValueError("manifest has no training clips")
    skipped: list[str] = []
    segments = load_segments(entries, manifest, vocab, skipped)
    if not segments:
        raise ValueError("every training clip failed to load")
    result = train_segments(segments, vocab, config, out_dir=out_dir, **kw)
    result.skipped = skipped
    return result


@dataclass
class Prediction:
    roll: Pianoroll  # float32 probabilities
    pitch: object
    instrument: object


def predict_spectrogram(spec_data: np.ndarray, ckpt: Checkpoint, batch_size: int = 8) -> np.ndarray:
    """Stitched pianoroll probabilities (88, T, M) for a CQT matrix."""
    from ..dsp import Spectrogram

    params = ckpt.params
    cfg = params.config
    segs = segment(Spectrogram(spec_data), None, cfg.n_frames)
    n = spec_data.shape[1]
    out = np.zeros((cfg.n_freq, n, cfg.n_instruments), dtype=np.float32)
    for i in range(0, len(segs), batch_size):
        chunk = segs[i:i + batch_size]
        logits = unet_forward(np.stack([s.spec for s in chunk]), params, train=False)
        probs = expit(logits.astype(np.float64)).astype(np.float32)
        for s, p in zip(chunk, probs):
            out[:, s.start:s.start + s.n_valid] = p[:, : s.n_valid]
    return out


def predict(wave: Waveform, ckpt: Checkpoint) -> Prediction:
    spec = cqt(wave)
    probs = predict_spectrogram(spec.data, ckpt)
    roll = Pianoroll(probs, FRAME_RATE, vocab_id=ckpt.vocab.id)
    pitch = marginalize_pitch(roll)
    inst = marginalize_instrument(roll)
    # marginals must be exact max-marginals of the returned pianoroll
    assert np.array_equal(pitch.data, probs.max(axis=2))
    assert np.array_equal(inst.data, probs.max(axis=0).T)
    assert pitch.n_frames == inst.n_frames == roll.n_frames == spec.n_frames
    return Prediction(roll, pitch, inst)


__all__ = [
    "TrainConfig",
    "TrainResult",
    "NumericError",
    "sgd_step",
    "train",
    "train_segments",
    "train_step",
    "predict",
    "predict_spectrogram",
    "Prediction",
    "SEGMENT_FRAMES",
]
