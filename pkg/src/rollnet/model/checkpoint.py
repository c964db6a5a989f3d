"""UNW1 checkpoint container.

Layout (little-endian): b"UNW1", u32 tensor count, then per tensor a u16 name
length, the UTF-8 name, u8 ndim, ndim x u32 dims and the f32 payload. A
trailing block (u32 length + UTF-8 JSON) carries the model config, the
instrument vocabulary and the step counter.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..rolls import InstrumentVocab
from .unet import ModelConfig, ModelConfigError, ModelParams

MAGIC = b"UNW1"


class CheckpointError(ValueError):
    pass


class CheckpointMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    params: ModelParams
    vocab: InstrumentVocab
    step: int = 0


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    params = ckpt.params
    parts = [MAGIC, struct.pack("<I", len(params.tensors))]
    for name, t in params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    config = {**params.config.to_dict(), "dtype": "float32"}
    meta = json.dumps(
        {"config": config, "vocab": ckpt.vocab.to_dict(), "step": int(ckpt.step)},
        sort_keys=True,
    ).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)) + meta)
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(ckpt))
    tmp.replace(path)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("truncated checkpoint")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))


def parse_checkpoint(blob: bytes, vocab: InstrumentVocab | None = None) -> Checkpoint:
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a UNW1 checkpoint")
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        n = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    (mlen,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(mlen).decode("utf-8"))
        config = ModelConfig.from_dict(meta["config"])
        stored_vocab = InstrumentVocab.from_dict(meta["vocab"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"bad config block: {exc}") from exc
    if r.pos != len(blob):
        raise CheckpointError("trailing bytes after config block")
    try:
        params = ModelParams(config, tensors)
    except ModelConfigError as exc:
        raise CheckpointMismatchError(str(exc)) from exc
    if stored_vocab.size != config.n_instruments:
        raise CheckpointMismatchError("vocabulary size does not match the output layer")
    if vocab is not None and (vocab.size != config.n_instruments or vocab.entries != stored_vocab.entries):
        raise CheckpointMismatchError(
            f"checkpoint predicts {config.n_instruments} instruments ({stored_vocab.id}), "
            f"requested vocabulary {vocab.id!r} has {vocab.size}"
        )
    return Checkpoint(params, stored_vocab, int(meta.get("step", 0)))


def load_checkpoint(path, vocab: InstrumentVocab | None = None) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes(), vocab)
