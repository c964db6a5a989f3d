"""Pianoroll tensors, their marginals, and the PRL container format.

A pianoroll is an ``F x T x M`` array (pitch, frame, instrument). The pitch
roll and the instrument roll are its max-marginals over instruments and over
pitches respectively. Labels are ``uint8`` in {0, 1}; predictions are
``float32`` probabilities.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Union

import numpy as np

N_PITCHES = 88
PITCH_OFFSET = 21  # MIDI A0
FRAME_RATE = 31.25  # 16000 Hz / 512-sample hop

__all__ = [
    "N_PITCHES",
    "PITCH_OFFSET",
    "FRAME_RATE",
    "InstrumentVocab",
    "Pianoroll",
    "PitchRoll",
    "InstrumentRoll",
    "marginalize_pitch",
    "marginalize_instrument",
    "binarize",
    "write_prl",
    "read_prl",
    "PRLError",
    "PRLMagicError",
    "PRLVersionError",
    "PRLTruncatedError",
    "PRLDimensionError",
]


def _check_data(data: np.ndarray, ndim: int) -> np.ndarray:
    data = np.asarray(data)
    if data.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {data.shape}")
    if data.dtype == np.uint8:
        if data.size and data.max() > 1:
            raise ValueError("binary rolls may only contain 0 and 1")
    elif data.dtype == np.float32:
        if data.size and not (np.all(np.isfinite(data)) and data.min() >= 0.0 and data.max() <= 1.0):
            raise ValueError("probability rolls must lie in [0, 1]")
    else:
        raise TypeError(f"roll data must be uint8 (binary) or float32 (probability), got {data.dtype}")
    return data


@dataclass(frozen=True)
class InstrumentVocab:
    """Ordered instrument classes, each owning a disjoint set of GM programs."""

    id: str
    entries: tuple[tuple[str, frozenset[int]], ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("vocabulary must contain at least one instrument")
        seen: set[int] = set()
        for name, programs in self.entries:
            bad = [p for p in programs if not 0 <= p <= 127]
            if bad:
                raise ValueError(f"{name}: program numbers out of range: {bad}")
            if seen & programs:
                raise ValueError(f"{name}: programs {sorted(seen & programs)} already assigned")
            seen |= programs

    @property
    def size(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.entries]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def subset(self, names: Iterable[str], id: str | None = None) -> "InstrumentVocab":
        names = list(names)
        entries = tuple(e for n in names for e in self.entries if e[0] == n)
        if len(entries) != len(names):
            missing = set(names) - set(self.names)
            raise KeyError(f"unknown instruments: {sorted(missing)}")
        return InstrumentVocab(id or f"{self.id}:{'+'.join(names)}", entries)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "instruments": [{"name": n, "programs": sorted(p)} for n, p in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InstrumentVocab":
        return cls(
            d["id"],
            tuple((e["name"], frozenset(int(p) for p in e["programs"])) for e in d["instruments"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "InstrumentVocab":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def default(cls) -> "InstrumentVocab":
        return DEFAULT_VOCAB


DEFAULT_VOCAB = InstrumentVocab(
    "gm8",
    (
        ("piano", frozenset(range(0, 8))),
        ("acoustic guitar", frozenset({24, 25})),
        ("electric guitar", frozenset(range(26, 32))),
        ("trumpet", frozenset({56, 59})),
        ("sax", frozenset(range(64, 68))),
        ("violin", frozenset({40})),
        ("cello", frozenset({42})),
        ("flute", frozenset({73})),
    ),
)


@dataclass(frozen=True, eq=False)
class Pianoroll:
    data: np.ndarray  # (F, T, M)
    frame_rate: float = FRAME_RATE
    pitch_offset: int = PITCH_OFFSET
    vocab_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "data", _check_data(self.data, 3))
        if not self.frame_rate > 0:
            raise ValueError("frame_rate must be positive")

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def is_binary(self) -> bool:
        return self.data.dtype == np.uint8


@dataclass(frozen=True, eq=False)
class PitchRoll:
    data: np.ndarray  # (F, T)
    frame_rate: float = FRAME_RATE
    pitch_offset: int = PITCH_OFFSET

    def __post_init__(self):
        object.__setattr__(self, "data", _check_data(self.data, 2))
        if not self.frame_rate > 0:
            raise ValueError("frame_rate must be positive")

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class InstrumentRoll:
    data: np.ndarray  # (M, T)
    frame_rate: float = FRAME_RATE
    vocab_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "data", _check_data(self.data, 2))
        if not self.frame_rate > 0:
            raise ValueError("frame_rate must be positive")

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


AnyRoll = Union[Pianoroll, PitchRoll, InstrumentRoll]


def marginalize_pitch(roll: Pianoroll) -> PitchRoll:
    """Max over instruments; for binary labels this is the logical OR."""
    data = roll.data
    out = data.max(axis=2) if data.shape[2] else np.zeros(data.shape[:2], data.dtype)
    return PitchRoll(out, roll.frame_rate, roll.pitch_offset)


def marginalize_instrument(roll: Pianoroll) -> InstrumentRoll:
    data = roll.data
    if data.shape[0]:
        out = data.max(axis=0).T
    else:
        out = np.zeros((data.shape[2], data.shape[1]), data.dtype)
    return InstrumentRoll(np.ascontiguousarray(out), roll.frame_rate, roll.vocab_id)


def binarize(roll, threshold: float = 0.5):
    """Cells at or above ``threshold`` become 1. Works on any roll type."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    out = (roll.data >= threshold).astype(np.uint8)
    if isinstance(roll, Pianoroll):
        return Pianoroll(out, roll.frame_rate, roll.pitch_offset, roll.vocab_id)
    if isinstance(roll, PitchRoll):
        return PitchRoll(out, roll.frame_rate, roll.pitch_offset)
    return InstrumentRoll(out, roll.frame_rate, roll.vocab_id)


# --- PRL container -----------------------------------------------------------
#
# little-endian header: b"PRL1", u8 kind, u8 payload type, u32 F, u32 T, u32 M,
# f64 frame_rate, u16 vocab-id length, vocab-id bytes; payload in [m][t][f] order.

_MAGIC = b"PRL1"
_HEADER = struct.Struct("<4sBBIIIdH")
_KIND_PIANOROLL, _KIND_PITCH, _KIND_INSTRUMENT = 0, 1, 2
_PAYLOAD_U8, _PAYLOAD_F32 = 0, 1
_MAX_CELLS = 1 << 31


class PRLError(ValueError):
    """Raised for any malformed PRL stream."""


class PRLMagicError(PRLError):
    pass


class PRLVersionError(PRLError):
    pass


class PRLTruncatedError(PRLError):
    pass


class PRLDimensionError(PRLError):
    pass


def _as_mtf(roll: AnyRoll) -> tuple[int, np.ndarray, str]:
    if isinstance(roll, Pianoroll):
        return _KIND_PIANOROLL, roll.data.transpose(2, 1, 0), roll.vocab_id
    if isinstance(roll, PitchRoll):
        return _KIND_PITCH, roll.data.T[None, :, :], ""
    if isinstance(roll, InstrumentRoll):
        return _KIND_INSTRUMENT, roll.data[:, :, None], roll.vocab_id
    raise TypeError(f"not a roll: {type(roll).__name__}")


def prl_bytes(roll: AnyRoll) -> bytes:
    if getattr(roll, "pitch_offset", PITCH_OFFSET) != PITCH_OFFSET:
        raise ValueError("PRL stores rolls with pitch_offset 21 only")
    kind, mtf, vocab_id = _as_mtf(roll)
    payload_type = _PAYLOAD_U8 if mtf.dtype == np.uint8 else _PAYLOAD_F32
    m, t, f = mtf.shape
    vid = vocab_id.encode("utf-8")
    if len(vid) > 0xFFFF:
        raise ValueError("vocab id too long")
    head = _HEADER.pack(_MAGIC, kind, payload_type, f, t, m, float(roll.frame_rate), len(vid))
    body = np.ascontiguousarray(mtf, dtype="<f4" if payload_type else np.uint8).tobytes()
    return head + vid + body


def write_prl(roll: AnyRoll, destination: Union[str, Path, BinaryIO]) -> int:
    """Serialize ``roll``; returns the number of bytes written."""
    blob = prl_bytes(roll)
    if hasattr(destination, "write"):
        destination.write(blob)
    else:
        Path(destination).write_bytes(blob)
    return len(blob)


def read_prl(source: Union[str, Path, bytes, BinaryIO]) -> AnyRoll:
    if isinstance(source, (bytes, bytearray, memoryview)):
        blob = bytes(source)
    elif hasattr(source, "read"):
        blob = source.read()
    else:
        blob = Path(source).read_bytes()

    if len(blob) < 4:
        raise PRLTruncatedError("stream shorter than the magic number")
    magic = blob[:4]
    if magic[:3] != b"PRL":
        raise PRLMagicError(f"bad magic {magic!r}")
    if magic != _MAGIC:
        raise PRLVersionError(f"unsupported PRL version {magic[3:]!r}")
    if len(blob) < _HEADER.size:
        raise PRLTruncatedError("truncated header")
    _, kind, ptype, f, t, m, frame_rate, vlen = _HEADER.unpack_from(blob)
    if kind not in (0, 1, 2):
        raise PRLError(f"unknown roll kind {kind}")
    if ptype not in (0, 1):
        raise PRLError(f"unknown payload type {ptype}")
    if (kind == _KIND_PITCH and m != 1) or (kind == _KIND_INSTRUMENT and f != 1):
        raise PRLDimensionError(f"dimensions {f}x{t}x{m} inconsistent with roll kind {kind}")
    if not frame_rate > 0:
        raise PRLError(f"invalid frame rate {frame_rate}")
    cells = f * t * m
    if cells > _MAX_CELLS:
        raise PRLDimensionError(f"{f}x{t}x{m} exceeds the cell limit")
    pos = _HEADER.size
    if len(blob) < pos + vlen:
        raise PRLTruncatedError("truncated vocab id")
    try:
        vocab_id = blob[pos:pos + vlen].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise PRLError("vocab id is not valid UTF-8") from exc
    pos += vlen
    itemsize = 4 if ptype else 1
    need = cells * itemsize
    if len(blob) - pos < need:
        raise PRLTruncatedError(f"payload has {len(blob) - pos} bytes, expected {need}")
    if len(blob) - pos > need:
        raise PRLError("trailing bytes after payload")
    dtype = np.dtype("<f4") if ptype else np.dtype(np.uint8)
    mtf = np.frombuffer(blob, dtype=dtype, count=cells, offset=pos).reshape(m, t, f)
    mtf = mtf.astype(np.float32 if ptype else np.uint8)  # native-endian copy
    try:
        if kind == _KIND_PIANOROLL:
            return Pianoroll(np.ascontiguousarray(mtf.transpose(2, 1, 0)), frame_rate, PITCH_OFFSET, vocab_id)
        if kind == _KIND_PITCH:
            return PitchRoll(np.ascontiguousarray(mtf[0].T), frame_rate, PITCH_OFFSET)
        return InstrumentRoll(np.ascontiguousarray(mtf[:, :, 0]), frame_rate, vocab_id)
    except ValueError as exc:
        raise PRLError(str(exc)) from exc


def rolls_equal(a: AnyRoll, b: AnyRoll) -> bool:
    """Bit-exact equality including metadata."""
    if type(a) is not type(b):
        return False
    if a.data.dtype != b.data.dtype or a.data.shape != b.data.shape:
        return False
    if a.data.tobytes() != b.data.tobytes():
        return False
    return (
        struct.pack("<d", a.frame_rate) == struct.pack("<d", b.frame_rate)
        and getattr(a, "pitch_offset", None) == getattr(b, "pitch_offset", None)
        and getattr(a, "vocab_id", None) == getattr(b, "vocab_id", None)
    )
