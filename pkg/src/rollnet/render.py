"""PNG rendering of binary pianorolls, one palette color per instrument."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .rolls import Pianoroll

CELL = 2  # pixels per cell edge
BACKGROUND = (255, 255, 255)

PALETTE = (
    (31, 119, 180),
    (255, 127, 14),
    (44, 160, 44),
    (214, 39, 40),
    (148, 103, 189),
    (140, 86, 75),
    (227, 119, 194),
    (127, 127, 127),
    (188, 189, 34),
    (23, 190, 207),
    (0, 0, 128),
    (128, 0, 0),
    (0, 100, 0),
    (255, 215, 0),
    (0, 0, 0),
    (255, 0, 255),
)


def roll_image(roll: Pianoroll) -> np.ndarray:
    """(2F, 2T, 3) uint8 RGB; low pitches at the bottom, lower instrument index on top."""
    if roll.data.dtype != np.uint8:
        raise ValueError("render a binary roll; binarize probabilities first")
    n_freq, n_frames, n_inst = roll.data.shape
    if n_inst > len(PALETTE):
        raise ValueError(f"{n_inst} instruments exceed the {len(PALETTE)}-color palette")
    if n_frames == 0:
        raise ValueError("cannot render a roll with no frames")
    cells = np.empty((n_freq, n_frames, 3), dtype=np.uint8)
    cells[:] = BACKGROUND
    for m in reversed(range(n_inst)):
        cells[roll.data[:, :, m] == 1] = PALETTE[m]
    cells = cells[::-1]
    return np.repeat(np.repeat(cells, CELL, axis=0), CELL, axis=1)


def legend_text(names) -> str:
    return "".join(
        f"{m}\t{name}\t#{r:02x}{g:02x}{b:02x}\n" for m, (name, (r, g, b)) in enumerate(zip(names, PALETTE))
    )


def render_png(roll: Pianoroll, out, names=None) -> Path:
    """Write the image plus a ``.legend.txt`` sidecar mapping colors to instruments."""
    out = Path(out)
    pixels = roll_image(roll)
    names = list(names) if names is not None else [f"instrument {m}" for m in range(roll.data.shape[2])]
    if len(names) != roll.data.shape[2]:
        raise ValueError(f"{len(names)} names for {roll.data.shape[2]} instruments")
    Image.fromarray(pixels, "RGB").save(out, format="PNG")
    legend = out.with_suffix(".legend.txt")
    legend.write_text(legend_text(names), encoding="utf-8")
    return legend
