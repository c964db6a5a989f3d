import numpy as np
import pytest
from PIL import Image

from rollnet.render import BACKGROUND, PALETTE, render_png, roll_image
from rollnet.rolls import Pianoroll


def decode(path):
    return np.asarray(Image.open(path).convert("RGB"))


def test_empty_roll_white(tmp_path):
    render_png(Pianoroll(np.zeros((88, 10, 3), np.uint8)), tmp_path / "e.png")
    img = decode(tmp_path / "e.png")
    assert img.shape == (176, 20, 3) and np.all(img == 255)


def test_single_cell_geometry(tmp_path):
    data = np.zeros((88, 10, 3), np.uint8)
    data[5, 7, 2] = 1
    render_png(Pianoroll(data), tmp_path / "s.png")
    img = decode(tmp_path / "s.png")
    colored = np.argwhere(np.any(img != 255, axis=2))
    row = (87 - 5) * 2  # low pitches at the bottom
    assert sorted(map(tuple, colored)) == [(row, 14), (row, 15), (row + 1, 14), (row + 1, 15)]
    assert tuple(img[row, 14]) == PALETTE[2]


def test_overlap_lowest_index_wins():
    data = np.zeros((88, 2, 3), np.uint8)
    data[0, 0, 1] = data[0, 0, 2] = 1
    img = roll_image(Pianoroll(data))
    assert tuple(img[-1, 0]) == PALETTE[1]


def test_random_cell_count(tmp_path):
    r = np.random.default_rng(0)
    data = np.zeros((88, 40, 4), np.uint8)
    cells = r.choice(88 * 40, 300, replace=False)
    data.reshape(-1, 4)[cells, r.integers(0, 4, 300)] = 1  # one instrument per cell, no overlaps
    render_png(Pianoroll(data), tmp_path / "r.png")
    img = decode(tmp_path / "r.png")
    colored = np.any(img != np.array(BACKGROUND, np.uint8), axis=2)
    assert colored.sum() // 4 == data.sum()


def test_legend(tmp_path):
    legend = render_png(Pianoroll(np.zeros((88, 2, 2), np.uint8)), tmp_path / "x.png", ["piano", "flute"])
    assert legend.read_text().splitlines() == ["0\tpiano\t#1f77b4", "1\tflute\t#ff7f0e"]


def test_palette_limit():
    with pytest.raises(ValueError):
        roll_image(Pianoroll(np.zeros((88, 2, 17), np.uint8)))


def test_rejects_probabilities():
    with pytest.raises(ValueError):
        roll_image(Pianoroll(np.zeros((88, 2, 2), np.float32)))


def test_unwritable(tmp_path):
    with pytest.raises(OSError):
        render_png(Pianoroll(np.zeros((88, 2, 2), np.uint8)), tmp_path / "missing" / "x.png")
