import numpy as np
import pytest

from arro.core import Frame, Mask


def mask_from_rows(rows):
    """Build a Mask from strings like "0110" (one char per pixel)."""
    return Mask(np.array([[c == "1" for c in row] for row in rows], bool))


def mask_from_pixels(width, height, pixels):
    bits = np.zeros((height, width), bool)
    for x, y in pixels:
        bits[y, x] = True
    return Mask(bits)


def random_frame(rng, width, height):
    return Frame(rng.integers(0, 256, (height, width, 3), dtype=np.uint8))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
