"""HSV helpers tuned for full-frame thresholding.

Hue is measured in degrees [0, 360), saturation and value in [0, 1],
matching the classic max/min formulation: v = max(r,g,b)/255,
s = (max-min)/max, h from the dominant channel sector. Achromatic
pixels have s = 0 and h = 0. Hue is only evaluated for pixels that
already pass the saturation/value thresholds, so mostly neutral frames
stay cheap; :class:`FrameHSV` shares the channel extrema between
several thresholds against the same frame.
"""

from __future__ import annotations

import math

import cv2
import numpy as np


def _hue_degrees(rr, gg, bb, mx, d) -> np.ndarray:
    """Hue in degrees from float64 channel subsets."""
    safe = np.where(d == 0.0, 1.0, d)
    h = np.where(
        rr == mx,
        (gg - bb) / safe,
        np.where(gg == mx, 2.0 + (bb - rr) / safe, 4.0 + (rr - gg) / safe),
    )
    h = (h * 60.0) % 360.0
    h[d == 0.0] = 0.0
    return h


def _value_threshold_uint8(val_min: float) -> int:
    # max/255 >= v  <=>  max >= 255v; integers make the comparison exact
    # (the 1e-9 slack absorbs float error in 255*v for ratios like 0.2)
    return max(0, math.ceil(val_min * 255.0 - 1e-9))


class FrameHSV:
    """Per-frame channel extrema, reusable across color classes."""

    def __init__(self, pixels: np.ndarray):
        self.pixels = pixels
        r, g, b = cv2.split(pixels)
        self.r, self.g, self.b = r, g, b
        self.maxc = cv2.max(cv2.max(r, g), b)
        self.delta = cv2.subtract(self.maxc, cv2.min(cv2.min(r, g), b))
        self._hue_cache: dict = {}  # (sat_min, val_min) -> (idx, hues)

    def _candidates(self, sat_min: float, val_min: float):
        """Flat indices passing sat/val, plus their hues (cached)."""
        key = (sat_min, val_min)
        hit = self._hue_cache.get(key)
        if hit is not None:
            return hit
        vt = _value_threshold_uint8(val_min)
        if vt > 255:
            self._hue_cache[key] = (np.empty(0, np.intp), np.empty(0))
            return self._hue_cache[key]
        ok = self.maxc >= np.uint8(vt)
        if sat_min > 0.0:
            ok &= self.delta.astype(np.float32) >= np.float32(sat_min) * self.maxc.astype(np.float32)
        idx = np.flatnonzero(ok.ravel())
        if idx.size:
            hues = _hue_degrees(
                self.r.ravel()[idx].astype(np.float64),
                self.g.ravel()[idx].astype(np.float64),
                self.b.ravel()[idx].astype(np.float64),
                self.maxc.ravel()[idx].astype(np.float64),
                self.delta.ravel()[idx].astype(np.float64),
            )
        else:
            hues = np.empty(0)
        self._hue_cache[key] = (idx, hues)
        return idx, hues

    def threshold(self, hue_lo: float, hue_hi: float, sat_min: float,
                  val_min: float) -> np.ndarray:
        """Boolean map of pixels inside the inclusive HSV ranges.

        A hue range with lo > hi wraps through 360 (e.g. reds).
        """
        out = np.zeros(self.pixels.shape[:2], bool)
        idx, hues = self._candidates(sat_min, val_min)
        if idx.size == 0:
            return out
        if hue_lo <= hue_hi:
            in_range = (hues >= hue_lo) & (hues <= hue_hi)
        else:
            in_range = (hues >= hue_lo) | (hues <= hue_hi)
        out.ravel()[idx[in_range]] = True
        return out


def hsv_threshold(pixels: np.ndarray, hue_lo: float, hue_hi: float,
                  sat_min: float, val_min: float) -> np.ndarray:
    return FrameHSV(pixels).threshold(hue_lo, hue_hi, sat_min, val_min)


HIST_BINS = 16


def hue_histogram(pixels: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """L1-normalized 16-bin hue histogram of the masked pixels.

    Returns None for an empty mask. Works on the masked subset only,
    never on the full frame.
    """
    idx = np.flatnonzero(bits.ravel())
    if idx.size == 0:
        return None
    subset = pixels.reshape(-1, 3)[idx]
    rr = subset[:, 0].astype(np.float64)
    gg = subset[:, 1].astype(np.float64)
    bb = subset[:, 2].astype(np.float64)
    mx = np.maximum(np.maximum(rr, gg), bb)
    d = mx - np.minimum(np.minimum(rr, gg), bb)
    h = _hue_degrees(rr, gg, bb, mx, d)
    bins = np.minimum((h / (360.0 / HIST_BINS)).astype(np.intp), HIST_BINS - 1)
    hist = np.bincount(bins, minlength=HIST_BINS).astype(np.float64)
    return hist / hist.sum()


def histogram_similarity(a, b) -> float:
    """1 - L1/2 over two L1-normalized histograms; 0 when either is missing."""
    if a is None or b is None:
        return 0.0
    return float(1.0 - np.abs(a - b).sum() / 2.0)
