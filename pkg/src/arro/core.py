"""Fundamental raster types and pixel-level operations.

Frames are dense 8-bit RGB rasters, masks are binary rasters aligned to
a frame. All types are immutable values after construction and every
operation is a pure function, so they are safe to share between any
number of concurrent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import EmptyMaskError, FormatError, ShapeError


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Frame:
    """Dense RGB raster; ``pixels`` has shape (height, width, 3), dtype uint8.

    The constructor takes ownership of a compatible buffer and marks it
    read-only; incompatible inputs are converted (copied).
    """

    pixels: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if p.ndim != 3 or p.shape[2] != 3 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ShapeError(f"frame pixels must be (h>=1, w>=1, 3), got {p.shape}")
        object.__setattr__(self, "pixels", _frozen(p))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def filled(cls, width: int, height: int, color=(0, 0, 0)) -> "Frame":
        p = np.empty((height, width, 3), np.uint8)
        p[:, :] = np.asarray(color, np.uint8)
        return cls(p)

    def same_shape(self, other: "Frame") -> bool:
        return self.pixels.shape == other.pixels.shape

    def __eq__(self, other):
        return isinstance(other, Frame) and np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"Frame({self.width}x{self.height})"


@dataclass(frozen=True, eq=False)
class Mask:
    """Binary raster; ``bits`` has shape (height, width), dtype bool."""

    bits: np.ndarray

    def __post_init__(self):
        b = self.bits
        if b.dtype != np.bool_:
            b = np.asarray(b)
            if not np.isin(b, (0, 1)).all():
                raise ShapeError("mask values must be 0 or 1")
            b = b.astype(bool)
        b = np.ascontiguousarray(b)
        if b.ndim != 2 or b.shape[0] < 1 or b.shape[1] < 1:
            raise ShapeError(f"mask bits must be (h>=1, w>=1), got {b.shape}")
        object.__setattr__(self, "bits", _frozen(b))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.bits))

    @property
    def empty(self) -> bool:
        return not self.bits.any()

    @classmethod
    def zeros(cls, width: int, height: int) -> "Mask":
        return cls(np.zeros((height, width), bool))

    @classmethod
    def ones(cls, width: int, height: int) -> "Mask":
        return cls(np.ones((height, width), bool))

    def __eq__(self, other):
        return isinstance(other, Mask) and np.array_equal(self.bits, other.bits)

    def __repr__(self):
        return f"Mask({self.width}x{self.height}, area={self.area})"


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box with a confidence score in [0, 1]."""

    x: int
    y: int
    w: int
    h: int
    score: float = 1.0

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ShapeError(f"box must be at least 1x1, got {self.w}x{self.h}")
        if not 0.0 <= self.score <= 1.0:
            raise ShapeError(f"box score must be in [0,1], got {self.score}")

    def clamped(self, width: int, height: int) -> "BoundingBox":
        """Clip the box so it lies fully inside a width x height frame."""
        x = min(max(self.x, 0), width - 1)
        y = min(max(self.y, 0), height - 1)
        w = min(max(self.w - (x - self.x), 1), width - x)
        h = min(max(self.h - (y - self.y), 1), height - y)
        return BoundingBox(x, y, w, h, self.score)

    def as_mask(self, width: int, height: int) -> Mask:
        bits = np.zeros((height, width), bool)
        c = self.clamped(width, height)
        bits[c.y : c.y + c.h, c.x : c.x + c.w] = True
        return Mask(bits)


@dataclass(frozen=True)
class Keypoint:
    """A labeled pixel coordinate (e.g. "gripper-left")."""

    x: int
    y: int
    label: str = ""


@dataclass(frozen=True)
class RleMask:
    """Run-length encoded mask: alternating run lengths, zero-run first."""

    width: int
    height: int
    runs: tuple

    def __post_init__(self):
        object.__setattr__(self, "runs", tuple(int(r) for r in self.runs))
        if any(r < 0 for r in self.runs):
            raise FormatError("run lengths must be non-negative")

    def to_json(self) -> dict:
        return {"w": self.width, "h": self.height, "runs": list(self.runs)}

    @classmethod
    def from_json(cls, obj: dict) -> "RleMask":
        try:
            return cls(int(obj["w"]), int(obj["h"]), tuple(obj["runs"]))
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"bad RLE payload: {e}") from e


def _check_same_shape(a, b):
    if a.bits.shape != b.bits.shape:
        raise ShapeError(f"mask dimensions differ: {a.bits.shape} vs {b.bits.shape}")


def union(a: Mask, b: Mask) -> Mask:
    """Per-pixel OR of two equally sized masks."""
    _check_same_shape(a, b)
    return Mask(a.bits | b.bits)


def iou(a: Mask, b: Mask) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    _check_same_shape(a, b)
    inter = np.count_nonzero(a.bits & b.bits)
    uni = np.count_nonzero(a.bits | b.bits)
    if uni == 0:
        return 1.0
    return inter / uni


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def centroid(m: Mask) -> Keypoint:
    """Mean coordinate of the set pixels, rounded half-up per axis."""
    ys, xs = np.nonzero(m.bits)
    if xs.size == 0:
        raise EmptyMaskError("centroid of an empty mask")
    return Keypoint(_round_half_up(float(xs.mean())), _round_half_up(float(ys.mean())))


def bbox_of(m: Mask) -> BoundingBox:
    """Tightest axis-aligned box containing every set pixel."""
    ys, xs = np.nonzero(m.bits)
    if xs.size == 0:
        raise EmptyMaskError("bounding box of an empty mask")
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    return BoundingBox(x0, y0, x1 - x0 + 1, y1 - y0 + 1, 1.0)


def connected_components(m: Mask, min_area: int = 1) -> list:
    """4-connected components of ``m``, each returned as a full-size Mask.

    Components smaller than ``min_area`` pixels are dropped. Output is
    ordered by descending area; ties broken by the first set pixel in
    row-major order.
    """
    if min_area < 1:
        raise ValueError("min_area must be >= 1")
    count, labels, stats, _ = cv2.connectedComponentsWithStats(
        m.bits.view(np.uint8), connectivity=4, ltype=cv2.CV_32S)
    if count <= 1:
        return []
    keep = [k for k in range(1, count) if stats[k, cv2.CC_STAT_AREA] >= min_area]
    windows, first_idx = {}, {}
    for k in keep:
        x, y, w, h = (int(stats[k, s]) for s in (cv2.CC_STAT_LEFT, cv2.CC_STAT_TOP,
                                                 cv2.CC_STAT_WIDTH, cv2.CC_STAT_HEIGHT))
        sl = (slice(y, y + h), slice(x, x + w))
        window = labels[sl] == k
        windows[k] = (sl, window)
        local_y, local_x = divmod(int(np.argmax(window)), window.shape[1])
        first_idx[k] = (y + local_y) * m.width + x + local_x
    keep.sort(key=lambda k: (-int(stats[k, cv2.CC_STAT_AREA]), first_idx[k]))
    out = []
    for k in keep:
        bits = np.zeros(m.bits.shape, bool)
        sl, window = windows[k]
        bits[sl] = window
        out.append(Mask(bits))
    return out


def encode_rle(m: Mask) -> RleMask:
    """Run-length encode; canonical form starts with a (possibly 0) zero-run."""
    flat = m.bits.ravel()
    n = flat.size
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [n]))
    runs = (ends - starts).tolist()
    if flat[0]:
        runs = [0] + runs
    return RleMask(m.width, m.height, tuple(runs))


def decode_rle(r: RleMask) -> Mask:
    """Inverse of :func:`encode_rle`; rejects runs that do not cover w*h."""
    total = sum(r.runs)
    if total != r.width * r.height:
        raise FormatError(
            f"runs cover {total} pixels, mask is {r.width}x{r.height}"
        )
    runs = np.asarray(r.runs, np.int64)
    values = (np.arange(runs.size) % 2).astype(bool)
    flat = np.repeat(values, runs)
    return Mask(flat.reshape(r.height, r.width))


# --- resizing -------------------------------------------------------------

RESIZE_FILTERS = ("nearest", "bilinear", "lanczos3")


def _bilinear_kernel(d: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, 1.0 - np.abs(d))


def _lanczos3_kernel(d: np.ndarray) -> np.ndarray:
    out = np.sinc(d) * np.sinc(d / 3.0)
    out[np.abs(d) >= 3.0] = 0.0
    return out


def _reflect_indices(idx: np.ndarray, n: int) -> np.ndarray:
    # mirror without repeating the edge sample: -1 -> 0, n -> n-1
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - 1 - idx, idx)


def _resample_weights(n_in: int, n_out: int, support: float, kernel) -> np.ndarray:
    """Dense (n_out, n_in) row-normalized weight matrix, reflected edges."""
    scale = n_in / n_out
    fscale = max(scale, 1.0)
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    radius = support * fscale
    w = np.zeros((n_out, n_in))
    for i, c in enumerate(centers):
        taps = np.arange(math.ceil(c - radius), math.floor(c + radius) + 1)
        weights = kernel((taps - c) / fscale)
        cols = _reflect_indices(taps, n_in)
        np.add.at(w[i], cols, weights)
        w[i] /= w[i].sum()
    return w


def resize_frame(f: Frame, width: int, height: int, filter: str = "bilinear") -> Frame:
    """Resample a frame to (width, height) with the named filter.

    ``lanczos3`` uses a radius-3 kernel; out-of-range samples reflect at
    the edges and channel values are clamped to [0, 255] before
    half-up rounding.
    """
    if width < 1 or height < 1:
        raise ValueError("target dimensions must be >= 1")
    if filter not in RESIZE_FILTERS:
        raise ValueError(f"unknown filter {filter!r}; expected one of {RESIZE_FILTERS}")
    src = f.pixels
    h_in, w_in = src.shape[:2]
    if filter == "nearest":
        xs = np.minimum(np.floor((np.arange(width) + 0.5) * (w_in / width)).astype(int), w_in - 1)
        ys = np.minimum(np.floor((np.arange(height) + 0.5) * (h_in / height)).astype(int), h_in - 1)
        return Frame(src[np.ix_(ys, xs)])
    support, kernel = (1.0, _bilinear_kernel) if filter == "bilinear" else (3.0, _lanczos3_kernel)
    wx = _resample_weights(w_in, width, support, kernel)
    wy = _resample_weights(h_in, height, support, kernel)
    tmp = np.tensordot(wy, src.astype(np.float64), axes=(1, 0))  # (height, w_in, 3)
    out = np.tensordot(wx, tmp, axes=(1, 1)).transpose(1, 0, 2)  # (height, width, 3)
    out = np.clip(out, 0.0, 255.0)
    return Frame(np.floor(out + 0.5).astype(np.uint8))
