"""Virtual background synthesis and scene recomposition.

The retained regions of each frame (the union of all entity masks) are
overlaid onto a deterministic background: plain black or a colored
grid. The background is a pure function of its spec and the frame
size, so the exact same backdrop is reproducible across training and
inference runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage

from .backends import SegmentHandle, Segmenter
from .core import Frame, Mask
from .errors import ConfigError, ShapeError, StateError
from .init_pipeline import SessionInit
from .tracker import SessionState, TrackerConfig, init_state, observe

BACKGROUND_KINDS = ("black", "grid")

DEFAULT_PALETTE = (
    (70, 130, 180),   # steel blue
    (180, 120, 60),   # ochre
    (120, 60, 160),   # violet
    (200, 200, 200),  # light gray
)


@dataclass(frozen=True)
class BackgroundSpec:
    """Deterministic backdrop: plain fill or a colored line grid."""

    kind: str = "black"
    cell: int = 40
    line_width: int = 2
    palette: tuple = DEFAULT_PALETTE
    base: tuple = (0, 0, 0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "palette", tuple(tuple(c) for c in self.palette))
        object.__setattr__(self, "base", tuple(self.base))
        if self.kind not in BACKGROUND_KINDS:
            raise ConfigError(f"unknown background kind {self.kind!r}")
        if not self.palette:
            raise ConfigError("palette must not be empty")
        if not self.cell > self.line_width >= 1:
            raise ConfigError("need cell > line_width >= 1")

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "cell": self.cell,
            "line_width": self.line_width,
            "palette": [list(c) for c in self.palette],
            "base": list(self.base),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BackgroundSpec":
        base = cls()
        try:
            return cls(
                kind=str(obj.get("kind", base.kind)),
                cell=int(obj.get("cell", base.cell)),
                line_width=int(obj.get("line_width", base.line_width)),
                palette=tuple(tuple(int(v) for v in c)
                              for c in obj.get("palette", base.palette)),
                base=tuple(int(v) for v in obj.get("base", base.base)),
                seed=int(obj.get("seed", base.seed)),
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad background spec: {e}") from e


@dataclass(frozen=True)
class RecomposeConfig:
    background: BackgroundSpec = field(default_factory=BackgroundSpec)
    dilate: int = 0

    def __post_init__(self):
        if self.dilate < 0:
            raise ConfigError("dilate radius must be >= 0")

    def to_json(self) -> dict:
        return {"background": self.background.to_json(), "dilate": self.dilate}

    @classmethod
    def from_json(cls, obj: dict) -> "RecomposeConfig":
        return cls(
            background=BackgroundSpec.from_json(obj.get("background", {})),
            dilate=int(obj.get("dilate", 0)),
        )

    @classmethod
    def load(cls, path) -> "RecomposeConfig":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot load recompose config from {path}: {e}") from e


def make_background(spec: BackgroundSpec, width: int, height: int) -> Frame:
    """Render the backdrop for a frame size; same inputs, same bytes.

    Grid lines start at pixel 0 and repeat every ``cell`` pixels,
    horizontal lines first (top to bottom) then vertical (left to
    right); colors cycle through the palette starting at
    seed mod len(palette).
    """
    arr = np.empty((height, width, 3), np.uint8)
    arr[:, :] = np.asarray(spec.base, np.uint8)
    if spec.kind == "grid":
        phase = spec.seed % len(spec.palette)
        ordinal = 0
        for y in range(0, height, spec.cell):
            color = spec.palette[(phase + ordinal) % len(spec.palette)]
            arr[y : y + spec.line_width, :] = color
            ordinal += 1
        for x in range(0, width, spec.cell):
            color = spec.palette[(phase + ordinal) % len(spec.palette)]
            arr[:, x : x + spec.line_width] = color
            ordinal += 1
    return Frame(arr)


def composite(frame: Frame, mask: Mask, background: Frame) -> Frame:
    """Keep masked source pixels, take everything else from the background.

    Bit-exact per pixel: the output value is either the frame's or the
    background's, never a blend.
    """
    if frame.pixels.shape != background.pixels.shape:
        raise ShapeError(
            f"frame {frame.pixels.shape} vs background {background.pixels.shape}"
        )
    if mask.bits.shape != frame.pixels.shape[:2]:
        raise ShapeError(f"mask {mask.bits.shape} vs frame {frame.pixels.shape[:2]}")
    out = background.pixels.copy()
    cv2.copyTo(frame.pixels, mask.bits.view(np.uint8), out)
    return Frame(out)


def _disc(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (xx * xx + yy * yy) <= r * r


def dilate_mask(mask: Mask, radius: int) -> Mask:
    """Morphological dilation by a Euclidean disc of the given radius."""
    if radius <= 0:
        return mask
    return Mask(ndimage.binary_dilation(mask.bits, structure=_disc(radius)))


@dataclass
class MaskingSession:
    """Per-stream recomposition state: tracking memory, segmenter handle,
    cached background, and the not-yet-emitted first-frame masks."""

    state: SessionState
    handle: SegmentHandle
    cfg: RecomposeConfig
    background: Frame | None = None
    pending: list | None = None
    last_masks: list | None = None  # per-entity masks of the latest frame


def start_session(init: SessionInit, first_frame: Frame, cfg: RecomposeConfig,
                  tracker_cfg: TrackerConfig | None = None) -> MaskingSession:
    """Wrap an initialized session for frame-by-frame recomposition.

    The first call to :func:`mask_frame` must pass the same first frame
    again; it consumes the initialization masks instead of asking the
    segmenter, so the peer sees every frame exactly once.
    """
    descriptors = [(role, prompt) for role, prompt, _ in init.entities]
    state = init_state(descriptors, init.first_masks, first_frame, tracker_cfg)
    return MaskingSession(state=state, handle=init.handle, cfg=cfg,
                          pending=list(init.first_masks))


def mask_frame(session: MaskingSession, frame: Frame, segmenter: Segmenter) -> Frame:
    """Obtain per-entity masks for the frame, union them, and composite
    onto the cached background. Updates the session in place."""
    if not session.state.entities:
        raise StateError("session has no entities")
    if session.pending is not None:
        masks = session.pending
        session.pending = None
    else:
        masks = segmenter.propagate(session.handle, frame)
        observe(session.state, frame, masks, appearance=False)
    session.last_masks = masks
    bits = np.zeros(frame.pixels.shape[:2], bool)
    for m in masks:
        if m.bits.shape != bits.shape:
            raise ShapeError(f"mask {m.bits.shape} vs frame {bits.shape}")
        bits |= m.bits
    combined = Mask(bits)
    if session.cfg.dilate:
        combined = dilate_mask(combined, session.cfg.dilate)
    if session.background is None or session.background.pixels.shape != frame.pixels.shape:
        session.background = make_background(session.cfg.background,
                                             frame.width, frame.height)
    return composite(frame, combined, session.background)


def entity_statuses(session: MaskingSession) -> list:
    """[{"id", "role", "status"}] for every entity, in fixed order."""
    patience = session.state.config.occlusion_patience
    return [
        {"id": e.id, "role": e.role, "status": e.status(patience)}
        for e in session.state.entities
    ]
