"""First-frame session initialization.

Turns a frame plus a task description into an initialized tracking
session: complex objects are located with detector prompts, simple
shapes and the gripper fingers are picked by an annotator from numbered
region proposals, and both kinds of seed are handed to the segmenter to
obtain the first per-entity masks. Only the first frame is ever
consumed here.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backends import (
    Annotator,
    Detector,
    SegmentHandle,
    Segmenter,
    group_entities,
)
from .core import BoundingBox, Frame, Keypoint, Mask, centroid
from .errors import (
    ConfigError,
    GripperUnresolvedError,
    InitTimeoutError,
    EmptyMaskError,
    PromptUnresolvedError,
    ProtocolError,
    ShapeError,
)

ARGMAX_SCORE = "argmax_score"
ANNOTATOR_SPATIAL = "annotator_spatial"


@dataclass(frozen=True)
class TaskSpec:
    """What to keep in the recomposed view.

    ``object_prompts`` go through the detector; the gripper (and any
    simple shapes the annotator labels) go through numbered region
    proposals.
    """

    object_prompts: tuple = ()
    gripper_prompt: str = ""
    task_prompt: str = ""
    disambiguation: str = ARGMAX_SCORE

    def __post_init__(self):
        object.__setattr__(self, "object_prompts", tuple(self.object_prompts))
        if not self.object_prompts and not self.gripper_prompt:
            raise ConfigError("task needs at least one object or gripper prompt")
        if self.disambiguation not in (ARGMAX_SCORE, ANNOTATOR_SPATIAL):
            raise ConfigError(f"unknown disambiguation mode {self.disambiguation!r}")
        if self.disambiguation == ANNOTATOR_SPATIAL and not self.task_prompt:
            raise ConfigError("annotator_spatial disambiguation needs a task prompt")

    def to_json(self) -> dict:
        return {
            "objects": list(self.object_prompts),
            "gripper": self.gripper_prompt,
            "task": self.task_prompt,
            "disambiguation": self.disambiguation,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TaskSpec":
        try:
            return cls(
                object_prompts=tuple(obj.get("objects", ())),
                gripper_prompt=str(obj.get("gripper", "")),
                task_prompt=str(obj.get("task", "")),
                disambiguation=str(obj.get("disambiguation", ARGMAX_SCORE)),
            )
        except TypeError as e:
            raise ConfigError(f"bad task spec: {e}") from e

    @classmethod
    def load(cls, path) -> "TaskSpec":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot load task spec from {path}: {e}") from e


# --- annotation rendering ----------------------------------------------------

# 5x7 bitmap digits, one string row per scanline
_FONT = {
    "0": ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    "1": ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    "2": ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    "3": ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    "4": ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    "5": ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    "6": ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    "7": ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    "8": ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    "9": ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}


@dataclass(frozen=True)
class AnnotatedFrame:
    """Frame with rendered numeric tags plus the tag anchor per region."""

    frame: Frame
    anchors: tuple  # ((region_index, Keypoint), ...)
    regions: tuple  # the region masks, 1-aligned with the indices


def _tag_scale(frame_height: int) -> int:
    target = max(12.0, frame_height / 45.0)
    return max(1, round(target / 7.0))


def _render_tag(text: str, scale: int):
    """(h, w) uint8 tag bitmap: 0 black, 255 digit; corner cells cut."""
    s = scale
    dw, dh = 5 * s, 7 * s
    w = len(text) * dw + (len(text) - 1) * s + 2 * s
    h = dh + 2 * s
    tag = np.zeros((h, w), np.uint8)
    paint = np.ones((h, w), bool)
    for corner in ((slice(0, s), slice(0, s)), (slice(0, s), slice(w - s, w)),
                   (slice(h - s, h), slice(0, s)), (slice(h - s, h), slice(w - s, w))):
        paint[corner] = False
    x = s
    for ch in text:
        rows = _FONT[ch]
        for ry, row in enumerate(rows):
            for rx, bit in enumerate(row):
                if bit == "1":
                    tag[s + ry * s : s + (ry + 1) * s, x + rx * s : x + (rx + 1) * s] = 255
        x += dw + s
    return tag, paint


def _rects_overlap(a, b) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def render_annotations(frame: Frame, regions: list) -> AnnotatedFrame:
    """Draw a numbered tag (white digits on a black rounded plate) at
    each region centroid.

    Numbering follows list order, starting at 1. Tags that would
    overlap an earlier tag shift down by one tag height until free.
    """
    if not regions:
        raise EmptyMaskError("no regions to annotate")
    shape = frame.pixels.shape[:2]
    for i, r in enumerate(regions):
        if r.bits.shape != shape:
            raise ShapeError(f"region {i + 1} shape {r.bits.shape} != frame {shape}")
        if r.empty:
            raise EmptyMaskError(f"region {i + 1} is empty")
    scale = _tag_scale(frame.height)
    out = np.array(frame.pixels)
    placed = []
    anchors = []
    for i, region in enumerate(regions, start=1):
        tag, paint = _render_tag(str(i), scale)
        th, tw = tag.shape
        c = centroid(region)
        x0 = min(max(c.x - tw // 2, 0), max(frame.width - tw, 0))
        y0 = min(max(c.y - th // 2, 0), max(frame.height - th, 0))
        guard = 0
        while any(_rects_overlap((x0, y0, x0 + tw, y0 + th), p) for p in placed):
            y0 += th
            guard += 1
            if y0 + th > frame.height or guard > len(regions):
                break
        placed.append((x0, y0, x0 + tw, y0 + th))
        x1, y1 = min(x0 + tw, frame.width), min(y0 + th, frame.height)
        sub = out[y0:y1, x0:x1]
        tag_c = tag[: y1 - y0, : x1 - x0]
        paint_c = paint[: y1 - y0, : x1 - x0]
        sub[paint_c] = np.stack([tag_c[paint_c]] * 3, axis=-1)
        anchors.append((i, Keypoint(x0 + tw // 2, y0 + th // 2, str(i))))
    return AnnotatedFrame(frame=Frame(out), anchors=tuple(anchors), regions=tuple(regions))


def _snap_into_region(point: Keypoint, region: Mask, label: str) -> Keypoint:
    """Nearest set pixel of the region (the anchor may sit outside it,
    either because the centroid falls in a hole or the tag was shifted)."""
    if region.bits[point.y, point.x]:
        return Keypoint(point.x, point.y, label)
    ys, xs = np.nonzero(region.bits)
    d2 = (xs - point.x) ** 2 + (ys - point.y) ** 2
    order = np.lexsort((xs, ys, d2))
    best = order[0]
    return Keypoint(int(xs[best]), int(ys[best]), label)


# --- selection ------------------------------------------------------------------

def select_keypoints(af: AnnotatedFrame, spec: TaskSpec, annotator: Annotator,
                     require_gripper: bool = True) -> list:
    """Ask the annotator for task-relevant numbered regions and emit one
    labeled keypoint per selection, placed inside the region's mask.

    The gripper needs both a "gripper-left" and a "gripper-right"
    selection; anything labeled "object:<name>" becomes an object
    keypoint.
    """
    count = len(af.anchors)
    selections = annotator.select_regions(af.frame, count, spec.task_prompt)
    roles = [s.role for s in selections]
    if len(roles) != len(set(roles)):
        raise ProtocolError("annotator returned duplicate roles")
    keypoints = []
    for sel in selections:
        if not 1 <= sel.index <= count:
            raise ProtocolError(f"region index {sel.index} out of range 1..{count}")
        _, anchor = af.anchors[sel.index - 1]
        region = af.regions[sel.index - 1]
        keypoints.append(_snap_into_region(anchor, region, sel.role))
    if require_gripper:
        have = {k.label for k in keypoints}
        missing = {"gripper-left", "gripper-right"} - have
        if missing:
            raise GripperUnresolvedError(
                f"annotator did not resolve {', '.join(sorted(missing))}"
            )
    return keypoints


def resolve_objects(frame: Frame, spec: TaskSpec, detector: Detector,
                    annotator: Annotator | None = None) -> list:
    """One bounding box per object prompt.

    argmax_score keeps the highest-scoring detection; annotator_spatial
    renders every candidate as a numbered box region (when there is
    more than one) and lets the annotator pick the task-relevant one.
    """
    if not spec.object_prompts:
        raise ConfigError("no object prompts to resolve")
    resolved = []
    for prompt in spec.object_prompts:
        boxes = sorted(detector.detect(frame, prompt), key=lambda b: -b.score)
        if not boxes:
            raise PromptUnresolvedError(prompt)
        if spec.disambiguation == ARGMAX_SCORE or len(boxes) == 1:
            resolved.append((prompt, boxes[0].clamped(frame.width, frame.height)))
            continue
        if annotator is None:
            raise ConfigError("annotator_spatial disambiguation needs an annotator")
        af = render_annotations(frame, [b.as_mask(frame.width, frame.height) for b in boxes])
        wanted = f"object:{prompt}"
        choice = None
        for sel in annotator.select_regions(af.frame, len(boxes), spec.task_prompt):
            if not 1 <= sel.index <= len(boxes):
                raise ProtocolError(f"region index {sel.index} out of range 1..{len(boxes)}")
            if sel.role == wanted:
                choice = boxes[sel.index - 1]
                break
        if choice is None:
            raise PromptUnresolvedError(prompt, f"annotator did not pick a box for {prompt!r}")
        resolved.append((prompt, choice.clamped(frame.width, frame.height)))
    return resolved


# --- whole initialization ----------------------------------------------------------

@dataclass
class SessionInit:
    """Result of first-frame initialization."""

    entities: list  # (role, prompt, seed) where seed is a box or keypoint tuple
    handle: SegmentHandle
    first_masks: list
    annotated: AnnotatedFrame | None = None
    spec: TaskSpec | None = None


def initialize_session(frame: Frame, spec: TaskSpec, detector: Detector,
                       segmenter: Segmenter, annotator: Annotator,
                       budget_s: float = 30.0) -> SessionInit:
    """Run the full first-frame flow and return the initialized session.

    Detector prompts resolve complex objects to boxes; unprompted
    proposals plus annotator selection resolve the gripper (and any
    simple objects) to keypoints; the segmenter is initialized with all
    seeds and queried once for the first-frame masks. Aborts with the
    specific unresolved identity, or with a timeout when the cumulative
    wall clock exceeds ``budget_s``.
    """
    deadline = time.monotonic() + budget_s if budget_s else None
    annotator = annotator.for_task(spec)

    def check(stage: str):
        if deadline is not None and time.monotonic() > deadline:
            raise InitTimeoutError(f"initialization budget exceeded during {stage}")

    resolved = []
    if spec.object_prompts:
        resolved = resolve_objects(frame, spec, detector, annotator)
        check("object detection")

    keypoints: list = []
    annotated = None
    if spec.gripper_prompt:
        proposals = segmenter.propose(frame)
        check("region proposals")
        if not proposals:
            raise GripperUnresolvedError("segmenter produced no region proposals")
        annotated = render_annotations(frame, proposals)
        keypoints = select_keypoints(annotated, spec, annotator, require_gripper=True)
        check("keypoint selection")

    boxes = [box for _, box in resolved]
    handle = segmenter.init_tracks(frame, boxes, keypoints)
    check("track initialization")
    first_masks = segmenter.propagate(handle, frame)
    check("first-frame masks")

    entities = [("object", prompt, box) for prompt, box in resolved]
    for desc, (kind, seed) in group_entities([], keypoints):
        prompt = spec.gripper_prompt if desc.role == "gripper" else desc.prompt
        entities.append((desc.role, prompt, tuple(seed)))
    if len(first_masks) != len(entities):
        raise ProtocolError(
            f"segmenter returned {len(first_masks)} masks for {len(entities)} entities"
        )
    return SessionInit(entities=entities, handle=handle, first_masks=first_masks,
                       annotated=annotated, spec=spec)
