"""Call contracts for the three model roles and their implementations.

Detector, Segmenter and Annotator mirror the capabilities of an
open-vocabulary detector, a promptable video segmenter with temporal
memory, and a vision-language region selector. Two families are
provided: a fully offline color-class backend (chroma thresholding plus
the tracker module) and an HTTP client speaking the backend wire
protocol. Contracts are single-session and sequential per handle;
distinct handles may run concurrently.
"""

from __future__ import annotations

import json
import time
import urllib.error
import urllib.request
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from . import imageio
from .colors import FrameHSV
from .core import BoundingBox, Frame, Keypoint, Mask, RleMask, bbox_of, centroid, connected_components, decode_rle
from .errors import (
    BackendError,
    ConfigError,
    FormatError,
    InitError,
    ProtocolError,
    SessionError,
)
from .tracker import TrackerConfig, init_state, step as tracker_step


# --- contracts --------------------------------------------------------------

@dataclass(frozen=True)
class EntityDescriptor:
    role: str  # "gripper" or "object"
    prompt: str


@dataclass(frozen=True)
class RegionSelection:
    index: int  # 1-based region number
    role: str  # "gripper-left" | "gripper-right" | "object:<name>"


@dataclass
class SegmentHandle:
    """Opaque per-session tracking handle; entity count is fixed at init."""

    entities: tuple
    token: object
    closed: bool = False


class Detector(ABC):
    @abstractmethod
    def detect(self, frame: Frame, prompt: str) -> list:
        """Boxes for a text prompt, sorted by descending score."""

    def describe(self) -> dict:
        return {"kind": type(self).__name__}


class Segmenter(ABC):
    @abstractmethod
    def propose(self, frame: Frame) -> list:
        """Unprompted region proposals for a frame."""

    @abstractmethod
    def init_tracks(self, frame: Frame, boxes: list, points: list) -> SegmentHandle:
        """Bind box and keypoint prompts to tracked entities."""

    @abstractmethod
    def propagate(self, handle: SegmentHandle, frame: Frame) -> list:
        """One (possibly empty) mask per entity, in initialization order."""

    def close(self, handle: SegmentHandle) -> None:
        handle.closed = True

    def describe(self) -> dict:
        return {"kind": type(self).__name__}


class Annotator(ABC):
    @abstractmethod
    def select_regions(self, annotated_frame: Frame, region_count: int,
                       task_prompt: str) -> list:
        """Pick task-relevant numbered regions from an annotated frame."""

    def for_task(self, task) -> "Annotator":
        """A task-specialized annotator; the default is task-agnostic."""
        return self

    def describe(self) -> dict:
        return {"kind": type(self).__name__}


@dataclass
class BackendBundle:
    detector: Detector
    segmenter: Segmenter
    annotator: Annotator

    def describe(self) -> dict:
        return {
            "detector": self.detector.describe(),
            "segmenter": self.segmenter.describe(),
            "annotator": self.annotator.describe(),
        }


# --- entity grouping ---------------------------------------------------------

GRIPPER_LEFT = "gripper-left"
GRIPPER_RIGHT = "gripper-right"
OBJECT_PREFIX = "object:"


def group_entities(boxes: list, points: list) -> list:
    """Canonical prompt-to-entity grouping shared with the wire protocol.

    Each box is one entity. A gripper-left/gripper-right keypoint pair
    forms ONE gripper entity (both fingers tracked as a single region);
    unpaired keypoints each form their own entity. Returns
    (EntityDescriptor, seed) tuples where seed is ("box", BoundingBox)
    or ("points", [Keypoint, ...]).
    """
    out = [(EntityDescriptor("object", ""), ("box", b)) for b in boxes]
    lefts = [i for i, p in enumerate(points) if p.label == GRIPPER_LEFT]
    rights = [i for i, p in enumerate(points) if p.label == GRIPPER_RIGHT]
    paired = list(zip(lefts, rights))
    used = {i for pair in paired for i in pair}
    groups = []
    for li, ri in paired:
        groups.append((min(li, ri), EntityDescriptor("gripper", "gripper"),
                       [points[li], points[ri]]))
    for i, p in enumerate(points):
        if i in used:
            continue
        if p.label.startswith(OBJECT_PREFIX):
            desc = EntityDescriptor("object", p.label[len(OBJECT_PREFIX):])
        elif p.label in (GRIPPER_LEFT, GRIPPER_RIGHT):
            desc = EntityDescriptor("gripper", p.label)
        else:
            desc = EntityDescriptor("object", p.label)
        groups.append((i, desc, [p]))
    groups.sort(key=lambda g: g[0])
    out.extend((d, ("points", pts)) for _, d, pts in groups)
    return out


# --- offline color-class backend ----------------------------------------------

@dataclass(frozen=True)
class ColorClass:
    """An HSV slice naming a visually distinct color (hue may wrap 360)."""

    name: str
    hue_lo: float
    hue_hi: float
    sat_min: float = 0.35
    val_min: float = 0.2

    def __post_init__(self):
        if not (0 <= self.hue_lo < 360 and 0 <= self.hue_hi < 360):
            raise ConfigError(f"hue bounds must be in [0,360), got {self.hue_lo},{self.hue_hi}")
        if not (0 <= self.sat_min <= 1 and 0 <= self.val_min <= 1):
            raise ConfigError("sat_min and val_min must be in [0,1]")

    def to_json(self) -> dict:
        return {"name": self.name, "hue": [self.hue_lo, self.hue_hi],
                "sat_min": self.sat_min, "val_min": self.val_min}

    @classmethod
    def from_json(cls, obj: dict) -> "ColorClass":
        try:
            lo, hi = obj["hue"]
            return cls(str(obj["name"]), float(lo), float(hi),
                       float(obj.get("sat_min", 0.35)), float(obj.get("val_min", 0.2)))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad color class: {e}") from e


DEFAULT_COLOR_CLASSES = (
    ColorClass("green", 90.0, 150.0),
    ColorClass("blue", 200.0, 260.0),
    ColorClass("red", 330.0, 30.0),
    ColorClass("yellow", 35.0, 85.0),
)


def chroma_components(frame: Frame, color: ColorClass, min_area: int,
                      hsv: FrameHSV | None = None) -> list:
    """Connected components of the HSV threshold map, smallest dropped.

    Pass a shared :class:`FrameHSV` when thresholding several classes
    against the same frame.
    """
    hsv = hsv if hsv is not None else FrameHSV(frame.pixels)
    raw = hsv.threshold(color.hue_lo, color.hue_hi, color.sat_min, color.val_min)
    return connected_components(Mask(raw), max(1, int(min_area)))


def chroma_segment(frame: Frame, color: ColorClass, min_area: int) -> Mask:
    """Pixels matching the color class, keeping components >= min_area."""
    comps = chroma_components(frame, color, min_area)
    bits = np.zeros(frame.pixels.shape[:2], bool)
    for c in comps:
        bits |= c.bits
    return Mask(bits)


def match_color_class(prompt: str, classes) -> ColorClass | None:
    """First class whose name appears in the prompt (case-insensitive)."""
    low = prompt.lower()
    for c in classes:
        if c.name.lower() in low:
            return c
    return None


class ChromaDetector(Detector):
    """Detector stand-in: boxes around color-class components.

    The prompt is matched against class names by substring; scores are
    each component's share of the total matched area, so the largest
    region ranks first.
    """

    def __init__(self, classes=DEFAULT_COLOR_CLASSES, min_area: int = 16):
        if not classes:
            raise ConfigError("at least one color class required")
        self.classes = tuple(classes)
        self.min_area = min_area

    def detect(self, frame: Frame, prompt: str) -> list:
        color = match_color_class(prompt, self.classes)
        if color is None:
            return []
        comps = chroma_components(frame, color, self.min_area)
        total = sum(c.area for c in comps)
        boxes = []
        for c in comps:
            b = bbox_of(c)
            boxes.append(BoundingBox(b.x, b.y, b.w, b.h, c.area / total))
        return boxes

    def describe(self) -> dict:
        return {"kind": "chroma-detector", "classes": [c.name for c in self.classes]}


class BuiltinSegmenter(Segmenter):
    """Offline segmenter: chroma proposals plus the in-package tracker.

    init binds every entity to the color class that best covers its
    seed (box interior pixels, or the components under its keypoints);
    propagate feeds the per-class components of each new frame to the
    tracker for greedy association.
    """

    def __init__(self, classes=DEFAULT_COLOR_CLASSES, min_area: int = 16,
                 tracker_config: TrackerConfig | None = None):
        if not classes:
            raise ConfigError("at least one color class required")
        self.classes = tuple(classes)
        self.min_area = min_area
        self.tracker_config = tracker_config or TrackerConfig()

    def _all_components(self, frame: Frame) -> list:
        hsv = FrameHSV(frame.pixels)
        items = []
        for color in self.classes:
            for comp in chroma_components(frame, color, self.min_area, hsv):
                items.append((color, comp))
        stats = [(c.area, int(np.flatnonzero(c.bits.ravel())[0])) for _, c in items]
        order = sorted(range(len(items)), key=lambda i: (-stats[i][0], stats[i][1]))
        return [items[i] for i in order]

    def propose(self, frame: Frame) -> list:
        return [comp for _, comp in self._all_components(frame)]

    def init_tracks(self, frame: Frame, boxes: list, points: list) -> SegmentHandle:
        groups = group_entities(boxes, points)
        if not groups:
            raise InitError("no box or keypoint prompts given")
        hsv = FrameHSV(frame.pixels)
        per_class = {c.name: chroma_components(frame, c, self.min_area, hsv)
                     for c in self.classes}
        descriptors, parts, bound = [], [], []
        for desc, (kind, seed) in groups:
            best = None  # (coverage, class, hit components)
            for color in self.classes:
                comps = per_class[color.name]
                if kind == "box":
                    b = seed.clamped(frame.width, frame.height)
                    window = (slice(b.y, b.y + b.h), slice(b.x, b.x + b.w))
                    hit = [c for c in comps if c.bits[window].any()]
                    coverage = sum(int(np.count_nonzero(c.bits[window])) for c in hit)
                else:
                    hit = [c for c in comps
                           if any(c.bits[p.y, p.x] for p in seed
                                  if 0 <= p.x < frame.width and 0 <= p.y < frame.height)]
                    # hit keypoints dominate, total area breaks ties
                    coverage = len(hit) * 10 ** 9 + sum(c.area for c in hit)
                if hit and (best is None or coverage > best[0]):
                    best = (coverage, color, hit)
            if best is None:
                raise InitError(f"no color class covers entity {desc.role}:{desc.prompt!r}")
            descriptors.append(desc)
            parts.append(best[2])
            bound.append(best[1])
        # multi-part entities (e.g. the two gripper fingers) are tracked as
        # one sub-track per seed component and unioned back at output
        sub_descriptors, sub_seeds, layout = [], [], []
        for desc, comps in zip(descriptors, parts):
            layout.append(len(comps))
            for c in comps:
                sub_descriptors.append((desc.role, desc.prompt))
                sub_seeds.append(c)
        state = init_state(sub_descriptors, sub_seeds, frame, self.tracker_config)
        distinct = []
        for c in bound:
            if c not in distinct:
                distinct.append(c)
        return SegmentHandle(entities=tuple(descriptors), token=(state, distinct, layout))

    def propagate(self, handle: SegmentHandle, frame: Frame) -> list:
        if handle.closed:
            raise SessionError("segment handle already closed")
        state, classes, layout = handle.token
        hsv = FrameHSV(frame.pixels)
        candidates = []
        for color in classes:
            candidates.extend(chroma_components(frame, color, self.min_area, hsv))
        _, sub_masks = tracker_step(state, frame, candidates)
        masks, cursor = [], 0
        for count in layout:
            bits = np.zeros(frame.pixels.shape[:2], bool)
            for m in sub_masks[cursor : cursor + count]:
                bits |= m.bits
            masks.append(Mask(bits))
            cursor += count
        return masks

    def describe(self) -> dict:
        return {"kind": "builtin-chroma", "classes": [c.name for c in self.classes],
                "min_area": self.min_area}


def builtin_tracker_backend(classes, min_area: int = 16,
                            tracker_config: TrackerConfig | None = None) -> BuiltinSegmenter:
    """Offline Segmenter over the given color classes."""
    return BuiltinSegmenter(classes, min_area, tracker_config)


class ColorClassAnnotator(Annotator):
    """Offline stand-in for a vision-language region selector.

    Re-derives the color-class proposal ordering from the annotated
    frame and selects the gripper finger pair (two largest regions of
    the gripper color, left/right by x) plus one region per requested
    object color. Valid for scenes of well-separated solid-color
    regions where the drawn number tags do not reorder region areas.
    """

    def __init__(self, classes=DEFAULT_COLOR_CLASSES, gripper_class: str | None = None,
                 object_roles: dict | None = None, min_area: int = 16):
        self.classes = tuple(classes)
        self.gripper_class = gripper_class
        self.object_roles = dict(object_roles or {})
        self.min_area = min_area

    def select_regions(self, annotated_frame: Frame, region_count: int,
                       task_prompt: str) -> list:
        helper = BuiltinSegmenter(self.classes, self.min_area)
        items = helper._all_components(annotated_frame)[:region_count]
        selections = []
        if self.gripper_class is not None:
            fingers = [(i, comp) for i, (color, comp) in enumerate(items)
                       if color.name == self.gripper_class][:2]
            fingers.sort(key=lambda ic: (centroid(ic[1]).x, centroid(ic[1]).y))
            roles = [GRIPPER_LEFT, GRIPPER_RIGHT]
            for (i, _), role in zip(fingers, roles):
                selections.append(RegionSelection(i + 1, role))
        for class_name, prompt in self.object_roles.items():
            for i, (color, _) in enumerate(items):
                if color.name == class_name:
                    selections.append(RegionSelection(i + 1, OBJECT_PREFIX + prompt))
                    break
        return selections

    def for_task(self, task) -> "ColorClassAnnotator":
        gripper_prompt = getattr(task, "gripper_prompt", "")
        if not gripper_prompt:
            return self
        color = match_color_class(gripper_prompt, self.classes)
        if color is None:
            raise ConfigError(
                f"gripper prompt {gripper_prompt!r} names no configured color class"
            )
        return ColorClassAnnotator(self.classes, color.name, self.object_roles,
                                   self.min_area)

    def describe(self) -> dict:
        return {"kind": "color-class-annotator", "gripper_class": self.gripper_class}


# --- wire protocol client --------------------------------------------------------

class HttpTransport:
    """Blocking JSON-over-HTTP transport for the backend wire protocol."""

    def __init__(self, base_url: str, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def __call__(self, method: str, path: str, body: dict | None):
        data = None if body is None else json.dumps(body).encode()
        req = urllib.request.Request(
            self.base_url + path, data=data, method=method,
            headers={"Content-Type": "application/json"},
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                raw = resp.read()
                status = resp.status
        except urllib.error.HTTPError as e:
            raw = e.read()
            status = e.code
        except (urllib.error.URLError, OSError) as e:
            raise BackendError(f"transport failure: {e}") from e
        if not raw:
            return status, {}
        try:
            return status, json.loads(raw)
        except json.JSONDecodeError as e:
            raise ProtocolError(f"non-JSON response (status {status}): {e}") from e


def _decode_wire_mask(obj: dict, frame: Frame) -> Mask:
    try:
        mask = decode_rle(RleMask.from_json(obj))
    except FormatError as e:
        raise ProtocolError(f"bad mask payload: {e}") from e
    if mask.bits.shape != frame.pixels.shape[:2]:
        raise ProtocolError(
            f"mask {mask.width}x{mask.height} does not match frame "
            f"{frame.width}x{frame.height}"
        )
    return mask


class RemoteBackend(Detector, Segmenter, Annotator):
    """Client for all three roles over the backend wire protocol.

    Transport failures and 503 answers are retried with exponential
    backoff (``retries`` additional attempts, first delay ``backoff``
    seconds); protocol violations are surfaced immediately.
    """

    def __init__(self, endpoint, retries: int = 3, backoff: float = 0.1,
                 timeout: float = 30.0):
        if callable(endpoint):
            self.transport = endpoint
            self.endpoint = getattr(endpoint, "base_url", "in-process")
        else:
            self.transport = HttpTransport(endpoint, timeout=timeout)
            self.endpoint = endpoint
        self.retries = retries
        self.backoff = backoff

    def _call(self, method: str, path: str, body: dict | None) -> dict:
        delay = self.backoff
        attempts = self.retries + 1
        last_error = None
        for attempt in range(attempts):
            try:
                status, payload = self.transport(method, path, body)
            except BackendError as e:
                last_error = e
                status, payload = None, None
            if status is not None:
                if status == 200:
                    return payload
                if status == 503:
                    last_error = BackendError(f"model unavailable at {path}")
                elif status == 404:
                    raise SessionError(str(payload.get("error", "unknown session")))
                elif status == 400:
                    raise ProtocolError(str(payload.get("error", "bad request")))
                else:
                    raise ProtocolError(f"unexpected status {status} at {path}")
            if attempt < attempts - 1:
                time.sleep(delay)
                delay *= 2
        raise last_error

    def detect(self, frame: Frame, prompt: str) -> list:
        payload = self._call("POST", "/v1/detect",
                             {"image": imageio.frame_to_base64(frame), "prompt": prompt})
        try:
            boxes = [
                BoundingBox(int(b["x"]), int(b["y"]), int(b["w"]), int(b["h"]),
                            float(b["score"])).clamped(frame.width, frame.height)
                for b in payload["boxes"]
            ]
        except (KeyError, TypeError, ValueError) as e:
            raise ProtocolError(f"bad detect payload: {e}") from e
        return sorted(boxes, key=lambda b: -b.score)

    def propose(self, frame: Frame) -> list:
        payload = self._call("POST", "/v1/propose",
                             {"image": imageio.frame_to_base64(frame)})
        try:
            raw = list(payload["masks"])
        except (KeyError, TypeError) as e:
            raise ProtocolError(f"bad propose payload: {e}") from e
        return [_decode_wire_mask(m, frame) for m in raw]

    def init_tracks(self, frame: Frame, boxes: list, points: list) -> SegmentHandle:
        body = {
            "image": imageio.frame_to_base64(frame),
            "boxes": [{"x": b.x, "y": b.y, "w": b.w, "h": b.h, "score": b.score}
                      for b in boxes],
            "points": [{"x": p.x, "y": p.y, "role": p.label} for p in points],
        }
        payload = self._call("POST", "/v1/track/init", body)
        descriptors = tuple(d for d, _ in group_entities(boxes, points))
        try:
            session = str(payload["session"])
            entities = list(payload["entities"])
        except (KeyError, TypeError) as e:
            raise ProtocolError(f"bad init payload: {e}") from e
        if len(entities) != len(descriptors):
            raise ProtocolError(
                f"peer initialized {len(entities)} entities, expected {len(descriptors)}"
            )
        return SegmentHandle(entities=descriptors, token=session)

    def propagate(self, handle: SegmentHandle, frame: Frame) -> list:
        if handle.closed:
            raise SessionError("segment handle already closed")
        payload = self._call("POST", "/v1/track/step",
                             {"session": handle.token,
                              "image": imageio.frame_to_base64(frame)})
        try:
            raw = list(payload["masks"])
        except (KeyError, TypeError) as e:
            raise ProtocolError(f"bad step payload: {e}") from e
        if len(raw) != len(handle.entities):
            raise ProtocolError(
                f"peer returned {len(raw)} masks for {len(handle.entities)} entities"
            )
        return [_decode_wire_mask(m, frame) for m in raw]

    def close(self, handle: SegmentHandle) -> None:
        if not handle.closed:
            self._call("POST", "/v1/track/close", {"session": handle.token})
            handle.closed = True

    def select_regions(self, annotated_frame: Frame, region_count: int,
                       task_prompt: str) -> list:
        payload = self._call("POST", "/v1/annotate",
                             {"image": imageio.frame_to_base64(annotated_frame),
                              "region_count": region_count,
                              "task_prompt": task_prompt})
        try:
            raw = [(int(s["index"]), str(s["role"])) for s in payload["selections"]]
        except (KeyError, TypeError, ValueError) as e:
            raise ProtocolError(f"bad annotate payload: {e}") from e
        roles = [r for _, r in raw]
        if len(roles) != len(set(roles)):
            raise ProtocolError("annotator returned duplicate roles")
        for index, _ in raw:
            if not 1 <= index <= region_count:
                raise ProtocolError(f"region index {index} out of range 1..{region_count}")
        return [RegionSelection(i, r) for i, r in raw]

    def describe(self) -> dict:
        return {"kind": "remote", "endpoint": self.endpoint}


def builtin_bundle(classes=DEFAULT_COLOR_CLASSES, min_area: int = 16,
                   tracker_config: TrackerConfig | None = None,
                   gripper_class: str | None = None,
                   object_roles: dict | None = None) -> BackendBundle:
    """All three roles backed by the offline color-class implementations."""
    return BackendBundle(
        detector=ChromaDetector(classes, min_area),
        segmenter=BuiltinSegmenter(classes, min_area, tracker_config),
        annotator=ColorClassAnnotator(classes, gripper_class, object_roles, min_area),
    )


def remote_bundle(endpoint, retries: int = 3, backoff: float = 0.1,
                  timeout: float = 30.0) -> BackendBundle:
    """All three roles served by one wire-protocol peer."""
    client = RemoteBackend(endpoint, retries=retries, backoff=backoff, timeout=timeout)
    return BackendBundle(detector=client, segmenter=client, annotator=client)
