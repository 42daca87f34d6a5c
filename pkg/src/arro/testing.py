"""Deterministic test doubles for the backend contracts.

``ScriptedGateway`` is an in-process implementation of the wire
protocol (used as a transport for :class:`arro.backends.RemoteBackend`)
with scripted responses and fault injection; the scripted detector and
annotator plug directly into the init pipeline.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass, field

from . import imageio
from .backends import Annotator, Detector, RegionSelection, group_entities
from .core import Keypoint, encode_rle
from .errors import FormatError


class ScriptedDetector(Detector):
    def __init__(self, results: dict):
        self.results = dict(results)  # prompt -> list of BoundingBox
        self.calls = []

    def detect(self, frame, prompt):
        self.calls.append(prompt)
        return sorted(self.results.get(prompt, []), key=lambda b: -b.score)


class ScriptedAnnotator(Annotator):
    def __init__(self, selections):
        self.selections = [RegionSelection(*s) if isinstance(s, tuple) else s
                           for s in selections]
        self.calls = []

    def select_regions(self, annotated_frame, region_count, task_prompt):
        self.calls.append((region_count, task_prompt))
        return list(self.selections)


@dataclass
class _Session:
    entities: list
    cursor: int = 0


@dataclass
class ScriptedGateway:
    """Scripted server side of the backend wire protocol, in process.

    Responses are configured per endpoint; requests are validated the
    same way a real peer would (400 malformed, 404 unknown session,
    503 while a path is marked unavailable).
    """

    detections: dict = field(default_factory=dict)  # prompt -> [box dict]
    proposals: list = field(default_factory=list)  # [Mask]
    track_masks: list = field(default_factory=list)  # per step: [Mask per entity]
    annotations: list = field(default_factory=list)  # [{"index","role"}]
    unavailable: set = field(default_factory=set)  # paths answering 503
    fail_once: dict = field(default_factory=dict)  # path -> remaining 503 count
    sessions: dict = field(default_factory=dict)
    calls: list = field(default_factory=list)
    _counter: int = 0

    def __call__(self, method: str, path: str, body):
        self.calls.append((method, path))
        if path in self.unavailable:
            return 503, {"error": "model unavailable"}
        if self.fail_once.get(path, 0) > 0:
            self.fail_once[path] -= 1
            return 503, {"error": "model warming up"}
        handler = {
            "/v1/detect": self._detect,
            "/v1/propose": self._propose,
            "/v1/track/init": self._init,
            "/v1/track/step": self._step,
            "/v1/track/close": self._close,
            "/v1/annotate": self._annotate,
        }.get(path)
        if handler is None or method != "POST":
            return 400, {"error": f"no such endpoint: {method} {path}"}
        try:
            return handler(body)
        except _Bad as e:
            return 400, {"error": str(e)}

    # -- handlers ------------------------------------------------------------

    def _detect(self, body):
        _require_image(body)
        if not isinstance(body.get("prompt"), str):
            raise _Bad("missing prompt")
        return 200, {"boxes": list(self.detections.get(body["prompt"], []))}

    def _propose(self, body):
        _require_image(body)
        return 200, {"masks": [encode_rle(m).to_json() for m in self.proposals]}

    def _init(self, body):
        _require_image(body)
        boxes = body.get("boxes")
        points = body.get("points")
        if not isinstance(boxes, list) or not isinstance(points, list):
            raise _Bad("boxes and points must be lists")
        try:
            from .core import BoundingBox

            box_objs = [BoundingBox(int(b["x"]), int(b["y"]), int(b["w"]),
                                    int(b["h"]), float(b.get("score", 1.0)))
                        for b in boxes]
            point_objs = [Keypoint(int(p["x"]), int(p["y"]), str(p["role"]))
                          for p in points]
        except (KeyError, TypeError, ValueError) as e:
            raise _Bad(f"bad prompt payload: {e}")
        groups = group_entities(box_objs, point_objs)
        if not groups:
            raise _Bad("no prompts given")
        self._counter += 1
        sid = f"s-{self._counter:04d}"
        labels = [f"{d.role}:{d.prompt}" if d.prompt else d.role for d, _ in groups]
        self.sessions[sid] = _Session(entities=labels)
        return 200, {"session": sid, "entities": labels}

    def _step(self, body):
        _require_image(body)
        sess = self.sessions.get(body.get("session"))
        if sess is None:
            return 404, {"error": "unknown session"}
        if not self.track_masks:
            raise _Bad("gateway has no scripted track masks")
        masks = self.track_masks[min(sess.cursor, len(self.track_masks) - 1)]
        sess.cursor += 1
        return 200, {"masks": [encode_rle(m).to_json() for m in masks]}

    def _close(self, body):
        if self.sessions.pop(body.get("session"), None) is None:
            return 404, {"error": "unknown session"}
        return 200, {}

    def _annotate(self, body):
        _require_image(body)
        if not isinstance(body.get("region_count"), int):
            raise _Bad("missing region_count")
        if not isinstance(body.get("task_prompt"), str):
            raise _Bad("missing task_prompt")
        return 200, {"selections": list(self.annotations)}


class _Bad(Exception):
    pass


def _require_image(body):
    if not isinstance(body, dict) or not isinstance(body.get("image"), str):
        raise _Bad("missing image")
    try:
        imageio.decode_png(base64.b64decode(body["image"], validate=True))
    except (FormatError, ValueError) as e:
        raise _Bad(f"undecodable image: {e}")
