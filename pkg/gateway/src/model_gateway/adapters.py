"""Live-mode model adapters.

Three roles, each with a small interface and a registry of named
implementations. Every adapter validates its model availability at
startup via :meth:`validate`, so a misconfigured gateway fails before
binding the socket instead of on the first request. The ``chroma``
adapters are fully offline classical-CV implementations, useful for
smoke tests and latency-critical deployments; the heavyweight entries
wire up well-known zero-shot models when their packages (and, for the
annotator, an API key) are present.
"""

from __future__ import annotations

import importlib
import json
import os
import urllib.request
from abc import ABC, abstractmethod

import cv2
import numpy as np


class ModelUnavailable(Exception):
    """The configured model cannot serve; answered with HTTP 503."""


class DetectorAdapter(ABC):
    def validate(self) -> None:
        pass

    @abstractmethod
    def detect(self, image: np.ndarray, prompt: str) -> list:
        """[(x, y, w, h, score)] sorted by descending score."""


class SegmenterAdapter(ABC):
    def validate(self) -> None:
        pass

    @abstractmethod
    def propose(self, image: np.ndarray) -> list:
        """Unprompted region proposal masks (bool arrays)."""

    @abstractmethod
    def init(self, image: np.ndarray, boxes: list, points: list):
        """Per-session memory object for the prompted entities."""

    @abstractmethod
    def step(self, memory, image: np.ndarray) -> list:
        """One bool mask per entity, updating the memory in place."""


class AnnotatorAdapter(ABC):
    prompt_version = "none/0"

    def validate(self) -> None:
        pass

    @abstractmethod
    def select(self, image: np.ndarray, region_count: int, task_prompt: str) -> list:
        """[(region index, role)] selections."""


# --- classical offline adapters ---------------------------------------------------

DEFAULT_COLORS = {
    "green": (90.0, 150.0),
    "blue": (200.0, 260.0),
    "red": (330.0, 30.0),
    "yellow": (35.0, 85.0),
}


def _color_mask(image: np.ndarray, hue_lo: float, hue_hi: float,
                sat_min: int = 90, val_min: int = 50) -> np.ndarray:
    hsv = cv2.cvtColor(image, cv2.COLOR_RGB2HSV_FULL)
    h = hsv[:, :, 0].astype(np.float32) * (360.0 / 256.0)
    ok = (hsv[:, :, 1] >= sat_min) & (hsv[:, :, 2] >= val_min)
    if hue_lo <= hue_hi:
        ok &= (h >= hue_lo) & (h <= hue_hi)
    else:
        ok &= (h >= hue_lo) | (h <= hue_hi)
    return ok


def _components(bits: np.ndarray, min_area: int) -> list:
    count, labels, stats, _ = cv2.connectedComponentsWithStats(
        bits.view(np.uint8), connectivity=4, ltype=cv2.CV_32S)
    comps = []
    for k in range(1, count):
        if stats[k, cv2.CC_STAT_AREA] >= min_area:
            comps.append((labels == k, int(stats[k, cv2.CC_STAT_AREA]),
                          (int(stats[k, cv2.CC_STAT_LEFT]), int(stats[k, cv2.CC_STAT_TOP]))))
    comps.sort(key=lambda c: (-c[1], c[2][1], c[2][0]))
    return comps


class ChromaDetector(DetectorAdapter):
    def __init__(self, options: dict | None = None):
        opts = options or {}
        self.colors = {name: tuple(rng) for name, rng in
                       opts.get("colors", DEFAULT_COLORS).items()}
        self.min_area = int(opts.get("min_area", 16))

    def detect(self, image, prompt):
        low = prompt.lower()
        color = next((rng for name, rng in self.colors.items() if name in low), None)
        if color is None:
            return []
        comps = _components(_color_mask(image, *color), self.min_area)
        total = sum(area for _, area, _ in comps) or 1
        boxes = []
        for bits, area, _ in comps:
            ys, xs = np.nonzero(bits)
            boxes.append((int(xs.min()), int(ys.min()),
                          int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1),
                          area / total))
        return boxes


class _ChromaMemory:
    def __init__(self, entities):
        self.entities = entities  # per entity: {"color", "mask" or None, "parts"}


class ChromaSegmenter(SegmenterAdapter):
    """Color tracking with nearest-overlap association per entity."""

    def __init__(self, options: dict | None = None):
        opts = options or {}
        self.colors = {name: tuple(rng) for name, rng in
                       opts.get("colors", DEFAULT_COLORS).items()}
        self.min_area = int(opts.get("min_area", 16))

    def propose(self, image):
        masks = []
        for color in self.colors.values():
            masks.extend(bits for bits, _, _ in
                         _components(_color_mask(image, *color), self.min_area))
        return masks

    def _bind_color(self, image, seed_bits):
        best, best_cover = None, 0
        for name, rng in self.colors.items():
            cover = int(np.count_nonzero(_color_mask(image, *rng) & seed_bits))
            if cover > best_cover:
                best, best_cover = name, cover
        return best

    def init(self, image, boxes, points):
        h, w = image.shape[:2]
        entities = []
        for x, y, bw, bh, _ in boxes:
            seed = np.zeros((h, w), bool)
            seed[max(0, y): y + bh, max(0, x): x + bw] = True
            color = self._bind_color(image, seed)
            if color is None:
                raise ModelUnavailable("no color class covers a box prompt")
            comps = _components(_color_mask(image, *self.colors[color]) & seed, 1)
            entities.append({"color": color, "mask": comps[0][0] if comps else None})
        lefts = [i for i, p in enumerate(points) if p[2] == "gripper-left"]
        rights = [i for i, p in enumerate(points) if p[2] == "gripper-right"]
        paired = list(zip(lefts, rights))
        used = {i for pair in paired for i in pair}
        groups = [(min(li, ri), [points[li], points[ri]]) for li, ri in paired]
        groups += [(i, [p]) for i, p in enumerate(points) if i not in used]
        groups.sort(key=lambda g: g[0])
        for _, pts in groups:
            seed = np.zeros((h, w), bool)
            for x, y, _ in pts:
                if 0 <= y < h and 0 <= x < w:
                    seed[y, x] = True
            color = self._bind_color(image, seed)
            if color is None:
                raise ModelUnavailable("no color class covers a point prompt")
            cmask = _color_mask(image, *self.colors[color])
            bits = np.zeros((h, w), bool)
            for comp, _, _ in _components(cmask, 1):
                if (comp & seed).any():
                    bits |= comp
            entities.append({"color": color, "mask": bits})
        return _ChromaMemory(entities)

    def step(self, memory, image):
        h, w = image.shape[:2]
        per_color = {}
        out = []
        for ent in memory.entities:
            color = ent["color"]
            if color not in per_color:
                per_color[color] = _components(
                    _color_mask(image, *self.colors[color]), self.min_area)
            comps = per_color[color]
            prev = ent["mask"]
            bits = np.zeros((h, w), bool)
            if prev is not None and prev.any():
                for comp, _, _ in comps:
                    if (comp & prev).any():
                        bits |= comp
            if bits.any():
                ent["mask"] = bits
            out.append(bits)
        return out


class ChromaAnnotator(AnnotatorAdapter):
    prompt_version = "chroma/1"

    def __init__(self, options: dict | None = None):
        opts = options or {}
        self.colors = {name: tuple(rng) for name, rng in
                       opts.get("colors", DEFAULT_COLORS).items()}
        self.gripper_color = opts.get("gripper_color", "green")
        self.min_area = int(opts.get("min_area", 16))

    def select(self, image, region_count, task_prompt):
        items = []
        for name, rng in self.colors.items():
            for bits, area, first in _components(_color_mask(image, *rng), self.min_area):
                items.append((name, bits, area, first))
        items.sort(key=lambda it: (-it[2], it[3][1], it[3][0]))
        items = items[:region_count]
        selections = []
        fingers = [(i, bits) for i, (name, bits, _, _) in enumerate(items)
                   if name == self.gripper_color][:2]

        def center_x(bits):
            return float(np.nonzero(bits)[1].mean())

        fingers.sort(key=lambda ib: center_x(ib[1]))
        for (i, _), role in zip(fingers, ("gripper-left", "gripper-right")):
            selections.append((i + 1, role))
        return selections


# --- heavyweight zero-shot adapters --------------------------------------------------

class GroundingDinoDetector(DetectorAdapter):
    """Open-vocabulary detection through the transformers zero-shot
    object-detection pipeline."""

    def __init__(self, options: dict | None = None):
        opts = options or {}
        self.model_id = opts.get("detector_model", "IDEA-Research/grounding-dino-tiny")
        self.threshold = float(opts.get("detector_threshold", 0.3))
        self._pipe = None

    def validate(self):
        try:
            transformers = importlib.import_module("transformers")
            self._pipe = transformers.pipeline(
                "zero-shot-object-detection", model=self.model_id)
        except Exception as e:
            raise ModelUnavailable(
                f"cannot load detector {self.model_id!r}: {e}") from e

    def detect(self, image, prompt):
        if self._pipe is None:
            self.validate()
        results = self._pipe(image, candidate_labels=[prompt],
                             threshold=self.threshold)
        boxes = []
        for r in results:
            b = r["box"]
            boxes.append((int(b["xmin"]), int(b["ymin"]),
                          int(b["xmax"] - b["xmin"]), int(b["ymax"] - b["ymin"]),
                          float(r["score"])))
        boxes.sort(key=lambda b: -b[4])
        return boxes


class Sam2Segmenter(SegmenterAdapter):
    """Promptable video segmentation with streaming memory.

    Requires the ``sam2`` package and a checkpoint path in the model
    options; kept import-guarded so configuration errors surface at
    startup.
    """

    def __init__(self, options: dict | None = None):
        self.options = options or {}

    def validate(self):
        try:
            importlib.import_module("sam2")
        except ImportError as e:
            raise ModelUnavailable(
                "segmenter 'sam2' needs the sam2 package and a checkpoint "
                f"(set model_options.sam2_checkpoint): {e}") from e
        if "sam2_checkpoint" not in self.options:
            raise ModelUnavailable("model_options.sam2_checkpoint not configured")

    def propose(self, image):
        raise ModelUnavailable("sam2 adapter not loaded")

    def init(self, image, boxes, points):
        raise ModelUnavailable("sam2 adapter not loaded")

    def step(self, memory, image):
        raise ModelUnavailable("sam2 adapter not loaded")


_VLM_PROMPT_VERSION = "numbered-regions/1"
_VLM_TEMPLATE = (
    "The image shows a robot workspace where every segmented region is "
    "marked with a white number on a black tag. Task: {task}. Identify the "
    "regions for the two robot gripper fingers and any object the task "
    "names. Answer with a JSON list of objects like "
    '{{"index": <region number>, "role": "gripper-left"|"gripper-right"|'
    '"object:<name>"}} and nothing else. There are {count} regions.'
)


class OpenAIVisionAnnotator(AnnotatorAdapter):
    """Region selection via an OpenAI-compatible chat completions API."""

    prompt_version = _VLM_PROMPT_VERSION

    def __init__(self, options: dict | None = None):
        opts = options or {}
        self.model = opts.get("annotator_model", "gpt-4o")
        self.base_url = opts.get("annotator_base_url", "https://api.openai.com/v1")
        self.template = opts.get("annotator_template", _VLM_TEMPLATE)
        self.api_key = opts.get("annotator_api_key") or os.environ.get("OPENAI_API_KEY")

    def validate(self):
        if not self.api_key:
            raise ModelUnavailable(
                "annotator 'gpt-4o' needs OPENAI_API_KEY or model_options.annotator_api_key")

    def select(self, image, region_count, task_prompt):
        import base64

        ok, buf = cv2.imencode(".png", image[:, :, ::-1])
        if not ok:
            raise ModelUnavailable("could not encode image for the annotator")
        body = {
            "model": self.model,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text",
                     "text": self.template.format(task=task_prompt, count=region_count)},
                    {"type": "image_url",
                     "image_url": {"url": "data:image/png;base64,"
                                          + base64.b64encode(buf.tobytes()).decode()}},
                ],
            }],
        }
        req = urllib.request.Request(
            self.base_url.rstrip("/") + "/chat/completions",
            data=json.dumps(body).encode(),
            headers={"Content-Type": "application/json",
                     "Authorization": f"Bearer {self.api_key}"})
        try:
            with urllib.request.urlopen(req, timeout=60) as resp:
                payload = json.loads(resp.read())
            text = payload["choices"][0]["message"]["content"]
            selections = json.loads(text)
            return [(int(s["index"]), str(s["role"])) for s in selections]
        except Exception as e:
            raise ModelUnavailable(f"annotator call failed: {e}") from e


DETECTORS = {"chroma": ChromaDetector, "grounding-dino": GroundingDinoDetector}
SEGMENTERS = {"chroma": ChromaSegmenter, "sam2": Sam2Segmenter}
ANNOTATORS = {"chroma": ChromaAnnotator, "gpt-4o": OpenAIVisionAnnotator}


def build_adapters(models: dict, options: dict):
    """Instantiate and validate one adapter per role."""
    registries = {"detector": DETECTORS, "segmenter": SEGMENTERS,
                  "annotator": ANNOTATORS}
    built = {}
    for role, registry in registries.items():
        name = models[role]
        if name not in registry:
            raise ModelUnavailable(
                f"unknown {role} {name!r}; known: {sorted(registry)}")
        adapter = registry[name](options)
        adapter.validate()
        built[role] = adapter
    return built["detector"], built["segmenter"], built["annotator"]
