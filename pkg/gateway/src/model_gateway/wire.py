"""Wire-format helpers: base64 PNG images and run-length masks."""

from __future__ import annotations

import base64

import cv2
import numpy as np


class BadRequest(Exception):
    """Client payload violates the protocol; answered with HTTP 400."""


def decode_image(b64: str) -> np.ndarray:
    """(h, w, 3) uint8 RGB from a base64 PNG string."""
    if not isinstance(b64, str):
        raise BadRequest("image must be a base64 string")
    try:
        raw = base64.b64decode(b64, validate=True)
    except Exception as e:
        raise BadRequest(f"invalid base64 image: {e}")
    if not raw:
        raise BadRequest("empty image payload")
    try:
        arr = cv2.imdecode(np.frombuffer(raw, np.uint8), cv2.IMREAD_COLOR)
    except cv2.error as e:
        raise BadRequest(f"undecodable image payload: {e}")
    if arr is None:
        raise BadRequest("undecodable image payload")
    return np.ascontiguousarray(arr[:, :, ::-1])


def mask_to_rle(bits: np.ndarray) -> dict:
    """{"w", "h", "runs"} with alternating runs, zero-run first."""
    flat = bits.astype(bool).ravel()
    n = flat.size
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [n]))
    runs = (ends - starts).tolist()
    if flat[0]:
        runs = [0] + runs
    return {"w": int(bits.shape[1]), "h": int(bits.shape[0]), "runs": runs}


def rle_to_mask(obj: dict) -> np.ndarray:
    try:
        w, h, runs = int(obj["w"]), int(obj["h"]), [int(r) for r in obj["runs"]]
    except (KeyError, TypeError, ValueError) as e:
        raise BadRequest(f"bad RLE payload: {e}")
    if any(r < 0 for r in runs) or sum(runs) != w * h:
        raise BadRequest("RLE runs do not cover the mask")
    values = (np.arange(len(runs)) % 2).astype(bool)
    return np.repeat(values, runs).reshape(h, w)


def parse_boxes(raw) -> list:
    if not isinstance(raw, list):
        raise BadRequest("boxes must be a list")
    boxes = []
    for b in raw:
        try:
            boxes.append((int(b["x"]), int(b["y"]), int(b["w"]), int(b["h"]),
                          float(b.get("score", 1.0))))
        except (KeyError, TypeError, ValueError) as e:
            raise BadRequest(f"bad box entry: {e}")
    return boxes


def parse_points(raw) -> list:
    if not isinstance(raw, list):
        raise BadRequest("points must be a list")
    points = []
    for p in raw:
        try:
            points.append((int(p["x"]), int(p["y"]), str(p["role"])))
        except (KeyError, TypeError, ValueError) as e:
            raise BadRequest(f"bad point entry: {e}")
    return points


def group_entity_labels(boxes: list, points: list) -> list:
    """Entity labels for an init request, matching the protocol's
    grouping rule: one entity per box; a gripper-left/right point pair
    is one entity; other points one each."""
    labels = ["object" for _ in boxes]
    lefts = [i for i, p in enumerate(points) if p[2] == "gripper-left"]
    rights = [i for i, p in enumerate(points) if p[2] == "gripper-right"]
    paired = list(zip(lefts, rights))
    used = {i for pair in paired for i in pair}
    entries = [(min(li, ri), "gripper") for li, ri in paired]
    for i, p in enumerate(points):
        if i in used:
            continue
        role = p[2]
        if role.startswith("object:"):
            entries.append((i, role))
        elif role in ("gripper-left", "gripper-right"):
            entries.append((i, f"gripper:{role}"))
        else:
            entries.append((i, f"object:{role}" if role else "object"))
    entries.sort(key=lambda e: e[0])
    return labels + [label for _, label in entries]
