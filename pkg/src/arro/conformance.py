"""Wire-protocol conformance suite.

One fixed scenario of requests drives the :class:`RemoteBackend` client
through all six endpoints, including the 400/404/503 error taxonomy.
The same checks run against the in-process scripted peer and against a
gateway process over a real socket; :func:`record_fixtures` captures
the scenario's request/response pairs so a fixture-replay server can
answer the identical request set byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .backends import RemoteBackend, SegmentHandle
from .core import BoundingBox, Frame, Keypoint, Mask
from .errors import BackendError, ProtocolError, SessionError
from .testing import ScriptedGateway

FIXTURE_INDEX = "index.json"


def _pattern_frame(width: int, height: int, salt: int) -> Frame:
    base = (np.arange(width * height * 3, dtype=np.int64) * (salt * 2 + 7)) % 251
    return Frame(base.astype(np.uint8).reshape(height, width, 3))


def _rect(width, height, x, y, w, h):
    bits = np.zeros((height, width), bool)
    bits[y : y + h, x : x + w] = True
    return Mask(bits)


def scenario() -> dict:
    """Deterministic inputs and expected outputs for every check."""
    detect_frame = _pattern_frame(100, 80, 1)
    track_frames = [_pattern_frame(32, 24, salt) for salt in (2, 3, 4)]
    step_masks = [
        [_rect(32, 24, 2 + t, 2, 6, 6), _rect(32, 24, 20, 10 + t, 5, 5),
         _rect(32, 24, 2 + t, 14, 4, 4), _rect(32, 24, 24, 2, 3, 3 + t)]
        for t in range(3)
    ]
    return {
        "detect_frame": detect_frame,
        "closed_probe_frame": _pattern_frame(32, 24, 5),
        "detections": {
            "cube": [
                {"x": 5, "y": 5, "w": 20, "h": 20, "score": 0.6},
                {"x": 30, "y": 5, "w": 20, "h": 20, "score": 0.9},
            ],
            "offscreen": [{"x": 90, "y": 10, "w": 30, "h": 10, "score": 0.8}],
            "nothing": [],
        },
        "proposals": [_rect(100, 80, 10, 10, 30, 20), _rect(100, 80, 60, 40, 20, 20)],
        "track_frames": track_frames,
        "step_masks": step_masks,
        "annotations": [{"index": 2, "role": "gripper-left"},
                        {"index": 5, "role": "gripper-right"}],
        "unavailable_prompt": "__unavailable__",
    }


class _UnavailableWrapper:
    """Adds a prompt-triggered 503 to the scripted gateway."""

    def __init__(self, gateway: ScriptedGateway, prompt: str):
        self.gateway = gateway
        self.prompt = prompt

    def __call__(self, method, path, body):
        if path == "/v1/detect" and isinstance(body, dict) and body.get("prompt") == self.prompt:
            return 503, {"error": "model unavailable"}
        return self.gateway(method, path, body)


def build_scripted_peer(data: dict | None = None):
    """In-process transport implementing the scenario."""
    data = data or scenario()
    gw = ScriptedGateway(
        detections=data["detections"],
        proposals=data["proposals"],
        track_masks=data["step_masks"],
        annotations=data["annotations"],
    )
    return _UnavailableWrapper(gw, data["unavailable_prompt"])


# --- checks -----------------------------------------------------------------------

def _check_detect_sorted(remote, raw, data):
    boxes = remote.detect(data["detect_frame"], "cube")
    assert [b.score for b in boxes] == [0.9, 0.6], "boxes not sorted by score"
    assert (boxes[1].x, boxes[1].y, boxes[1].w, boxes[1].h) == (5, 5, 20, 20)


def _check_detect_clamped(remote, raw, data):
    [box] = remote.detect(data["detect_frame"], "offscreen")
    assert box.x + box.w <= data["detect_frame"].width, "box not clamped"


def _check_detect_empty_ok(remote, raw, data):
    assert remote.detect(data["detect_frame"], "nothing") == []


def _check_detect_unavailable_503(remote, raw, data):
    try:
        remote.detect(data["detect_frame"], data["unavailable_prompt"])
    except BackendError:
        return
    raise AssertionError("503 did not surface as a backend error")


def _check_propose(remote, raw, data):
    masks = remote.propose(data["detect_frame"])
    assert len(masks) == len(data["proposals"])
    for got, want in zip(masks, data["proposals"]):
        assert got == want, "proposal mask did not round-trip"


def _check_track_flow(remote, raw, data):
    frames = data["track_frames"]
    handle = remote.init_tracks(
        frames[0],
        [BoundingBox(2, 2, 6, 6), BoundingBox(20, 10, 5, 5)],
        [Keypoint(3, 15, "object:cross"), Keypoint(25, 3, "object:cube")],
    )
    assert len(handle.entities) == 4, "2 boxes + 2 plain points must be 4 entities"
    for frame, expected in zip(frames, data["step_masks"]):
        masks = remote.propagate(handle, frame)
        assert len(masks) == 4
        for got, want in zip(masks, expected):
            assert got == want, "step mask mismatch or misordered"
    remote.close(handle)
    reopened = SegmentHandle(entities=handle.entities, token=handle.token)
    try:
        # distinct probe frame so this request is unambiguous in replay
        remote.propagate(reopened, data["closed_probe_frame"])
    except SessionError:
        return
    raise AssertionError("step after close must be a session error")


def _check_track_pair_arity(remote, raw, data):
    frames = data["track_frames"]
    handle = remote.init_tracks(
        frames[0],
        [BoundingBox(1, 1, 4, 4)],
        [Keypoint(4, 16, "gripper-left"), Keypoint(26, 16, "gripper-right")],
    )
    assert len(handle.entities) == 2, "box + finger pair must be 2 entities"
    remote.close(handle)


def _check_unknown_session_404(remote, raw, data):
    handle = SegmentHandle(entities=(("object", ""),), token="no-such-session")
    try:
        remote.propagate(handle, data["track_frames"][0])
    except SessionError:
        return
    raise AssertionError("unknown session must be a session error")


def _check_annotate(remote, raw, data):
    sel = remote.select_regions(data["detect_frame"], 6, "pick the cube")
    assert [(s.index, s.role) for s in sel] == [
        (2, "gripper-left"), (5, "gripper-right")]


def _check_annotate_range_validation(remote, raw, data):
    try:
        remote.select_regions(data["detect_frame"], 1, "pick the cube")
    except ProtocolError:
        return
    raise AssertionError("out-of-range region index must be a protocol error")


def _check_malformed_request_400(remote, raw, data):
    status, _ = raw("POST", "/v1/detect", {"prompt": "x"})  # image missing
    assert status == 400, f"malformed request answered {status}"


def _check_unknown_endpoint_400(remote, raw, data):
    status, _ = raw("POST", "/v1/bogus", {})
    assert status == 400, f"unknown endpoint answered {status}"


CHECKS = [
    ("detect-sorted", _check_detect_sorted),
    ("detect-clamped", _check_detect_clamped),
    ("detect-empty-ok", _check_detect_empty_ok),
    ("detect-unavailable-503", _check_detect_unavailable_503),
    ("propose-roundtrip", _check_propose),
    ("track-flow", _check_track_flow),
    ("track-pair-arity", _check_track_pair_arity),
    ("unknown-session-404", _check_unknown_session_404),
    ("annotate-selections", _check_annotate),
    ("annotate-range-validation", _check_annotate_range_validation),
    ("malformed-request-400", _check_malformed_request_400),
    ("unknown-endpoint-400", _check_unknown_endpoint_400),
]


def run_conformance(transport, retries: int = 2, backoff: float = 0.01) -> list:
    """Run every check against a transport; returns passed check names."""
    data = scenario()
    remote = RemoteBackend(transport, retries=retries, backoff=backoff)
    passed = []
    for name, check in CHECKS:
        check(remote, transport, data)
        passed.append(name)
    return passed


# --- fixture recording ---------------------------------------------------------------

def fixture_key(method: str, path: str, body) -> str:
    canonical = json.dumps({"method": method, "path": path, "body": body},
                           sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:32]


def record_fixtures(out_dir) -> dict:
    """Run the suite against the scripted peer, capturing every
    request/response pair as a replayable fixture file."""
    peer = build_scripted_peer()
    records = {}
    order = []

    def recording(method, path, body):
        status, payload = peer(method, path, body)
        key = fixture_key(method, path, body)
        entry = {
            "method": method,
            "path": path,
            "request": body,
            "status": status,
            "response_body": json.dumps(payload, sort_keys=True, separators=(",", ":")),
        }
        if key not in records:
            records[key] = entry
            order.append(key)
        elif records[key] != entry:
            raise AssertionError(f"non-deterministic response for {method} {path}")
        return status, payload

    run_conformance(recording)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for key in order:
        (out / f"{key}.json").write_text(
            json.dumps(records[key], sort_keys=True, indent=2) + "\n")
    index = {"schema": "arro-fixtures/1", "fixtures": order}
    (out / FIXTURE_INDEX).write_text(json.dumps(index, indent=2) + "\n")
    return index
