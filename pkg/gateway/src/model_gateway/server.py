"""HTTP server for the six backend endpoints.

Mock mode answers from the fixture store (exact recorded bytes); live
mode drives the configured model adapters and keeps per-session
segmenter memory, serialized per session, with idle eviction. Error
taxonomy in both modes: 400 malformed, 404 unknown session, 503 model
unavailable.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .adapters import ModelUnavailable, build_adapters
from .config import GatewayConfig, GatewayConfigError
from .fixtures import FixtureStore
from .wire import (
    BadRequest,
    decode_image,
    group_entity_labels,
    mask_to_rle,
    parse_boxes,
    parse_points,
)

ENDPOINTS = ("/v1/detect", "/v1/propose", "/v1/track/init", "/v1/track/step",
             "/v1/track/close", "/v1/annotate")


class _LiveSession:
    def __init__(self, entities, memory):
        self.entities = entities
        self.memory = memory
        self.lock = threading.Lock()
        self.last_active = time.monotonic()


class GatewayCore:
    """Transport-independent request handling for both modes."""

    def __init__(self, config: GatewayConfig):
        self.config = config
        self.store = None
        self.sessions = {}
        self._lock = threading.Lock()
        if config.mode == "mock":
            self.store = FixtureStore(config.fixtures)
        else:
            self.detector, self.segmenter, self.annotator = build_adapters(
                config.models, config.model_options)

    # returns (status, body_string)
    def handle(self, method: str, path: str, body):
        if method != "POST" or path not in ENDPOINTS:
            return 400, json.dumps({"error": f"no such endpoint: {method} {path}"})
        if self.config.mode == "mock":
            return self._handle_mock(method, path, body)
        return self._handle_live(path, body)

    # -- mock ------------------------------------------------------------------

    def _handle_mock(self, method, path, body):
        hit = self.store.lookup(method, path, body)
        if hit is not None:
            return hit  # exact recorded bytes
        try:
            self._validate(path, body)
        except BadRequest as e:
            return 400, json.dumps({"error": str(e)})
        if path in ("/v1/track/step", "/v1/track/close"):
            return 404, json.dumps({"error": "unknown session"})
        return 400, json.dumps({"error": "no fixture recorded for this request"})

    @staticmethod
    def _validate(path, body):
        if not isinstance(body, dict):
            raise BadRequest("request body must be a JSON object")
        if path != "/v1/track/close":
            decode_image(body.get("image", ""))
        if path == "/v1/detect" and not isinstance(body.get("prompt"), str):
            raise BadRequest("missing prompt")
        if path == "/v1/track/init":
            parse_boxes(body.get("boxes"))
            parse_points(body.get("points"))
        if path == "/v1/annotate":
            if not isinstance(body.get("region_count"), int):
                raise BadRequest("missing region_count")
            if not isinstance(body.get("task_prompt"), str):
                raise BadRequest("missing task_prompt")
        if path in ("/v1/track/step", "/v1/track/close"):
            if not isinstance(body.get("session"), str):
                raise BadRequest("missing session")

    # -- live ------------------------------------------------------------------

    def _handle_live(self, path, body):
        try:
            self._validate(path, body)
            self._evict_idle()
            if path == "/v1/detect":
                image = decode_image(body["image"])
                boxes = self.detector.detect(image, body["prompt"])
                return 200, json.dumps({"boxes": [
                    {"x": x, "y": y, "w": w, "h": h, "score": s}
                    for x, y, w, h, s in boxes]})
            if path == "/v1/propose":
                image = decode_image(body["image"])
                masks = self.segmenter.propose(image)
                return 200, json.dumps({"masks": [mask_to_rle(m) for m in masks]})
            if path == "/v1/track/init":
                image = decode_image(body["image"])
                boxes = parse_boxes(body["boxes"])
                points = parse_points(body["points"])
                if not boxes and not points:
                    raise BadRequest("no prompts given")
                memory = self.segmenter.init(image, boxes, points)
                labels = group_entity_labels(boxes, points)
                sid = uuid.uuid4().hex
                with self._lock:
                    self.sessions[sid] = _LiveSession(labels, memory)
                return 200, json.dumps({"session": sid, "entities": labels})
            if path == "/v1/track/step":
                session = self.sessions.get(body["session"])
                if session is None:
                    return 404, json.dumps({"error": "unknown session"})
                with session.lock:  # one step at a time per session
                    image = decode_image(body["image"])
                    masks = self.segmenter.step(session.memory, image)
                    session.last_active = time.monotonic()
                return 200, json.dumps({"masks": [mask_to_rle(m) for m in masks]})
            if path == "/v1/track/close":
                with self._lock:
                    session = self.sessions.pop(body["session"], None)
                if session is None:
                    return 404, json.dumps({"error": "unknown session"})
                return 200, json.dumps({})
            # /v1/annotate
            image = decode_image(body["image"])
            selections = self.annotator.select(image, body["region_count"],
                                               body["task_prompt"])
            return 200, json.dumps({
                "selections": [{"index": i, "role": r} for i, r in selections],
                "prompt_version": self.annotator.prompt_version,
            })
        except BadRequest as e:
            return 400, json.dumps({"error": str(e)})
        except ModelUnavailable as e:
            return 503, json.dumps({"error": str(e)})

    def _evict_idle(self):
        deadline = time.monotonic() - self.config.session_idle_s
        with self._lock:
            stale = [sid for sid, s in self.sessions.items() if s.last_active < deadline]
            for sid in stale:
                del self.sessions[sid]


def _make_handler(core: GatewayCore):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args):
            pass

        def do_POST(self):
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b""
            try:
                body = json.loads(raw) if raw else {}
            except json.JSONDecodeError as e:
                self._reply(400, json.dumps({"error": f"bad JSON body: {e}"}))
                return
            status, text = core.handle("POST", self.path, body)
            self._reply(status, text)

        def do_GET(self):
            if self.path == "/v1/health":
                self._reply(200, json.dumps({"ok": True, "mode": core.config.mode}))
            else:
                self._reply(400, json.dumps({"error": "no such endpoint"}))

        def _reply(self, status, text):
            raw = text.encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

    return Handler


class GatewayServer:
    def __init__(self, config: GatewayConfig):
        self.core = GatewayCore(config)
        try:
            self.httpd = ThreadingHTTPServer((config.host, config.port),
                                             _make_handler(self.core))
        except OSError as e:
            raise GatewayConfigError(
                f"cannot bind {config.host}:{config.port}: {e}") from e
        self.host, self.port = self.httpd.server_address[:2]
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> "GatewayServer":
        self._thread.start()
        return self

    def shutdown(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()

    def serve_forever(self) -> None:
        self.httpd.serve_forever()


def serve_gateway(config: GatewayConfig) -> GatewayServer:
    """Validate models/fixtures, bind, and start serving."""
    return GatewayServer(config).start()
