"""Real-time masking service.

Holds live per-stream sessions and recomposes frames as they arrive.
Many sessions run concurrently; each session is strictly sequential (a
frame arriving while the previous one is processing blocks its caller),
so the temporal memory never sees frames out of order. Identical
inputs produce outputs bit-identical to the batch transformer.
"""

from __future__ import annotations

import json
import re
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .backends import BackendBundle
from .errors import (
    ArroError,
    BackendError,
    ConfigError,
    FormatError,
    GripperUnresolvedError,
    InitTimeoutError,
    PromptUnresolvedError,
    ProtocolError,
    SessionError,
    ShapeError,
)
from .imageio import frame_from_base64, frame_to_base64
from .init_pipeline import TaskSpec, initialize_session
from .metrics import latency_report
from .recompose import MaskingSession, RecomposeConfig, entity_statuses, mask_frame, start_session
from .tracker import TrackerConfig


@dataclass(frozen=True)
class ServiceLimits:
    max_sessions: int = 16
    idle_timeout_s: float = 120.0
    max_frame_bytes: int = 16 * 1024 * 1024

    @classmethod
    def from_json(cls, obj: dict) -> "ServiceLimits":
        base = cls()
        return cls(
            max_sessions=int(obj.get("max_sessions", base.max_sessions)),
            idle_timeout_s=float(obj.get("idle_timeout_s", base.idle_timeout_s)),
            max_frame_bytes=int(obj.get("max_frame_bytes", base.max_frame_bytes)),
        )

    @classmethod
    def load(cls, path) -> "ServiceLimits":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot load limits from {path}: {e}") from e


class StreamSession:
    def __init__(self, sid: str, masking: MaskingSession, resolution):
        self.sid = sid
        self.masking = masking
        self.resolution = resolution  # (w, h)
        self.lock = threading.Lock()
        self.created = time.monotonic()
        self.last_active = self.created
        self.latencies_ms = deque(maxlen=4096)
        self.frames_served = 0
        self.closed = False


_STATUS_BY_CATEGORY = {
    PromptUnresolvedError: 422,
    GripperUnresolvedError: 422,
    SessionError: 404,
    FormatError: 400,
    ShapeError: 400,
    ConfigError: 400,
    ProtocolError: 502,
    BackendError: 503,
    InitTimeoutError: 503,
}


def _error_response(exc: Exception):
    for cls, status in _STATUS_BY_CATEGORY.items():
        if isinstance(exc, cls):
            return status, {"error": str(exc), "category": exc.category}
    if isinstance(exc, ArroError):
        return 500, {"error": str(exc), "category": exc.category}
    return 500, {"error": str(exc), "category": "error"}


class MaskingService:
    """Transport-independent session logic behind the HTTP endpoints."""

    def __init__(self, backends: BackendBundle, limits: ServiceLimits | None = None,
                 tracker_cfg: TrackerConfig | None = None, init_budget_s: float = 30.0):
        self.backends = backends
        self.limits = limits or ServiceLimits()
        self.tracker_cfg = tracker_cfg
        self.init_budget_s = init_budget_s
        self.sessions: dict = {}
        self._lock = threading.Lock()
        self._draining = False

    # -- endpoint bodies -------------------------------------------------------

    def health(self):
        return 200, {"ok": True, "backends": self.backends.describe(),
                     "sessions": len(self.sessions)}

    def create_session(self, body: dict):
        self._evict_idle()
        try:
            if not isinstance(body, dict):
                raise FormatError("request body must be a JSON object")
            frame = frame_from_base64(str(body.get("image", "")))
            task = TaskSpec.from_json(body.get("task") or {})
            cfg = RecomposeConfig.from_json(body.get("recompose") or {})
            tracker_cfg = self.tracker_cfg
            if "tracker" in body:
                tracker_cfg = TrackerConfig.from_json(body["tracker"])
            with self._lock:
                if self._draining:
                    raise SessionError("service is shutting down")
                if len(self.sessions) >= self.limits.max_sessions:
                    return 429, {"error": "session limit reached",
                                 "category": "session-limit"}
            started = time.perf_counter()
            init = initialize_session(frame, task, self.backends.detector,
                                      self.backends.segmenter, self.backends.annotator,
                                      budget_s=self.init_budget_s)
            masking = start_session(init, frame, cfg, tracker_cfg)
            first = mask_frame(masking, frame, self.backends.segmenter)
            sid = uuid.uuid4().hex
            session = StreamSession(sid, masking, (frame.width, frame.height))
            session.latencies_ms.append((time.perf_counter() - started) * 1000.0)
            session.frames_served = 1
            with self._lock:
                self.sessions[sid] = session
            return 200, {
                "session": sid,
                "image": frame_to_base64(first),
                "entities": [{"id": s["id"], "role": s["role"]}
                             for s in entity_statuses(masking)],
            }
        except Exception as e:  # noqa: BLE001 - mapped onto the wire taxonomy
            return _error_response(e)

    def process_frame(self, sid: str, body: dict):
        self._evict_idle()
        session = self.sessions.get(sid)
        if session is None or session.closed:
            return 404, {"error": f"unknown session {sid!r}", "category": "session-error"}
        with session.lock:
            if session.closed:
                return 404, {"error": f"unknown session {sid!r}",
                             "category": "session-error"}
            try:
                frame = frame_from_base64(str((body or {}).get("image", "")))
                if (frame.width, frame.height) != session.resolution:
                    raise ShapeError(
                        f"frame is {frame.width}x{frame.height}, session expects "
                        f"{session.resolution[0]}x{session.resolution[1]}"
                    )
                started = time.perf_counter()
                out = mask_frame(session.masking, frame, self.backends.segmenter)
                elapsed_ms = (time.perf_counter() - started) * 1000.0
                session.latencies_ms.append(elapsed_ms)
                session.frames_served += 1
                session.last_active = time.monotonic()
                return 200, {
                    "image": frame_to_base64(out),
                    "entities": [{"id": s["id"], "status": s["status"]}
                                 for s in entity_statuses(session.masking)],
                    "latency_ms": elapsed_ms,
                }
            except Exception as e:  # noqa: BLE001
                return _error_response(e)

    def close_session(self, sid: str):
        with self._lock:
            session = self.sessions.pop(sid, None)
        if session is None:
            return 404, {"error": f"unknown session {sid!r}", "category": "session-error"}
        with session.lock:
            session.closed = True
            self._close_backend(session)
            stats = {"frames": session.frames_served}
            if session.latencies_ms:
                stats["latency"] = latency_report(list(session.latencies_ms))
        return 200, {"stats": stats}

    # -- lifecycle ------------------------------------------------------------------

    def _close_backend(self, session: StreamSession) -> None:
        try:
            self.backends.segmenter.close(session.masking.handle)
        except ArroError:
            pass

    def _evict_idle(self) -> None:
        deadline = time.monotonic() - self.limits.idle_timeout_s
        with self._lock:
            stale = [sid for sid, s in self.sessions.items() if s.last_active < deadline]
            victims = [(sid, self.sessions.pop(sid)) for sid in stale]
        for _, session in victims:
            with session.lock:
                session.closed = True
                self._close_backend(session)

    def shutdown(self) -> None:
        """Drain in-flight frames, then close every backend session."""
        with self._lock:
            self._draining = True
            victims = list(self.sessions.values())
            self.sessions.clear()
        for session in victims:
            with session.lock:  # waits for an in-flight frame to finish
                session.closed = True
                self._close_backend(session)


# --- HTTP layer ------------------------------------------------------------------------

_FRAME_RE = re.compile(r"^/v1/session/([0-9a-f]+)/frame$")
_SESSION_RE = re.compile(r"^/v1/session/([0-9a-f]+)$")


def _make_handler(service: MaskingService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args):  # keep the server quiet
            pass

        def _reply(self, status: int, payload: dict):
            raw = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

        def _read_body(self):
            length = int(self.headers.get("Content-Length") or 0)
            if length > service.limits.max_frame_bytes:
                return None, (413, {"error": "payload too large", "category": "format-error"})
            raw = self.rfile.read(length) if length else b""
            if not raw:
                return {}, None
            try:
                return json.loads(raw), None
            except json.JSONDecodeError as e:
                return None, (400, {"error": f"bad JSON body: {e}", "category": "format-error"})

        def do_GET(self):
            if self.path == "/v1/health":
                self._reply(*service.health())
            else:
                self._reply(404, {"error": "no such endpoint", "category": "protocol-error"})

        def do_POST(self):
            body, failure = self._read_body()
            if failure:
                self._reply(*failure)
                return
            if self.path == "/v1/session":
                self._reply(*service.create_session(body))
                return
            match = _FRAME_RE.match(self.path)
            if match:
                self._reply(*service.process_frame(match.group(1), body))
                return
            self._reply(404, {"error": "no such endpoint", "category": "protocol-error"})

        def do_DELETE(self):
            match = _SESSION_RE.match(self.path)
            if match:
                self._reply(*service.close_session(match.group(1)))
                return
            self._reply(404, {"error": "no such endpoint", "category": "protocol-error"})

    return Handler


class ServiceServer:
    """A started HTTP server plus its session core."""

    def __init__(self, host: str, port: int, service: MaskingService):
        self.service = service
        try:
            self.httpd = ThreadingHTTPServer((host, port), _make_handler(service))
        except OSError as e:
            raise ConfigError(f"cannot bind {host}:{port}: {e}") from e
        self.host, self.port = self.httpd.server_address[:2]
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> "ServiceServer":
        self._thread.start()
        return self

    def shutdown(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        self.service.shutdown()

    def serve_forever(self) -> None:
        try:
            self.httpd.serve_forever()
        finally:
            self.service.shutdown()


def parse_bind(bind: str):
    host, _, port = bind.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"bind address must be HOST:PORT, got {bind!r}")
    return host, int(port)


def serve(bind: str, backends: BackendBundle, limits: ServiceLimits | None = None,
          tracker_cfg: TrackerConfig | None = None,
          init_budget_s: float = 30.0) -> ServiceServer:
    """Bind and start the masking service; returns the running server."""
    host, port = parse_bind(bind)
    service = MaskingService(backends, limits, tracker_cfg, init_budget_s)
    return ServiceServer(host, port, service).start()
