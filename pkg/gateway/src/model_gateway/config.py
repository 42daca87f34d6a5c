"""Gateway configuration (YAML or JSON file, or a plain dict)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml


class GatewayConfigError(Exception):
    pass


@dataclass(frozen=True)
class GatewayConfig:
    mode: str = "mock"  # "mock" | "live"
    fixtures: str | None = None  # fixture directory (mock mode)
    models: dict = field(default_factory=dict)  # role -> adapter name (live mode)
    model_options: dict = field(default_factory=dict)  # adapter tuning knobs
    host: str = "127.0.0.1"
    port: int = 8750
    session_idle_s: float = 300.0

    def __post_init__(self):
        if self.mode not in ("mock", "live"):
            raise GatewayConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "mock" and not self.fixtures:
            raise GatewayConfigError("mock mode requires a fixtures directory")
        if self.mode == "live":
            missing = {"detector", "segmenter", "annotator"} - set(self.models)
            if missing:
                raise GatewayConfigError(
                    f"live mode needs a model per role; missing {sorted(missing)}")

    @classmethod
    def from_dict(cls, obj: dict) -> "GatewayConfig":
        base = cls(fixtures="unused")
        try:
            return cls(
                mode=str(obj.get("mode", "mock")),
                fixtures=obj.get("fixtures"),
                models=dict(obj.get("models", {})),
                model_options=dict(obj.get("model_options", {})),
                host=str(obj.get("host", base.host)),
                port=int(obj.get("port", base.port)),
                session_idle_s=float(obj.get("session_idle_s", base.session_idle_s)),
            )
        except (TypeError, ValueError) as e:
            raise GatewayConfigError(f"bad gateway config: {e}") from e

    @classmethod
    def load(cls, path) -> "GatewayConfig":
        p = Path(path)
        if not p.is_file():
            raise GatewayConfigError(f"no such config file: {p}")
        text = p.read_text()
        try:
            if p.suffix in (".yaml", ".yml"):
                obj = yaml.safe_load(text)
            else:
                obj = json.loads(text)
        except (yaml.YAMLError, json.JSONDecodeError) as e:
            raise GatewayConfigError(f"unreadable config {p}: {e}") from e
        if not isinstance(obj, dict):
            raise GatewayConfigError("config must be a mapping")
        return cls.from_dict(obj)
