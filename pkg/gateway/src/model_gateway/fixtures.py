"""Fixture store for mock mode: scripted responses keyed by request hash.

A fixture file holds the canonical request, the HTTP status and the
exact response body string recorded from a reference run; replay
serves those bytes verbatim, so repeated runs are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .config import GatewayConfigError

INDEX_NAME = "index.json"


def request_key(method: str, path: str, body) -> str:
    canonical = json.dumps({"method": method, "path": path, "body": body},
                           sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:32]


class FixtureStore:
    def __init__(self, directory):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise GatewayConfigError(f"fixture directory missing: {self.directory}")
        self.entries = {}
        for path in sorted(self.directory.glob("*.json")):
            if path.name == INDEX_NAME:
                continue
            try:
                obj = json.loads(path.read_text())
                key = request_key(obj["method"], obj["path"], obj["request"])
                self.entries[key] = (int(obj["status"]), obj["response_body"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise GatewayConfigError(f"bad fixture file {path}: {e}") from e
        if not self.entries:
            raise GatewayConfigError(f"no fixtures under {self.directory}")

    def lookup(self, method: str, path: str, body):
        """(status, exact response body string) or None."""
        return self.entries.get(request_key(method, path, body))

    def __len__(self):
        return len(self.entries)
