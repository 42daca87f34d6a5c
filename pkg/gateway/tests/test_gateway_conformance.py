"""Gateway acceptance: the client-side conformance suite, over a real
socket, against the gateway in mock mode; fixtures replay byte-for-byte
across runs."""

import json
import urllib.request

import pytest

from arro.backends import HttpTransport
from arro.conformance import CHECKS, record_fixtures, run_conformance

from model_gateway.config import GatewayConfig
from model_gateway.server import serve_gateway


@pytest.fixture(scope="module")
def fixtures_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("fixtures")
    record_fixtures(path)
    return path


@pytest.fixture()
def gateway(fixtures_dir):
    server = serve_gateway(GatewayConfig(mode="mock", fixtures=str(fixtures_dir),
                                         host="127.0.0.1", port=0))
    yield server
    server.shutdown()


def test_conformance_suite_over_real_socket(gateway):
    passed = run_conformance(HttpTransport(gateway.url))
    assert passed == [name for name, _ in CHECKS]


def test_fixture_replay_is_byte_identical_across_runs(fixtures_dir, gateway):
    # the same request must produce the same bytes on repeated calls and
    # match the recorded fixture exactly
    sample = None
    for path in sorted(fixtures_dir.glob("*.json")):
        if path.name == "index.json":
            continue
        obj = json.loads(path.read_text())
        if obj["status"] == 200 and obj["path"] == "/v1/detect":
            sample = obj
            break
    assert sample is not None
    url = gateway.url + sample["path"]

    def call():
        req = urllib.request.Request(
            url, data=json.dumps(sample["request"]).encode(),
            headers={"Content-Type": "application/json"}, method="POST")
        with urllib.request.urlopen(req, timeout=10) as resp:
            return resp.read()

    first, second = call(), call()
    assert first == second == sample["response_body"].encode()


def test_recording_twice_gives_identical_fixture_files(tmp_path):
    record_fixtures(tmp_path / "a")
    record_fixtures(tmp_path / "b")
    names_a = sorted(p.name for p in (tmp_path / "a").iterdir())
    names_b = sorted(p.name for p in (tmp_path / "b").iterdir())
    assert names_a == names_b
    for name in names_a:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_health_reports_mode(gateway):
    with urllib.request.urlopen(gateway.url + "/v1/health", timeout=10) as resp:
        payload = json.loads(resp.read())
    assert payload == {"ok": True, "mode": "mock"}


def test_unmatched_wellformed_request_is_400(gateway):
    from arro.core import Frame
    from arro.imageio import frame_to_base64
    import numpy as np

    body = {"image": frame_to_base64(Frame(np.zeros((4, 4, 3), np.uint8))),
            "prompt": "this request was never recorded"}
    req = urllib.request.Request(gateway.url + "/v1/detect",
                                 data=json.dumps(body).encode(),
                                 headers={"Content-Type": "application/json"},
                                 method="POST")
    with pytest.raises(urllib.error.HTTPError) as err:
        urllib.request.urlopen(req, timeout=10)
    assert err.value.code == 400


def test_mock_mode_requires_fixture_directory(tmp_path):
    from model_gateway.config import GatewayConfigError

    with pytest.raises(GatewayConfigError):
        serve_gateway(GatewayConfig(mode="mock", fixtures=str(tmp_path / "missing"),
                                    host="127.0.0.1", port=0))
