import json
import urllib.error
import urllib.request

import numpy as np
import pytest

from arro.backends import ColorClass, builtin_bundle
from arro.core import Frame
from arro.dataset import load_episode, transform_episode
from arro.imageio import frame_from_base64, frame_to_base64
from arro.init_pipeline import TaskSpec
from arro.recompose import BackgroundSpec, RecomposeConfig
from arro.service import MaskingService, ServiceLimits, parse_bind, serve
from arro.synthgen import Actor, SynthSceneConfig, generate, write_episode_dir

GREEN_CLASS = ColorClass("green", 100.0, 140.0)
BLUE_CLASS = ColorClass("blue", 200.0, 260.0)
CLASSES = [GREEN_CLASS, BLUE_CLASS]
TASK = TaskSpec(object_prompts=("green block", "blue block"))
BLACK = RecomposeConfig(background=BackgroundSpec(kind="black"))


def scene_cfg(episode_id="ep0", seed=5, length=6):
    return SynthSceneConfig(
        width=96, height=72, length=length, episode_id=episode_id,
        background={"kind": "clutter", "seed": seed, "count": 8,
                    "palette": [[200, 140, 60]], "color": [115, 115, 115]},
        actors=(
            Actor("green", "rect", (30, 220, 40), start=(6, 10), velocity=(3, 1), size=(14, 12)),
            Actor("blue", "rect", (20, 40, 230), start=(60, 40), velocity=(-2, 0), size=(12, 12)),
        ),
    )


def http_json(method, url, body=None):
    data = None if body is None else json.dumps(body).encode()
    req = urllib.request.Request(url, data=data, method=method,
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=30) as resp:
            return resp.status, json.loads(resp.read() or b"{}")
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read() or b"{}")


@pytest.fixture
def server():
    srv = serve("127.0.0.1:0", builtin_bundle(CLASSES, min_area=8))
    yield srv
    srv.shutdown()


def init_body(frame, task=TASK, cfg=BLACK):
    return {"image": frame_to_base64(frame), "task": task.to_json(),
            "recompose": cfg.to_json()}


def test_health(server):
    status, payload = http_json("GET", server.url + "/v1/health")
    assert status == 200 and payload["ok"] is True
    assert payload["backends"]["segmenter"]["kind"] == "builtin-chroma"


def test_streaming_episode_matches_batch(tmp_path, server):
    ep = generate(scene_cfg())
    episode_dir = tmp_path / "ep"
    write_episode_dir(ep, episode_dir)
    out_dir = tmp_path / "batch"
    transform_episode(episode_dir, out_dir, TASK, BLACK, builtin_bundle(CLASSES, min_area=8))
    _, batch_frames = load_episode(out_dir)
    batch = list(batch_frames)

    status, payload = http_json("POST", server.url + "/v1/session", init_body(ep.frames[0]))
    assert status == 200
    sid = payload["session"]
    streamed = [frame_from_base64(payload["image"])]
    assert payload["entities"] == [{"id": 1, "role": "object"}, {"id": 2, "role": "object"}]
    for frame in ep.frames[1:]:
        status, payload = http_json("POST", f"{server.url}/v1/session/{sid}/frame",
                                    {"image": frame_to_base64(frame)})
        assert status == 200
        assert payload["latency_ms"] > 0
        assert [e["status"] for e in payload["entities"]] == ["present", "present"]
        streamed.append(frame_from_base64(payload["image"]))
    status, payload = http_json("DELETE", f"{server.url}/v1/session/{sid}")
    assert status == 200
    assert payload["stats"]["frames"] == len(ep.frames)
    assert payload["stats"]["latency"]["count"] == len(ep.frames)
    for got, want in zip(streamed, batch):
        assert got == want


def test_unknown_session_is_404(server):
    status, payload = http_json("POST", server.url + "/v1/session/deadbeef/frame",
                                {"image": frame_to_base64(generate(scene_cfg()).frames[0])})
    assert status == 404
    assert payload["category"] == "session-error"
    status, _ = http_json("DELETE", server.url + "/v1/session/deadbeef")
    assert status == 404


def test_closed_session_rejects_frames(server):
    ep = generate(scene_cfg())
    _, payload = http_json("POST", server.url + "/v1/session", init_body(ep.frames[0]))
    sid = payload["session"]
    http_json("DELETE", f"{server.url}/v1/session/{sid}")
    status, _ = http_json("POST", f"{server.url}/v1/session/{sid}/frame",
                          {"image": frame_to_base64(ep.frames[1])})
    assert status == 404


def test_wrong_resolution_is_400(server):
    ep = generate(scene_cfg())
    _, payload = http_json("POST", server.url + "/v1/session", init_body(ep.frames[0]))
    sid = payload["session"]
    small = Frame(np.asarray(ep.frames[0].pixels[:36, :48]))
    status, payload = http_json("POST", f"{server.url}/v1/session/{sid}/frame",
                                {"image": frame_to_base64(small)})
    assert status == 400
    assert payload["category"] == "shape-error"


def test_unresolved_prompt_is_422(server):
    ep = generate(scene_cfg())
    task = TaskSpec(object_prompts=("red cross",))
    status, payload = http_json("POST", server.url + "/v1/session",
                                init_body(ep.frames[0], task=task))
    assert status == 422
    assert "red cross" in payload["error"]


def test_session_limit_is_429():
    service = MaskingService(builtin_bundle(CLASSES, min_area=8),
                             ServiceLimits(max_sessions=1))
    ep = generate(scene_cfg())
    status, _ = service.create_session(init_body(ep.frames[0]))
    assert status == 200
    status, payload = service.create_session(init_body(ep.frames[0]))
    assert status == 429


def test_idle_eviction():
    service = MaskingService(builtin_bundle(CLASSES, min_area=8),
                             ServiceLimits(idle_timeout_s=0.0))
    ep = generate(scene_cfg())
    status, payload = service.create_session(init_body(ep.frames[0]))
    sid = payload["session"]
    status, _ = service.process_frame(sid, {"image": frame_to_base64(ep.frames[1])})
    assert status == 404  # evicted before the frame was processed


def test_interleaved_sessions_are_isolated():
    service = MaskingService(builtin_bundle(CLASSES, min_area=8))
    a = generate(scene_cfg(seed=5))
    b = generate(scene_cfg(seed=11))
    solo = MaskingService(builtin_bundle(CLASSES, min_area=8))
    _, solo_payload = solo.create_session(init_body(a.frames[0]))
    solo_sid = solo_payload["session"]
    solo_images = [solo_payload["image"]]
    for f in a.frames[1:]:
        _, p = solo.process_frame(solo_sid, {"image": frame_to_base64(f)})
        solo_images.append(p["image"])

    _, pa = service.create_session(init_body(a.frames[0]))
    _, pb = service.create_session(init_body(b.frames[0]))
    sa, sb = pa["session"], pb["session"]
    inter_images = [pa["image"]]
    for fa, fb in zip(a.frames[1:], b.frames[1:]):
        _, ra = service.process_frame(sa, {"image": frame_to_base64(fa)})
        _, rb = service.process_frame(sb, {"image": frame_to_base64(fb)})
        inter_images.append(ra["image"])
    assert inter_images == solo_images


def test_occluded_entity_status_and_background(server):
    from arro.recompose import make_background
    from arro.synthgen import Occluder

    occ = Occluder(x=0, y=0, w=96, h=72, first=2, last=3)
    cfg = SynthSceneConfig(
        width=96, height=72, length=5, episode_id="occ",
        background={"kind": "solid", "color": [115, 115, 115]},
        actors=(Actor("green", "rect", (30, 220, 40), start=(10, 10),
                      velocity=(2, 0), size=(14, 12), occluder=occ),),
    )
    ep = generate(cfg)
    task = TaskSpec(object_prompts=("green block",))
    _, payload = http_json("POST", server.url + "/v1/session",
                           init_body(ep.frames[0], task=task))
    sid = payload["session"]
    bg = make_background(BLACK.background, 96, 72)
    for t, frame in enumerate(ep.frames[1:], start=1):
        _, payload = http_json("POST", f"{server.url}/v1/session/{sid}/frame",
                               {"image": frame_to_base64(frame)})
        status = payload["entities"][0]["status"]
        if 2 <= t <= 3:
            assert status == "occluded"
            assert frame_from_base64(payload["image"]) == bg
        else:
            assert status == "present"


def test_missing_image_is_400(server):
    status, payload = http_json("POST", server.url + "/v1/session",
                                {"task": TASK.to_json(), "recompose": BLACK.to_json()})
    assert status == 400
    assert payload["category"] == "format-error"


def test_duplicate_frame_advances_state(server):
    ep = generate(scene_cfg())
    _, payload = http_json("POST", server.url + "/v1/session", init_body(ep.frames[0]))
    sid = payload["session"]
    same = {"image": frame_to_base64(ep.frames[1])}
    s1, _ = http_json("POST", f"{server.url}/v1/session/{sid}/frame", same)
    s2, _ = http_json("POST", f"{server.url}/v1/session/{sid}/frame", same)
    assert s1 == s2 == 200
    _, payload = http_json("DELETE", f"{server.url}/v1/session/{sid}")
    assert payload["stats"]["frames"] == 3


def test_bad_json_body_is_400(server):
    req = urllib.request.Request(server.url + "/v1/session", data=b"{nope",
                                 method="POST", headers={"Content-Type": "application/json"})
    try:
        urllib.request.urlopen(req, timeout=10)
        raised = False
    except urllib.error.HTTPError as e:
        raised = True
        assert e.code == 400
    assert raised


def test_parse_bind():
    assert parse_bind("0.0.0.0:8080") == ("0.0.0.0", 8080)
    from arro.errors import ConfigError

    with pytest.raises(ConfigError):
        parse_bind("8080")
