import numpy as np
import pytest

from arro.core import Mask
from arro.dataset import load_episode, load_masks_file
from arro.errors import ConfigError
from arro.synthgen import (
    Actor,
    Occluder,
    SynthSceneConfig,
    generate,
    write_episode_dir,
)


def simple_cfg(**kw):
    defaults = dict(
        width=64,
        height=48,
        length=5,
        actors=(Actor("sq", "rect", (30, 220, 40), start=(8, 10), size=(10, 10)),),
    )
    defaults.update(kw)
    return SynthSceneConfig(**defaults)


def test_static_actor_renders_identically():
    ep = generate(simple_cfg())
    for f, t in zip(ep.frames[1:], ep.truth[1:]):
        assert f == ep.frames[0]
        assert t[0] == ep.truth[0][0]


def test_velocity_translates_mask():
    cfg = simple_cfg(actors=(
        Actor("sq", "rect", (30, 220, 40), start=(8, 10), velocity=(2, 0), size=(10, 10)),))
    ep = generate(cfg)
    base = ep.truth[0][0].bits
    for t in range(1, cfg.length):
        shifted = np.zeros_like(base)
        shifted[:, 2 * t :] = base[:, : -2 * t]
        assert np.array_equal(ep.truth[t][0].bits, shifted)


def test_occluder_blanks_truth_exactly_during_interval():
    occ = Occluder(x=20, y=4, w=36, h=40, first=5, last=7)
    cfg = simple_cfg(
        length=12,
        actors=(Actor("sq", "rect", (30, 220, 40), start=(8, 10), velocity=(4, 0),
                      size=(10, 10), occluder=occ),),
    )
    ep = generate(cfg)
    for t in range(cfg.length):
        empty = ep.truth[t][0].empty
        assert empty == (5 <= t <= 7), f"frame {t}"
        if 5 <= t <= 7:
            # the occluder rectangle is visible in the rendered frame
            assert (ep.frames[t].pixels[10, 30] == np.array(occ.color, np.uint8)).all()


def test_deform_schedule_scales_mask_area():
    cfg = simple_cfg(
        length=3,
        actors=(Actor("sq", "rect", (30, 220, 40), start=(20, 15), size=(12, 12),
                      deform=(1.0, 1.0, 0.5)),),
    )
    ep = generate(cfg)
    assert ep.truth[0][0].area == 144
    assert ep.truth[2][0].area == 36


def test_disc_actor():
    cfg = simple_cfg(actors=(Actor("dot", "disc", (20, 40, 230), start=(30, 20), size=(6, 6)),))
    ep = generate(cfg)
    m = ep.truth[0][0]
    assert m.bits[20, 30]
    assert m.bits[20, 36] and not m.bits[20, 37]  # radius inclusive


def test_nonoverlapping_truths_are_disjoint():
    cfg = simple_cfg(actors=(
        Actor("a", "rect", (30, 220, 40), start=(4, 4), size=(10, 10)),
        Actor("b", "rect", (20, 40, 230), start=(30, 20), size=(10, 10)),
    ))
    ep = generate(cfg)
    for per_actor in ep.truth:
        assert not (per_actor[0].bits & per_actor[1].bits).any()


def test_overlap_visibility_goes_to_later_actor():
    cfg = simple_cfg(actors=(
        Actor("under", "rect", (30, 220, 40), start=(10, 10), size=(10, 10)),
        Actor("over", "rect", (20, 40, 230), start=(14, 10), size=(10, 10)),
    ))
    ep = generate(cfg)
    under, over = ep.truth[0]
    assert not (under.bits & over.bits).any()
    assert under.area == 40  # 4 columns remain visible
    assert over.area == 100


def test_regeneration_is_bit_identical():
    cfg = simple_cfg(background={"kind": "clutter", "seed": 9, "count": 12})
    a, b = generate(cfg), generate(cfg)
    for fa, fb in zip(a.frames, b.frames):
        assert fa == fb


def test_clutter_palette_is_respected():
    palette = [[200, 120, 40], [90, 40, 160]]
    cfg = simple_cfg(background={"kind": "clutter", "seed": 1, "count": 20,
                                 "palette": palette, "color": [100, 100, 100]})
    ep = generate(cfg)
    colors = {tuple(px) for px in ep.frames[0].pixels.reshape(-1, 3).tolist()}
    allowed = {tuple(c) for c in palette} | {(100, 100, 100), (30, 220, 40)}
    assert colors <= allowed


def test_zero_length_rejected():
    with pytest.raises(ConfigError):
        simple_cfg(length=0)


def test_config_json_roundtrip():
    occ = Occluder(1, 2, 3, 4, 5, 7)
    cfg = simple_cfg(actors=(
        Actor("sq", "rect", (1, 2, 3), start=(4, 5), velocity=(1.5, 0), size=(6, 7),
              role="gripper", deform=(1.0, 0.5), occluder=occ),))
    again = SynthSceneConfig.from_json(cfg.to_json())
    assert again == cfg


def test_write_episode_dir_roundtrip(tmp_path):
    cfg = simple_cfg(length=4, episode_id="ep-test")
    ep = generate(cfg)
    out = tmp_path / "ep"
    write_episode_dir(ep, out)
    manifest, frames = load_episode(out)
    assert manifest.episode_id == "ep-test"
    assert manifest.resolution == (64, 48)
    loaded = list(frames)
    assert len(loaded) == 4
    for got, want in zip(loaded, ep.frames):
        assert got == want
    names, truth = load_masks_file(out / "masks.json")
    assert names == ["sq"]
    for got, want in zip(truth, ep.truth):
        assert got[0] == want[0]
