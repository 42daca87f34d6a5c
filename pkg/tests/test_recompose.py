import numpy as np
import pytest

from arro.backends import SegmentHandle, Segmenter
from arro.core import Frame, Mask, union
from arro.errors import ConfigError, ShapeError
from arro.init_pipeline import SessionInit
from arro.recompose import (
    BackgroundSpec,
    MaskingSession,
    RecomposeConfig,
    composite,
    dilate_mask,
    entity_statuses,
    make_background,
    mask_frame,
    start_session,
)

from conftest import random_frame


def test_black_background_is_all_zeros():
    bg = make_background(BackgroundSpec(kind="black"), 32, 20)
    assert (bg.pixels == 0).all()


def test_background_is_deterministic():
    spec = BackgroundSpec(kind="grid", cell=16, line_width=2, seed=3)
    assert make_background(spec, 100, 70) == make_background(spec, 100, 70)


def count_full_bands(fully_non_base):
    bands, inside = 0, False
    for flag in fully_non_base:
        if flag and not inside:
            bands += 1
        inside = flag
    return bands


def test_grid_band_counts():
    spec = BackgroundSpec(kind="grid", cell=40, line_width=2)
    bg = make_background(spec, 320, 180).pixels
    non_base = np.any(bg != np.array(spec.base, np.uint8), axis=2)
    vertical = count_full_bands(non_base.all(axis=0))  # columns fully colored
    horizontal = count_full_bands(non_base.all(axis=1))
    assert vertical == -(-320 // 40) == 8
    assert horizontal == -(-180 // 40) == 5


def test_grid_colors_cycle_with_seed_phase():
    spec0 = BackgroundSpec(kind="grid", cell=20, seed=0)
    spec1 = BackgroundSpec(kind="grid", cell=20, seed=1)
    b0 = make_background(spec0, 60, 60)
    b1 = make_background(spec1, 60, 60)
    assert b0 != b1
    # seed is modular in the palette length
    spec4 = BackgroundSpec(kind="grid", cell=20, seed=len(spec0.palette))
    assert make_background(spec4, 60, 60) == b0


def test_background_spec_validation_and_json():
    with pytest.raises(ConfigError):
        BackgroundSpec(kind="grid", cell=2, line_width=2)
    with pytest.raises(ConfigError):
        BackgroundSpec(kind="starfield")
    with pytest.raises(ConfigError):
        BackgroundSpec(palette=())
    spec = BackgroundSpec(kind="grid", cell=24, line_width=3, seed=2)
    assert BackgroundSpec.from_json(spec.to_json()) == spec
    cfg = RecomposeConfig(background=spec, dilate=2)
    assert RecomposeConfig.from_json(cfg.to_json()) == cfg


# --- composite ------------------------------------------------------------------

def test_composite_all_ones_returns_frame(rng):
    f = random_frame(rng, 12, 9)
    bg = random_frame(rng, 12, 9)
    assert composite(f, Mask.ones(12, 9), bg) == f


def test_composite_all_zeros_returns_background(rng):
    f = random_frame(rng, 12, 9)
    bg = random_frame(rng, 12, 9)
    assert composite(f, Mask.zeros(12, 9), bg) == bg


def test_composite_two_pixel_case():
    f = Frame(np.array([[[1, 2, 3], [4, 5, 6]]], np.uint8))
    bg = Frame(np.array([[[7, 8, 9], [10, 11, 12]]], np.uint8))
    m = Mask(np.array([[True, False]]))
    out = composite(f, m, bg)
    assert out.pixels.tolist() == [[[1, 2, 3], [10, 11, 12]]]


def test_composite_idempotent_and_partitions(rng):
    f = random_frame(rng, 20, 15)
    bg = random_frame(rng, 20, 15)
    m = Mask(rng.random((15, 20)) < 0.4)
    once = composite(f, m, bg)
    assert composite(once, m, bg) == once
    matches_f = np.all(once.pixels == f.pixels, axis=2)
    matches_bg = np.all(once.pixels == bg.pixels, axis=2)
    assert (matches_f | matches_bg).all()


def test_composite_hides_mask_external_content(rng):
    # two sources that agree inside the mask give identical outputs:
    # nothing outside the retained regions leaks through
    f1 = random_frame(rng, 20, 15)
    m = Mask(rng.random((15, 20)) < 0.4)
    other = np.array(f1.pixels)
    other[~m.bits] = rng.integers(0, 256, (int((~m.bits).sum()), 3), dtype=np.uint8)
    f2 = Frame(other)
    bg = random_frame(rng, 20, 15)
    assert composite(f1, m, bg) == composite(f2, m, bg)


def test_composite_shape_errors(rng):
    f = random_frame(rng, 8, 8)
    with pytest.raises(ShapeError):
        composite(f, Mask.ones(8, 8), random_frame(rng, 9, 8))
    with pytest.raises(ShapeError):
        composite(f, Mask.ones(4, 4), f)


# --- dilation -------------------------------------------------------------------

def brute_dilate(bits, radius):
    out = np.zeros_like(bits)
    h, w = bits.shape
    for y in range(h):
        for x in range(w):
            if not bits[y, x]:
                continue
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    if dx * dx + dy * dy <= radius * radius:
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w:
                            out[ny, nx] = True
    return out


def test_dilate_matches_brute_force(rng):
    bits = rng.random((18, 24)) < 0.15
    m = Mask(bits)
    assert dilate_mask(m, 0) == m
    for r in (1, 2):
        assert np.array_equal(dilate_mask(m, r).bits, brute_dilate(bits, r))


# --- mask_frame -------------------------------------------------------------------

class SeqSegmenter(Segmenter):
    """Replays a fixed per-frame mask script."""

    def __init__(self, script):
        self.script = list(script)
        self.cursor = 0

    def propose(self, frame):
        return []

    def init_tracks(self, frame, boxes, points):
        return SegmentHandle(entities=(), token="seq")

    def propagate(self, handle, frame):
        masks = self.script[min(self.cursor, len(self.script) - 1)]
        self.cursor += 1
        return masks


def two_entity_session(rng, cfg=None):
    w, h = 32, 24
    frame0 = random_frame(rng, w, h)
    m1 = Mask(np.pad(np.ones((6, 6), bool), ((2, h - 8), (2, w - 8))))
    m2 = Mask(np.pad(np.ones((5, 5), bool), ((12, h - 17), (20, w - 25))))
    init = SessionInit(
        entities=[("gripper", "g", None), ("object", "cube", None)],
        handle=SegmentHandle(entities=(), token="seq"),
        first_masks=[m1, m2],
    )
    session = start_session(init, frame0, cfg or RecomposeConfig())
    return session, frame0, m1, m2


def test_mask_frame_equals_small_op_composition(rng):
    session, frame0, m1, m2 = two_entity_session(rng)
    out = mask_frame(session, frame0, SeqSegmenter([]))
    bg = make_background(session.cfg.background, 32, 24)
    assert out == composite(frame0, union(m1, m2), bg)


def test_mask_frame_all_occluded_is_pure_background(rng):
    session, frame0, m1, m2 = two_entity_session(rng)
    seg = SeqSegmenter([[Mask.zeros(32, 24), Mask.zeros(32, 24)]])
    mask_frame(session, frame0, seg)  # consume pending first masks
    frame1 = random_frame(rng, 32, 24)
    out = mask_frame(session, frame1, seg)
    assert out == make_background(session.cfg.background, 32, 24)
    statuses = entity_statuses(session)
    assert [s["status"] for s in statuses] == ["occluded", "occluded"]
    assert [s["id"] for s in statuses] == [1, 2]


def test_mask_frame_background_cache_is_equivalent(rng):
    session, frame0, m1, m2 = two_entity_session(rng)
    out1 = mask_frame(session, frame0, SeqSegmenter([]))
    assert session.background == make_background(session.cfg.background, 32, 24)
    # fresh session, background recomputed from scratch: identical output
    session2, _, _, _ = two_entity_session(rng=np.random.default_rng(1234))
    out2 = mask_frame(session2, frame0, SeqSegmenter([]))
    assert out1 == out2


def test_mask_frame_dilation_stays_near_boundary(rng):
    session_plain, frame0, m1, m2 = two_entity_session(rng)
    out_plain = mask_frame(session_plain, frame0, SeqSegmenter([]))
    session_dilated, _, _, _ = two_entity_session(
        np.random.default_rng(1234), RecomposeConfig(dilate=2))
    out_dilated = mask_frame(session_dilated, frame0, SeqSegmenter([]))
    diff = np.any(out_plain.pixels != out_dilated.pixels, axis=2)
    ring = dilate_mask(union(m1, m2), 2).bits & ~union(m1, m2).bits
    assert not (diff & ~ring).any()
