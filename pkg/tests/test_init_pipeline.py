import time

import numpy as np
import pytest

from arro.backends import BuiltinSegmenter, ChromaDetector, ColorClass, ColorClassAnnotator
from arro.core import BoundingBox, Frame, Keypoint, Mask, iou
from arro.errors import (
    ConfigError,
    EmptyMaskError,
    GripperUnresolvedError,
    InitTimeoutError,
    PromptUnresolvedError,
    ProtocolError,
    ShapeError,
)
from arro.init_pipeline import (
    AnnotatedFrame,
    TaskSpec,
    initialize_session,
    render_annotations,
    resolve_objects,
    select_keypoints,
)
from arro.testing import ScriptedAnnotator, ScriptedDetector

from conftest import mask_from_pixels

GREEN_CLASS = ColorClass("green", 100.0, 140.0)
BLUE_CLASS = ColorClass("blue", 200.0, 260.0)
GREEN = (30, 220, 40)
BLUE = (20, 40, 230)


def gray(w=120, h=90):
    return Frame(np.full((h, w, 3), 128, np.uint8))


def rect_mask(w, h, x, y, rw, rh):
    bits = np.zeros((h, w), bool)
    bits[y : y + rh, x : x + rw] = True
    return Mask(bits)


def tag_dims(frame_height, digits=1):
    target = max(12.0, frame_height / 45.0)
    scale = max(1, round(target / 7.0))
    return (digits * 5 * scale + (digits - 1) * scale + 2 * scale, 9 * scale)


# --- TaskSpec -----------------------------------------------------------------

def test_task_spec_validation():
    with pytest.raises(ConfigError):
        TaskSpec()
    with pytest.raises(ConfigError):
        TaskSpec(object_prompts=("x",), disambiguation="annotator_spatial")
    with pytest.raises(ConfigError):
        TaskSpec(object_prompts=("x",), disambiguation="magic")
    spec = TaskSpec(object_prompts=("a", "b"), gripper_prompt="g", task_prompt="t")
    assert TaskSpec.from_json(spec.to_json()) == spec


# --- render_annotations -------------------------------------------------------

def test_render_single_tag_at_centroid():
    frame = gray()
    region = rect_mask(120, 90, 44, 54, 13, 13)  # centroid (50, 60)
    af = render_annotations(frame, [region])
    assert len(af.anchors) == 1
    idx, anchor = af.anchors[0]
    assert idx == 1 and (anchor.x, anchor.y) == (50, 60)


def test_render_collision_shifts_down_one_tag_height():
    frame = gray()
    a = rect_mask(120, 90, 44, 34, 13, 13)
    b = rect_mask(120, 90, 44, 34, 13, 13)  # identical centroid
    af = render_annotations(frame, [a, b])
    (_, first), (_, second) = af.anchors
    _, tag_h = tag_dims(90)
    assert second.x == first.x
    assert second.y == first.y + tag_h


def test_render_changes_only_tag_rectangles():
    frame = gray()
    regions = [rect_mask(120, 90, 10, 10, 20, 20), rect_mask(120, 90, 70, 50, 24, 18)]
    af = render_annotations(frame, regions)
    diff = np.any(af.frame.pixels != frame.pixels, axis=2)
    tw, th = tag_dims(90)
    allowed = np.zeros_like(diff)
    for _, anchor in af.anchors:
        x0 = anchor.x - tw // 2
        y0 = anchor.y - th // 2
        allowed[max(0, y0) : y0 + th, max(0, x0) : x0 + tw] = True
    assert not (diff & ~allowed).any()
    assert diff.any()  # tags were actually drawn


def test_render_rejects_empty_region_and_bad_dims():
    frame = gray()
    with pytest.raises(EmptyMaskError):
        render_annotations(frame, [Mask.zeros(120, 90)])
    with pytest.raises(ShapeError):
        render_annotations(frame, [Mask.ones(10, 10)])
    with pytest.raises(EmptyMaskError):
        render_annotations(frame, [])


def test_render_numbering_is_deterministic():
    frame = gray()
    regions = [rect_mask(120, 90, 10, 10, 12, 12), rect_mask(120, 90, 60, 60, 12, 12)]
    a1 = render_annotations(frame, regions)
    a2 = render_annotations(frame, regions)
    assert a1.frame == a2.frame
    assert a1.anchors == a2.anchors


# --- select_keypoints ------------------------------------------------------------

def annotated_fixture():
    frame = gray()
    regions = [
        rect_mask(120, 90, 5, 5, 10, 10),
        rect_mask(120, 90, 30, 5, 10, 10),
        rect_mask(120, 90, 55, 5, 10, 10),
        rect_mask(120, 90, 80, 5, 10, 10),
        rect_mask(120, 90, 5, 40, 10, 10),
    ]
    return render_annotations(frame, regions)


def test_select_keypoints_maps_roles_to_anchors():
    af = annotated_fixture()
    ann = ScriptedAnnotator([(2, "gripper-left"), (5, "gripper-right")])
    spec = TaskSpec(gripper_prompt="green gripper", task_prompt="pick")
    kps = select_keypoints(af, spec, ann)
    assert [k.label for k in kps] == ["gripper-left", "gripper-right"]
    assert af.regions[1].bits[kps[0].y, kps[0].x]
    assert af.regions[4].bits[kps[1].y, kps[1].x]


def test_select_keypoints_missing_gripper_role():
    af = annotated_fixture()
    ann = ScriptedAnnotator([(2, "gripper-left")])
    spec = TaskSpec(gripper_prompt="green gripper")
    with pytest.raises(GripperUnresolvedError):
        select_keypoints(af, spec, ann)


def test_select_keypoints_object_role():
    af = annotated_fixture()
    ann = ScriptedAnnotator([(1, "gripper-left"), (2, "gripper-right"),
                             (3, "object:red cross")])
    spec = TaskSpec(gripper_prompt="g", task_prompt="push to the red cross")
    kps = select_keypoints(af, spec, ann)
    assert kps[2].label == "object:red cross"
    assert af.regions[2].bits[kps[2].y, kps[2].x]


def test_select_keypoints_out_of_range_index():
    af = annotated_fixture()
    ann = ScriptedAnnotator([(9, "gripper-left"), (5, "gripper-right")])
    spec = TaskSpec(gripper_prompt="g")
    with pytest.raises(ProtocolError):
        select_keypoints(af, spec, ann)


def test_select_keypoint_snaps_into_concave_region():
    # U-shaped region whose centroid falls in the cavity
    frame = gray()
    pixels = [(x, 20) for x in range(20, 31)]
    pixels += [(20, y) for y in range(10, 20)] + [(30, y) for y in range(10, 20)]
    region = mask_from_pixels(120, 90, pixels)
    af = render_annotations(frame, [region])
    kps = select_keypoints(af, TaskSpec(gripper_prompt="g"),
                           ScriptedAnnotator([(1, "gripper-left"), (1, "gripper-right")]))
    # duplicate indices are fine (one region can seed both roles is nonsense,
    # but the roles are distinct); both keypoints must be inside the mask
    for k in kps:
        assert region.bits[k.y, k.x]


# --- resolve_objects -----------------------------------------------------------------

def test_resolve_argmax_picks_highest_score():
    det = ScriptedDetector({"cube": [BoundingBox(5, 5, 10, 10, 0.6),
                                     BoundingBox(40, 5, 10, 10, 0.9)]})
    spec = TaskSpec(object_prompts=("cube",))
    [(prompt, box)] = resolve_objects(gray(), spec, det)
    assert prompt == "cube" and box.x == 40


def test_resolve_argmax_scale_invariance():
    boxes = [BoundingBox(5, 5, 10, 10, 0.3), BoundingBox(40, 5, 10, 10, 0.45),
             BoundingBox(70, 5, 10, 10, 0.1)]
    spec = TaskSpec(object_prompts=("cube",))
    pick1 = resolve_objects(gray(), spec, ScriptedDetector({"cube": boxes}))[0][1]
    scaled = [BoundingBox(b.x, b.y, b.w, b.h, b.score * 2) for b in boxes]
    pick2 = resolve_objects(gray(), spec, ScriptedDetector({"cube": scaled}))[0][1]
    assert (pick1.x, pick1.y) == (pick2.x, pick2.y)


def test_resolve_spatial_uses_annotator_choice():
    det = ScriptedDetector({"blue cube": [BoundingBox(5, 5, 10, 10, 0.5),
                                          BoundingBox(40, 5, 10, 10, 0.5)]})
    ann = ScriptedAnnotator([(2, "object:blue cube")])
    spec = TaskSpec(object_prompts=("blue cube",), task_prompt="push the blue cube",
                    disambiguation="annotator_spatial")
    [(_, box)] = resolve_objects(gray(), spec, det, ann)
    assert box.x == 40


def test_resolve_unknown_prompt_fails_loudly():
    spec = TaskSpec(object_prompts=("purple pyramid",))
    with pytest.raises(PromptUnresolvedError) as err:
        resolve_objects(gray(), spec, ScriptedDetector({}))
    assert "purple pyramid" in str(err.value)


# --- initialize_session -----------------------------------------------------------------

def gripper_scene():
    arr = np.full((60, 80, 3), 128, np.uint8)
    arr[10:20, 10:16] = GREEN  # left finger
    arr[10:20, 26:32] = GREEN  # right finger
    arr[40:50, 50:60] = BLUE  # cube
    frame = Frame(arr)
    gripper_truth = rect_mask(80, 60, 10, 10, 6, 10)
    gripper_truth = Mask(gripper_truth.bits | rect_mask(80, 60, 26, 10, 6, 10).bits)
    cube_truth = rect_mask(80, 60, 50, 40, 10, 10)
    return frame, gripper_truth, cube_truth


def builtin_backends():
    classes = [GREEN_CLASS, BLUE_CLASS]
    return (ChromaDetector(classes, min_area=8),
            BuiltinSegmenter(classes, min_area=8),
            ScriptedAnnotator([(2, "gripper-left"), (3, "gripper-right")]))


def test_initialize_full_scene():
    frame, gripper_truth, cube_truth = gripper_scene()
    det, seg, ann = builtin_backends()
    spec = TaskSpec(object_prompts=("blue cube",), gripper_prompt="green gripper",
                    task_prompt="pick the blue cube")
    init = initialize_session(frame, spec, det, seg, ann)
    assert [(role, prompt) for role, prompt, _ in init.entities] == [
        ("object", "blue cube"), ("gripper", "green gripper")]
    assert iou(init.first_masks[0], cube_truth) >= 0.9
    assert iou(init.first_masks[1], gripper_truth) >= 0.9
    assert init.annotated is not None


def big_gripper_scene():
    # regions large enough that the drawn number tags keep them intact
    arr = np.full((240, 320, 3), 128, np.uint8)
    arr[60:120, 60:84] = GREEN  # left finger, 24x60
    arr[60:120, 140:164] = GREEN  # right finger
    arr[160:220, 220:280] = BLUE  # cube, 60x60
    frame = Frame(arr)
    gripper_truth = Mask(rect_mask(320, 240, 60, 60, 24, 60).bits
                         | rect_mask(320, 240, 140, 60, 24, 60).bits)
    cube_truth = rect_mask(320, 240, 220, 160, 60, 60)
    return frame, gripper_truth, cube_truth


def test_initialize_with_color_class_annotator():
    frame, gripper_truth, _ = big_gripper_scene()
    classes = [GREEN_CLASS, BLUE_CLASS]
    ann = ColorClassAnnotator(classes, gripper_class="green", min_area=8)
    spec = TaskSpec(gripper_prompt="green gripper", task_prompt="move")
    init = initialize_session(frame, spec, ChromaDetector(classes, min_area=8),
                              BuiltinSegmenter(classes, min_area=8), ann)
    assert len(init.entities) == 1
    assert init.entities[0][0] == "gripper"
    assert iou(init.first_masks[0], gripper_truth) >= 0.9


def test_initialize_gripper_only_is_single_entity():
    frame, _, _ = gripper_scene()
    det, seg, ann = builtin_backends()
    spec = TaskSpec(gripper_prompt="green gripper")
    init = initialize_session(frame, spec, det, seg, ann)
    assert len(init.entities) == 1
    assert init.entities[0][0] == "gripper"


def test_initialize_aborts_naming_unresolved_prompt():
    frame, _, _ = gripper_scene()
    det, seg, ann = builtin_backends()
    spec = TaskSpec(object_prompts=("purple pyramid",))
    with pytest.raises(PromptUnresolvedError) as err:
        initialize_session(frame, spec, det, seg, ann)
    assert err.value.prompt == "purple pyramid"


def test_initialize_touches_only_first_frame():
    frame, _, _ = gripper_scene()
    det, seg, ann = builtin_backends()

    seen = []
    orig = seg.propagate

    def spy(handle, f):
        seen.append(f)
        return orig(handle, f)

    seg.propagate = spy
    spec = TaskSpec(gripper_prompt="green gripper")
    initialize_session(frame, spec, det, seg, ann)
    assert len(seen) == 1 and seen[0] is frame


def test_initialize_budget_timeout():
    frame, _, _ = gripper_scene()
    det, seg, ann = builtin_backends()

    orig = seg.propose

    def slow(f):
        time.sleep(0.05)
        return orig(f)

    seg.propose = slow
    spec = TaskSpec(gripper_prompt="green gripper")
    with pytest.raises(InitTimeoutError):
        initialize_session(frame, spec, det, seg, ann, budget_s=0.01)
