"""Temporal mask propagation with occlusion tolerance.

Entities keep a constant-velocity motion prior and a hue signature of
their last observation. Candidate masks for a new frame are greedily
matched against predicted masks; unmatched entities emit empty masks
for the frame and keep their identity until they exceed the occlusion
patience window, after which they are marked lost but never renumbered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .colors import histogram_similarity, hue_histogram
from .core import Frame, Mask
from .errors import ShapeError

STATUS_PRESENT = "present"
STATUS_OCCLUDED = "occluded"
STATUS_LOST = "lost"


@dataclass
class TrackerConfig:
    occlusion_patience: int = 30
    iou_gate: float = 0.05
    hist_gate: float = 0.5
    ema_alpha: float = 0.3

    def to_json(self) -> dict:
        return {
            "occlusion_patience": self.occlusion_patience,
            "iou_gate": self.iou_gate,
            "hist_gate": self.hist_gate,
            "ema_alpha": self.ema_alpha,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrackerConfig":
        base = cls()
        return cls(
            occlusion_patience=int(obj.get("occlusion_patience", base.occlusion_patience)),
            iou_gate=float(obj.get("iou_gate", base.iou_gate)),
            hist_gate=float(obj.get("hist_gate", base.hist_gate)),
            ema_alpha=float(obj.get("ema_alpha", base.ema_alpha)),
        )


@dataclass(eq=False)
class Entity:
    """Per-object tracking memory; ids are stable for the whole episode."""

    id: int
    role: str
    prompt: str
    last_mask: Mask  # most recent nonempty observation (empty if never seen)
    signature: np.ndarray | None = None
    velocity: tuple = (0.0, 0.0)
    missing_for: int = 0
    observed: bool = False
    _centroid: tuple = None  # unrounded mean of last observation

    def status(self, patience: int) -> str:
        if self.missing_for == 0 and self.observed:
            return STATUS_PRESENT
        if self.missing_for > patience:
            return STATUS_LOST
        return STATUS_OCCLUDED


@dataclass
class SessionState:
    """Tracking memory for one logical stream; strictly sequential use."""

    entities: list
    config: TrackerConfig = field(default_factory=TrackerConfig)
    frame_index: int = 0

    def __post_init__(self):
        ids = [e.id for e in self.entities]
        if len(ids) != len(set(ids)):
            raise ValueError("entity ids must be unique")


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def _shifted_bits(bits: np.ndarray, dx: int, dy: int) -> np.ndarray:
    out = np.zeros_like(bits)
    h, w = bits.shape
    x0, x1 = max(0, dx), min(w, w + dx)
    y0, y1 = max(0, dy), min(h, h + dy)
    if x0 < x1 and y0 < y1:
        out[y0:y1, x0:x1] = bits[y0 - dy : y1 - dy, x0 - dx : x1 - dx]
    return out


def predict(e: Entity) -> Mask:
    """Constant-velocity prediction of the entity's current mask.

    The last nonempty mask is translated by velocity * (missing_for + 1)
    and clipped at the frame borders; never-observed entities predict an
    empty mask.
    """
    if not e.observed or e.last_mask.empty:
        return Mask(np.zeros_like(e.last_mask.bits))
    steps = e.missing_for + 1
    dx = _round_half_up(e.velocity[0] * steps)
    dy = _round_half_up(e.velocity[1] * steps)
    if dx == 0 and dy == 0:
        return e.last_mask
    return Mask(_shifted_bits(e.last_mask.bits, dx, dy))


def _mask_stats(bits: np.ndarray):
    rows = np.flatnonzero(bits.any(axis=1))
    if rows.size == 0:
        return 0, None
    cols = np.flatnonzero(bits.any(axis=0))
    area = int(np.count_nonzero(bits))
    return area, (int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def _windowed_iou(a_bits, a_area, a_box, b_bits, b_area, b_box) -> float:
    if a_area == 0 or b_area == 0:
        return 0.0
    x0 = max(a_box[0], b_box[0])
    y0 = max(a_box[1], b_box[1])
    x1 = min(a_box[2], b_box[2])
    y1 = min(a_box[3], b_box[3])
    inter = 0
    if x0 < x1 and y0 < y1:
        inter = int(np.count_nonzero(a_bits[y0:y1, x0:x1] & b_bits[y0:y1, x0:x1]))
    return inter / (a_area + b_area - inter)


def _associate_scored(candidates: list, entities: list, cfg: TrackerConfig,
                      frame: Frame):
    """(pairs, candidate signatures); see :func:`associate`."""
    if not candidates or not entities:
        return [], []
    cand_stats = [_mask_stats(c.bits) for c in candidates]
    cand_sigs = [hue_histogram(frame.pixels, c.bits) for c in candidates]
    preds = [predict(e) for e in entities]
    pred_stats = [_mask_stats(p.bits) for p in preds]
    scored = []
    for ei, e in enumerate(entities):
        p_bits, (p_area, p_box) = preds[ei].bits, pred_stats[ei]
        for ci, c in enumerate(candidates):
            c_area, c_box = cand_stats[ci]
            overlap = 0.0
            if p_area and c_area:
                overlap = _windowed_iou(c.bits, c_area, c_box, p_bits, p_area, p_box)
            sim = histogram_similarity(cand_sigs[ci], e.signature)
            if overlap < cfg.iou_gate and sim < cfg.hist_gate:
                continue
            scored.append((-(0.7 * overlap + 0.3 * sim), e.id, ci, ei))
    scored.sort()
    used_c, used_e, pairs = set(), set(), []
    for _, _, ci, ei in scored:
        if ci in used_c or ei in used_e:
            continue
        used_c.add(ci)
        used_e.add(ei)
        pairs.append((ei, ci))
    return pairs, cand_sigs


def associate(candidates: list, entities: list, cfg: TrackerConfig, frame: Frame) -> list:
    """Greedy candidate/entity matching, highest score first.

    score = 0.7 * IoU(candidate, prediction) + 0.3 * hue-signature
    similarity (1 - L1/2). Pairs below both the IoU gate and the
    signature gate stay unmatched; ties break toward the lower entity
    id, then the earlier candidate. Returns (entity_index,
    candidate_index) pairs; each side is used at most once.
    """
    return _associate_scored(candidates, entities, cfg, frame)[0]


def _apply_observation(e: Entity, frame: Frame, mask: Mask, cfg: TrackerConfig,
                       sig: np.ndarray | None = None) -> None:
    idx = np.flatnonzero(mask.bits.ravel())
    ys, xs = np.divmod(idx, mask.width)
    cx, cy = float(xs.mean()), float(ys.mean())
    if e.observed and e._centroid is not None:
        elapsed = e.missing_for + 1
        e.velocity = ((cx - e._centroid[0]) / elapsed, (cy - e._centroid[1]) / elapsed)
    if sig is None:
        sig = hue_histogram(frame.pixels, mask.bits)
    if e.signature is None:
        e.signature = sig
    else:
        e.signature = (1.0 - cfg.ema_alpha) * e.signature + cfg.ema_alpha * sig
    e._centroid = (cx, cy)
    e.last_mask = mask
    e.missing_for = 0
    e.observed = True


def _empty_like(frame: Frame) -> Mask:
    return Mask(np.zeros(frame.pixels.shape[:2], bool))


def step(state: SessionState, frame: Frame, candidates: list):
    """Advance one frame: match candidates, update memory, emit masks.

    Matched entities take their candidate mask; unmatched ones keep
    their identity, increment ``missing_for`` and emit an empty mask.
    The output list follows the fixed entity order. Returns
    (state, masks).
    """
    fshape = frame.pixels.shape[:2]
    for c in candidates:
        if c.bits.shape != fshape:
            raise ShapeError(f"candidate shape {c.bits.shape} != frame {fshape}")
    patience = state.config.occlusion_patience
    active = [e for e in state.entities if e.status(patience) != STATUS_LOST]
    active_index = {id(e): i for i, e in enumerate(active)}
    pairs, cand_sigs = _associate_scored(candidates, active, state.config, frame)
    pairs = dict(pairs)
    out = []
    empty = _empty_like(frame)
    for e in state.entities:
        ai = active_index.get(id(e))
        ci = pairs.get(ai) if ai is not None else None
        if ci is None:
            e.missing_for += 1
            out.append(empty)
        else:
            _apply_observation(e, frame, candidates[ci], state.config,
                               sig=cand_sigs[ci])
            out.append(candidates[ci])
    state.frame_index += 1
    return state, out


def observe(state: SessionState, frame: Frame, masks: list, appearance: bool = True):
    """Book-keep per-entity masks delivered by an external propagator.

    Same memory updates as :func:`step`, but without association: the
    mask list is already aligned to entity order. With
    ``appearance=False`` only presence bookkeeping (mask, missing_for)
    is updated, skipping the hue/velocity refresh; enough for status
    reporting when a separate tracker owns the appearance model.
    """
    if len(masks) != len(state.entities):
        raise ShapeError(f"{len(masks)} masks for {len(state.entities)} entities")
    fshape = frame.pixels.shape[:2]
    for e, m in zip(state.entities, masks):
        if m.bits.shape != fshape:
            raise ShapeError(f"mask shape {m.bits.shape} != frame {fshape}")
        if m.empty:
            e.missing_for += 1
        elif appearance:
            _apply_observation(e, frame, m, state.config)
        else:
            e.last_mask = m
            e.missing_for = 0
            e.observed = True
    state.frame_index += 1
    return state


def init_state(descriptors: list, first_masks: list, frame: Frame,
               cfg: TrackerConfig | None = None) -> SessionState:
    """Build tracking state from (role, prompt) descriptors and the
    masks observed on the first frame."""
    cfg = cfg or TrackerConfig()
    if len(descriptors) != len(first_masks):
        raise ShapeError("descriptor/mask count mismatch")
    entities = []
    for i, ((role, prompt), mask) in enumerate(zip(descriptors, first_masks), start=1):
        e = Entity(id=i, role=role, prompt=prompt, last_mask=mask)
        if not mask.empty:
            _apply_observation(e, frame, mask, cfg)
        else:
            e.missing_for = 1
        entities.append(e)
    return SessionState(entities=entities, config=cfg, frame_index=1)
