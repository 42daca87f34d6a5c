"""Deterministic synthetic scenes with exact ground-truth masks.

Desk-scale stand-in for recorded robot scenes: colored rect/disc actors
move over a solid or cluttered background, optionally deform or get
hidden by an occluding rectangle for a frame interval. Regeneration
from the same config is bit-identical, so golden files are legitimate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Frame, Mask
from .errors import ConfigError


@dataclass(frozen=True)
class Occluder:
    """Rectangle drawn over the scene during [first, last] (inclusive)."""

    x: int
    y: int
    w: int
    h: int
    first: int
    last: int
    color: tuple = (70, 70, 70)

    def active(self, t: int) -> bool:
        return self.first <= t <= self.last


@dataclass(frozen=True)
class Actor:
    name: str
    shape: str  # "rect" | "disc"
    color: tuple
    start: tuple  # rect: top-left, disc: center
    velocity: tuple = (0.0, 0.0)
    size: tuple = (10, 10)  # rect: (w, h); disc: (radius, radius)
    role: str = "object"
    deform: tuple | None = None  # per-frame scale factors
    occluder: Occluder | None = None

    def __post_init__(self):
        if self.shape not in ("rect", "disc"):
            raise ConfigError(f"unknown actor shape {self.shape!r}")


@dataclass(frozen=True)
class SynthSceneConfig:
    width: int
    height: int
    length: int
    actors: tuple
    fps: float = 15.0
    background: dict = field(default_factory=lambda: {"kind": "solid", "color": [110, 110, 110]})
    episode_id: str = "synthetic"

    def __post_init__(self):
        object.__setattr__(self, "actors", tuple(self.actors))
        if self.length < 1:
            raise ConfigError("sequence length must be >= 1")
        if self.width < 1 or self.height < 1:
            raise ConfigError("resolution must be positive")

    def to_json(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "resolution": [self.width, self.height],
            "length": self.length,
            "fps": self.fps,
            "background": self.background,
            "actors": [_actor_to_json(a) for a in self.actors],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SynthSceneConfig":
        try:
            w, h = obj["resolution"]
            return cls(
                width=int(w),
                height=int(h),
                length=int(obj["length"]),
                fps=float(obj.get("fps", 15.0)),
                background=dict(obj.get("background", {"kind": "solid", "color": [110, 110, 110]})),
                actors=tuple(_actor_from_json(a) for a in obj.get("actors", ())),
                episode_id=str(obj.get("episode_id", "synthetic")),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad scene config: {e}") from e

    @classmethod
    def load(cls, path) -> "SynthSceneConfig":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot load scene config from {path}: {e}") from e


def _actor_to_json(a: Actor) -> dict:
    out = {
        "name": a.name,
        "shape": a.shape,
        "color": list(a.color),
        "start": list(a.start),
        "velocity": list(a.velocity),
        "size": list(a.size),
        "role": a.role,
    }
    if a.deform is not None:
        out["deform"] = list(a.deform)
    if a.occluder is not None:
        o = a.occluder
        out["occluder"] = {"rect": [o.x, o.y, o.w, o.h], "frames": [o.first, o.last],
                           "color": list(o.color)}
    return out


def _actor_from_json(obj: dict) -> Actor:
    occ = None
    if "occluder" in obj and obj["occluder"] is not None:
        o = obj["occluder"]
        x, y, w, h = o["rect"]
        first, last = o["frames"]
        occ = Occluder(int(x), int(y), int(w), int(h), int(first), int(last),
                       tuple(o.get("color", (70, 70, 70))))
    return Actor(
        name=str(obj["name"]),
        shape=str(obj["shape"]),
        color=tuple(int(v) for v in obj["color"]),
        start=tuple(obj["start"]),
        velocity=tuple(obj.get("velocity", (0.0, 0.0))),
        size=tuple(obj.get("size", (10, 10))),
        role=str(obj.get("role", "object")),
        deform=tuple(obj["deform"]) if obj.get("deform") is not None else None,
        occluder=occ,
    )


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def _actor_bits(a: Actor, t: int, width: int, height: int) -> np.ndarray:
    scale = 1.0
    if a.deform is not None:
        scale = a.deform[min(t, len(a.deform) - 1)]
    px = a.start[0] + a.velocity[0] * t
    py = a.start[1] + a.velocity[1] * t
    bits = np.zeros((height, width), bool)
    if a.shape == "rect":
        w0, h0 = a.size
        w = max(1, _round_half_up(w0 * scale))
        h = max(1, _round_half_up(h0 * scale))
        cx, cy = px + w0 / 2.0, py + h0 / 2.0  # deform about the rect center
        x0 = _round_half_up(cx - w / 2.0)
        y0 = _round_half_up(cy - h / 2.0)
        xs0, xs1 = max(0, x0), min(width, x0 + w)
        ys0, ys1 = max(0, y0), min(height, y0 + h)
        if xs0 < xs1 and ys0 < ys1:
            bits[ys0:ys1, xs0:xs1] = True
    else:
        r = max(1, _round_half_up(a.size[0] * scale))
        cx, cy = _round_half_up(px), _round_half_up(py)
        yy, xx = np.mgrid[0:height, 0:width]
        bits = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    return bits


def _background_array(cfg: SynthSceneConfig) -> np.ndarray:
    bg = cfg.background
    kind = bg.get("kind", "solid")
    arr = np.empty((cfg.height, cfg.width, 3), np.uint8)
    if kind == "solid":
        arr[:, :] = np.asarray(bg.get("color", [110, 110, 110]), np.uint8)
    elif kind == "clutter":
        arr[:, :] = np.asarray(bg.get("color", [110, 110, 110]), np.uint8)
        rng = np.random.default_rng(int(bg.get("seed", 0)))
        count = int(bg.get("count", 30))
        palette = bg.get("palette")
        for _ in range(count):
            x = int(rng.integers(0, max(1, cfg.width - 8)))
            y = int(rng.integers(0, max(1, cfg.height - 8)))
            w = int(rng.integers(6, max(7, cfg.width // 6)))
            h = int(rng.integers(6, max(7, cfg.height // 6)))
            if palette:
                color = palette[int(rng.integers(0, len(palette)))]
            else:
                color = rng.integers(0, 256, 3)
            arr[y : y + h, x : x + w] = np.asarray(color, np.uint8)
    else:
        raise ConfigError(f"unknown background kind {kind!r}")
    return arr


@dataclass
class SynthEpisode:
    config: SynthSceneConfig
    frames: list  # [Frame]
    truth: list  # per frame: [Mask per actor]

    @property
    def actor_names(self) -> list:
        return [a.name for a in self.config.actors]

    def truth_union(self) -> list:
        out = []
        for per_actor in self.truth:
            bits = np.zeros((self.config.height, self.config.width), bool)
            for m in per_actor:
                bits |= m.bits
            out.append(Mask(bits))
        return out


def write_episode_dir(episode: SynthEpisode, out_dir) -> None:
    """Write an episode directory (frames + manifest) plus the exact
    ground-truth mask series, consumable by the dataset loader."""
    from .dataset import MASKS_NAME, EpisodeManifest, write_episode, write_masks_file

    cfg = episode.config
    names = tuple(f"frame_{i:05d}.png" for i in range(cfg.length))
    manifest = EpisodeManifest(
        episode_id=cfg.episode_id,
        fps=cfg.fps,
        resolution=(cfg.width, cfg.height),
        frames=names,
        extras=tuple({"step": t} for t in range(cfg.length)),
    )
    write_episode(out_dir, manifest, episode.frames)
    write_masks_file(Path(out_dir) / MASKS_NAME, episode.actor_names, episode.truth)


def generate(cfg: SynthSceneConfig) -> SynthEpisode:
    """Render all frames plus exact per-actor visibility masks.

    Actors draw in list order (later over earlier); active occluders
    draw last. Ground truth is each actor's visible pixels: its raster
    minus later actors and active occluders.
    """
    base = _background_array(cfg)
    frames, truth = [], []
    for t in range(cfg.length):
        canvas = base.copy()
        rasters = [_actor_bits(a, t, cfg.width, cfg.height) for a in cfg.actors]
        for a, bits in zip(cfg.actors, rasters):
            canvas[bits] = np.asarray(a.color, np.uint8)
        occ_bits = np.zeros((cfg.height, cfg.width), bool)
        for a in cfg.actors:
            o = a.occluder
            if o is not None and o.active(t):
                canvas[o.y : o.y + o.h, o.x : o.x + o.w] = np.asarray(o.color, np.uint8)
                occ_bits[o.y : o.y + o.h, o.x : o.x + o.w] = True
        per_actor = []
        for i, bits in enumerate(rasters):
            visible = bits.copy()
            for later in rasters[i + 1 :]:
                visible &= ~later
            visible &= ~occ_bits
            per_actor.append(Mask(visible))
        frames.append(Frame(canvas))
        truth.append(per_actor)
    return SynthEpisode(config=cfg, frames=frames, truth=truth)
