"""Episode ingestion and batch transformation.

An episode on disk is a directory holding ``manifest.json`` plus one
lossless PNG per frame. Transformation rewrites every frame through
the masking pipeline and copies the manifest with its opaque ``extras``
untouched, alongside a provenance record and the predicted masks.
Failure granularity is the whole episode: a half-transformed episode is
removed rather than left behind.
"""

from __future__ import annotations

import json
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, imageio
from .backends import BackendBundle
from .core import Frame, Mask, RleMask, decode_rle, encode_rle
from .errors import ArroError, ConfigError, FormatError, FrameError
from .init_pipeline import TaskSpec, initialize_session
from .metrics import latency_report
from .recompose import RecomposeConfig, mask_frame, start_session
from .tracker import TrackerConfig

MANIFEST_NAME = "manifest.json"
MASKS_NAME = "masks.json"
PROVENANCE_NAME = "provenance.json"
MASKS_SCHEMA = "arro-masks/1"
PROVENANCE_SCHEMA = "arro-provenance/1"


@dataclass(frozen=True)
class EpisodeManifest:
    """On-disk description of one demonstration episode."""

    episode_id: str
    fps: float
    resolution: tuple  # (w, h)
    frames: tuple  # ordered frame file names
    extras: tuple = ()  # opaque per-step metadata, passed through untouched

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "extras", tuple(self.extras))
        object.__setattr__(self, "resolution", tuple(int(v) for v in self.resolution))
        if not self.frames:
            raise FormatError("manifest has an empty frame list")

    def to_json(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "fps": self.fps,
            "resolution": list(self.resolution),
            "frames": list(self.frames),
            "extras": list(self.extras),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EpisodeManifest":
        try:
            return cls(
                episode_id=str(obj["episode_id"]),
                fps=float(obj["fps"]),
                resolution=tuple(obj["resolution"]),
                frames=tuple(obj["frames"]),
                extras=tuple(obj.get("extras", ())),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"bad manifest: {e}") from e


def load_manifest(episode_dir) -> EpisodeManifest:
    path = Path(episode_dir) / MANIFEST_NAME
    if not path.is_file():
        raise FormatError(f"missing {MANIFEST_NAME} in {episode_dir}")
    try:
        return EpisodeManifest.from_json(json.loads(path.read_text()))
    except json.JSONDecodeError as e:
        raise FormatError(f"unreadable manifest {path}: {e}") from e


def iter_frames(episode_dir, manifest: EpisodeManifest):
    """Yield frames strictly in manifest order, validating as we go."""
    base = Path(episode_dir)
    w, h = manifest.resolution
    for index, name in enumerate(manifest.frames):
        path = base / name
        try:
            frame = imageio.load_frame(path)
        except FormatError as e:
            raise FrameError(f"frame {index} ({name}): {e}", index=index, file=name) from e
        if (frame.width, frame.height) != (w, h):
            raise FrameError(
                f"frame {index} ({name}) is {frame.width}x{frame.height}, "
                f"manifest says {w}x{h}",
                index=index,
                file=name,
            )
        yield frame


def load_episode(path):
    """(manifest, frame iterator) for an episode directory."""
    manifest = load_manifest(path)
    return manifest, iter_frames(path, manifest)


def write_episode(out_dir, manifest: EpisodeManifest, frames) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, frame in zip(manifest.frames, frames):
        imageio.save_frame(out / name, frame)
    (out / MANIFEST_NAME).write_text(json.dumps(manifest.to_json(), indent=2) + "\n")


# --- mask series files --------------------------------------------------------

def write_masks_file(path, entities: list, masks_per_frame: list) -> None:
    """Persist a per-frame, per-entity mask series as RLE JSON."""
    first = masks_per_frame[0][0] if masks_per_frame and masks_per_frame[0] else None
    payload = {
        "schema": MASKS_SCHEMA,
        "entities": list(entities),
        "width": first.width if first else 0,
        "height": first.height if first else 0,
        "frames": [[encode_rle(m).to_json() for m in per_frame]
                   for per_frame in masks_per_frame],
    }
    Path(path).write_text(json.dumps(payload) + "\n")


def load_masks_file(path):
    """(entities, per-frame mask lists) from a masks file."""
    p = Path(path)
    if not p.is_file():
        raise FormatError(f"missing masks file: {p}")
    try:
        payload = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"unreadable masks file {p}: {e}") from e
    if payload.get("schema") != MASKS_SCHEMA:
        raise FormatError(f"unexpected masks schema {payload.get('schema')!r}")
    frames = [[decode_rle(RleMask.from_json(m)) for m in per_frame]
              for per_frame in payload["frames"]]
    return list(payload.get("entities", ())), frames


def union_series(masks_per_frame: list) -> list:
    """Union of each frame's entity masks, as one mask per frame."""
    out = []
    for per_frame in masks_per_frame:
        bits = np.zeros(per_frame[0].bits.shape, bool) if per_frame else None
        if bits is None:
            raise FormatError("frame without masks in series")
        for m in per_frame:
            bits |= m.bits
        out.append(Mask(bits))
    return out


# --- transformation -------------------------------------------------------------

@dataclass
class EpisodeResult:
    frames: int
    latencies_ms: list


def transform_episode(episode_dir, out_dir, task: TaskSpec, cfg: RecomposeConfig,
                      backends: BackendBundle, tracker_cfg: TrackerConfig | None = None,
                      init_budget_s: float = 30.0) -> EpisodeResult:
    """Rewrite one episode through the masking pipeline.

    Initializes on frame 0, masks every frame in order, and writes
    frames + manifest + predicted masks + provenance to ``out_dir``.
    Any failure removes the partial output and re-raises; the source
    episode is never touched.
    """
    manifest = load_manifest(episode_dir)
    out = Path(out_dir)
    if out.exists():
        raise ConfigError(f"output episode directory already exists: {out}")
    frames = iter_frames(episode_dir, manifest)
    try:
        first = next(frames)
    except StopIteration:  # manifest guarantees nonempty, but stay safe
        raise FormatError("episode has no frames")
    try:
        init = initialize_session(first, task, backends.detector, backends.segmenter,
                                  backends.annotator, budget_s=init_budget_s)
        session = start_session(init, first, cfg, tracker_cfg)
        out.mkdir(parents=True)
        latencies = []
        mask_series = []

        def process(index: int, frame: Frame) -> None:
            t0 = time.perf_counter()
            result = mask_frame(session, frame, backends.segmenter)
            mask_series.append(list(session.last_masks))
            imageio.save_frame(out / manifest.frames[index], result)
            latencies.append((time.perf_counter() - t0) * 1000.0)

        process(0, first)
        for index, frame in enumerate(frames, start=1):
            process(index, frame)
        (out / MANIFEST_NAME).write_text(json.dumps(manifest.to_json(), indent=2) + "\n")
        entities = [f"{role}:{prompt}" if prompt else role
                    for role, prompt, _ in init.entities]
        write_masks_file(out / MASKS_NAME, entities, mask_series)
        provenance = {
            "schema": PROVENANCE_SCHEMA,
            "version": __version__,
            "task": task.to_json(),
            "recompose": cfg.to_json(),
            "backend": backends.describe(),
            "source_episode_id": manifest.episode_id,
        }
        (out / PROVENANCE_NAME).write_text(json.dumps(provenance, indent=2) + "\n")
        backends.segmenter.close(init.handle)
        return EpisodeResult(frames=len(manifest.frames), latencies_ms=latencies)
    except BaseException:
        shutil.rmtree(out, ignore_errors=True)
        raise


@dataclass
class TransformReport:
    requested: int = 0
    processed: int = 0
    failed: int = 0
    episodes: dict = field(default_factory=dict)  # output name -> frame count
    failures: dict = field(default_factory=dict)  # output name -> error category
    wall_clock_s: float = 0.0
    latency: dict | None = None

    def to_json(self) -> dict:
        return {
            "requested": self.requested,
            "processed": self.processed,
            "failed": self.failed,
            "episodes": dict(self.episodes),
            "failures": dict(self.failures),
            "wall_clock_s": self.wall_clock_s,
            "latency": self.latency,
        }


def variant_label(index: int, cfg: RecomposeConfig) -> str:
    return f"variant-{index}-{cfg.background.kind}"


def find_episodes(root) -> list:
    """Episode directories (those holding a manifest) under a dataset root."""
    rootp = Path(root)
    if (rootp / MANIFEST_NAME).is_file():
        return [rootp]
    return sorted(p.parent for p in rootp.glob(f"*/{MANIFEST_NAME}"))


def transform_dataset(root, out_root, task: TaskSpec, cfgs: list,
                      backends: BackendBundle, parallelism: int = 1,
                      tracker_cfg: TrackerConfig | None = None,
                      init_budget_s: float = 30.0) -> TransformReport:
    """Transform every episode under ``root`` once per recompose config.

    Episodes are independent jobs (up to ``parallelism`` workers);
    frames within an episode stay strictly sequential. Failures are
    recorded in the report, never fatal, and outputs are bit-identical
    regardless of worker count.
    """
    episodes = find_episodes(root)
    if not episodes:
        raise ConfigError(f"no episodes (directories with {MANIFEST_NAME}) under {root}")
    if parallelism < 1:
        raise ConfigError("parallelism must be >= 1")
    out_rootp = Path(out_root)
    jobs = []
    for i, cfg in enumerate(cfgs):
        label = variant_label(i, cfg)
        for ep in episodes:
            jobs.append((ep, cfg, out_rootp / label / ep.name, f"{label}/{ep.name}"))
    report = TransformReport(requested=len(jobs))
    started = time.perf_counter()
    all_latencies = []

    def run(job):
        ep, cfg, out_dir, name = job
        try:
            result = transform_episode(ep, out_dir, task, cfg, backends,
                                       tracker_cfg, init_budget_s)
            return name, result, None
        except ArroError as e:
            return name, None, e.category
        except Exception:
            return name, None, "error"

    if parallelism == 1:
        outcomes = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(run, jobs))
    for name, result, failure in outcomes:
        if failure is None:
            report.processed += 1
            report.episodes[name] = result.frames
            all_latencies.extend(result.latencies_ms)
        else:
            report.failed += 1
            report.failures[name] = failure
    report.wall_clock_s = time.perf_counter() - started
    if all_latencies:
        report.latency = latency_report(all_latencies)
    return report
