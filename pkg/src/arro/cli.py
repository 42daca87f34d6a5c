"""Operator command line: init, transform, serve, synth, eval.

Each subcommand is a thin composition of library calls. Configuration
is file-first (JSON) with flags layered on top, so a run is
reproducible from its artifacts alone. Exit codes: 0 success, 1
operational failure (with a single machine-parseable error line on
stderr), 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__, imageio, metrics
from .backends import (
    BackendBundle,
    ColorClass,
    DEFAULT_COLOR_CLASSES,
    builtin_bundle,
    remote_bundle,
)
from .core import BoundingBox, encode_rle
from .dataset import MASKS_NAME, load_masks_file, transform_dataset, union_series
from .errors import ArroError, ConfigError
from .init_pipeline import TaskSpec, initialize_session
from .recompose import RecomposeConfig
from .service import ServiceLimits, parse_bind, serve
from .synthgen import SynthSceneConfig, generate, write_episode_dir
from .tracker import TrackerConfig


def _add_backend_args(sub):
    sub.add_argument("--backend", default=None,
                     help="'builtin' or a gateway URL (default: $ARRO_BACKEND_URL or builtin)")
    sub.add_argument("--colors", default=None,
                     help="JSON list of color classes for the builtin backend")
    sub.add_argument("--min-area", type=int, default=16,
                     help="smallest tracked region in pixels (builtin backend)")
    sub.add_argument("--tracker", default=None, help="tracker config JSON file")


def _load_classes(path):
    if path is None:
        return DEFAULT_COLOR_CLASSES
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot load color classes from {path}: {e}") from e
    return tuple(ColorClass.from_json(obj) for obj in raw)


def _load_tracker_cfg(path):
    if path is None:
        return None
    try:
        return TrackerConfig.from_json(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot load tracker config from {path}: {e}") from e


def _build_backends(args) -> BackendBundle:
    backend = args.backend or os.environ.get("ARRO_BACKEND_URL") or "builtin"
    if backend == "builtin":
        return builtin_bundle(_load_classes(args.colors), args.min_area,
                              _load_tracker_cfg(args.tracker))
    return remote_bundle(backend)


def _seed_json(seed):
    if isinstance(seed, BoundingBox):
        return {"box": {"x": seed.x, "y": seed.y, "w": seed.w, "h": seed.h,
                        "score": seed.score}}
    return {"points": [{"x": p.x, "y": p.y, "role": p.label} for p in seed]}


def cmd_init(args) -> int:
    frame = imageio.load_frame(args.frame)
    task = TaskSpec.load(args.task)
    backends = _build_backends(args)
    init = initialize_session(frame, task, backends.detector, backends.segmenter,
                              backends.annotator, budget_s=args.budget)
    out = Path(args.out)
    diagnostics = {
        "schema": "arro-session/1",
        "version": __version__,
        "task": task.to_json(),
        "backend": backends.describe(),
        "entities": [
            {"role": role, "prompt": prompt, "seed": _seed_json(seed)}
            for role, prompt, seed in init.entities
        ],
        "first_masks": [encode_rle(m).to_json() for m in init.first_masks],
    }
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(diagnostics, indent=2) + "\n")
    if init.annotated is not None:
        annotated_path = out.with_suffix(".annotated.png")
        imageio.save_frame(annotated_path, init.annotated.frame)
        print(f"annotated frame: {annotated_path}")
    print(f"initialized {len(init.entities)} entities -> {out}")
    return 0


def cmd_transform(args) -> int:
    task = TaskSpec.load(args.task)
    cfgs = [RecomposeConfig.load(p) for p in args.recompose] or [RecomposeConfig()]
    backends = _build_backends(args)
    report = transform_dataset(args.dataset, args.out, task, cfgs, backends,
                               parallelism=args.parallel,
                               tracker_cfg=_load_tracker_cfg(args.tracker))
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_json(), indent=2) + "\n")
    print(f"processed {report.processed}/{report.requested} episodes "
          f"({report.failed} failed) in {report.wall_clock_s:.1f}s -> {args.out}")
    for name, category in sorted(report.failures.items()):
        print(f"failed {name}: {category}", file=sys.stderr)
    if report.processed == 0:
        return 1
    return 1 if (report.failed and args.strict) else 0


def cmd_serve(args) -> int:
    backends = _build_backends(args)
    limits = ServiceLimits.load(args.limits) if args.limits else ServiceLimits()
    parse_bind(args.bind)
    server = serve(args.bind, backends, limits, _load_tracker_cfg(args.tracker))
    print(f"serving on {server.url} (Ctrl-C to stop)")
    try:
        server.httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


def cmd_synth(args) -> int:
    cfg = SynthSceneConfig.load(args.config)
    episode = generate(cfg)
    write_episode_dir(episode, args.out)
    print(f"wrote {cfg.length} frames ({cfg.width}x{cfg.height}) -> {args.out}")
    return 0


def _episode_mask_files(root: Path) -> dict:
    if (root / MASKS_NAME).is_file():
        return {".": root / MASKS_NAME}
    return {p.parent.name: p for p in sorted(root.glob(f"*/{MASKS_NAME}"))}


def cmd_eval(args) -> int:
    if not (args.pred and args.truth) and not args.latencies:
        raise ConfigError("need --pred and --truth, or --latencies")
    quality = consistency = None
    shared = []
    pred_files = truth_files = {}
    if args.pred and args.truth:
        pred_root, truth_root = Path(args.pred), Path(args.truth)
        pred_files = _episode_mask_files(pred_root)
        truth_files = _episode_mask_files(truth_root)
        shared = sorted(set(pred_files) & set(truth_files))
        if not shared and not args.latencies:
            raise ConfigError(
                f"no overlapping episodes with {MASKS_NAME} under {pred_root} "
                f"and {truth_root}")
    if shared:
        per_frame, transitions = [], []
        for name in shared:
            _, pred_series = load_masks_file(pred_files[name])
            _, truth_series = load_masks_file(truth_files[name])
            pred_union = union_series(pred_series)
            truth_union = union_series(truth_series)
            per_frame.extend(
                metrics.mask_quality(pred_union, truth_union)["per_frame"])
            if len(pred_union) >= 2:
                transitions.extend(metrics.temporal_consistency(pred_union))
        quality = {"per_frame": per_frame, "mean": sum(per_frame) / len(per_frame),
                   "min": min(per_frame)}
        consistency = transitions or None
    latency = None
    if args.latencies:
        samples = json.loads(Path(args.latencies).read_text())
        latency = metrics.latency_report(samples)
    report = metrics.build_report(
        quality=quality, consistency=consistency, latency=latency,
        meta={"pred": args.pred, "truth": args.truth,
              "episodes": shared, "version": __version__},
    )
    metrics.save_report(report, args.out)
    if args.plots:
        metrics.save_plots(report, args.plots)
    sys.stdout.write(metrics.report_text(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arro",
        description="Segment task-relevant regions, track them, and recompose "
                    "robot camera frames onto a virtual background.",
    )
    parser.add_argument("--version", action="version", version=f"arro {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("init", help="run first-frame initialization once and dump diagnostics")
    p.add_argument("--frame", required=True, help="first frame (PNG)")
    p.add_argument("--task", required=True, help="task spec JSON")
    p.add_argument("--out", required=True, help="diagnostics JSON output")
    p.add_argument("--budget", type=float, default=30.0, help="init wall-clock budget (s)")
    _add_backend_args(p)
    p.set_defaults(func=cmd_init)

    p = subs.add_parser("transform", help="batch-transform a dataset of episodes")
    p.add_argument("--dataset", required=True, help="input dataset root")
    p.add_argument("--task", required=True, help="task spec JSON")
    p.add_argument("--recompose", action="append", default=[],
                   help="recompose config JSON (repeat for multiple variants)")
    p.add_argument("--parallel", type=int, default=1, help="episode-level workers")
    p.add_argument("--out", required=True, help="output dataset root")
    p.add_argument("--report", default=None, help="write the transform report JSON here")
    p.add_argument("--strict", action="store_true",
                   help="exit nonzero if any episode failed")
    _add_backend_args(p)
    p.set_defaults(func=cmd_transform)

    p = subs.add_parser("serve", help="run the real-time masking service")
    p.add_argument("--bind", required=True, help="HOST:PORT")
    p.add_argument("--limits", default=None, help="service limits JSON")
    _add_backend_args(p)
    p.set_defaults(func=cmd_serve)

    p = subs.add_parser("synth", help="generate a synthetic episode with ground truth")
    p.add_argument("--config", required=True, help="scene config JSON")
    p.add_argument("--out", required=True, help="episode output directory")
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("--pred", default=None, help="episode dir or tree with masks.json")
    p.add_argument("--truth", default=None, help="episode dir or tree with masks.json")
    p.add_argument("--out", required=True, help="report JSON output")
    p.add_argument("--plots", default=None, help="directory for PNG charts")
    p.add_argument("--latencies", default=None,
                   help="JSON list of per-frame milliseconds to fold into the report")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ArroError as e:
        print(f"error: {e.category}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
