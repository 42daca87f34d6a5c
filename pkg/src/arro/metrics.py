"""Mask-quality, temporal-consistency and latency metrics.

Reports are pure functions of their inputs: JSON for machines, a flat
text rendering for humans, and optional PNG line charts.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from .core import Mask, iou
from .errors import InputError, ShapeError

REPORT_SCHEMA = "arro-eval/1"


def mask_quality(pred: list, truth: list) -> dict:
    """Per-frame IoU between predicted and ground-truth masks.

    Frames where both masks are empty score 1.0. Returns the series
    plus its mean and min.
    """
    if len(pred) != len(truth):
        raise ShapeError(f"{len(pred)} predicted frames vs {len(truth)} truth frames")
    if not pred:
        raise InputError("no frames to score")
    series = [iou(p, t) for p, t in zip(pred, truth)]
    return {
        "per_frame": series,
        "mean": sum(series) / len(series),
        "min": min(series),
    }


def temporal_consistency(pred: list) -> list:
    """IoU between consecutive masks; length n-1.

    Empty-to-empty transitions (occlusion gaps) score 1.0.
    """
    if len(pred) < 2:
        raise InputError("temporal consistency needs at least 2 frames")
    return [iou(a, b) for a, b in zip(pred[:-1], pred[1:])]


def _nearest_rank(sorted_samples: list, q: float) -> float:
    rank = max(1, math.ceil(q / 100.0 * len(sorted_samples)))
    return sorted_samples[rank - 1]


def latency_report(samples_ms: list) -> dict:
    """Nearest-rank percentiles plus the fps equivalent of the mean."""
    if not samples_ms:
        raise InputError("no latency samples")
    s = sorted(float(v) for v in samples_ms)
    mean = sum(s) / len(s)
    return {
        "count": len(s),
        "p50_ms": _nearest_rank(s, 50),
        "p95_ms": _nearest_rank(s, 95),
        "p99_ms": _nearest_rank(s, 99),
        "max_ms": s[-1],
        "mean_ms": mean,
        "fps": math.inf if mean == 0 else 1000.0 / mean,
    }


def build_report(quality: dict | None = None, consistency: list | None = None,
                 latency: dict | None = None, meta: dict | None = None) -> dict:
    rep = {"schema": REPORT_SCHEMA}
    if meta:
        rep["meta"] = dict(meta)
    if quality is not None:
        rep["mask_quality"] = quality
    if consistency is not None:
        rep["temporal_consistency"] = {
            "per_transition": list(consistency),
            "mean": sum(consistency) / len(consistency),
            "min": min(consistency),
        }
    if latency is not None:
        rep["latency"] = latency
    return rep


def report_text(rep: dict) -> str:
    """Flat one-metric-per-line rendering of a report dict."""
    lines = [f"schema: {rep['schema']}"]

    def walk(prefix, obj):
        if isinstance(obj, dict):
            for k, v in obj.items():
                walk(f"{prefix}.{k}" if prefix else k, v)
        elif isinstance(obj, list):
            if len(obj) > 12:
                lines.append(f"{prefix}: [{len(obj)} values]")
            else:
                lines.append(f"{prefix}: {obj}")
        else:
            lines.append(f"{prefix}: {obj}")

    for key in ("meta", "mask_quality", "temporal_consistency", "latency"):
        if key in rep:
            walk(key, rep[key])
    return "\n".join(lines) + "\n"


def save_report(rep: dict, path) -> None:
    Path(path).write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())


def save_plots(rep: dict, out_dir) -> list:
    """Optional PNG line charts for whatever series the report holds."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    series = []
    if "mask_quality" in rep:
        series.append(("iou", "mask IoU per frame", rep["mask_quality"]["per_frame"]))
    if "temporal_consistency" in rep:
        series.append(("consistency", "consecutive-frame IoU",
                       rep["temporal_consistency"]["per_transition"]))
    for name, title, values in series:
        fig, ax = plt.subplots(figsize=(6, 3))
        ax.plot(values)
        ax.set_ylim(0.0, 1.05)
        ax.set_title(title)
        ax.set_xlabel("frame")
        fig.tight_layout()
        path = out / f"{name}.png"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written
