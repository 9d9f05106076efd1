"""Static visualization output: detection overlays and metric curves.

Overlays draw detected visible boxes in green, estimated full boxes in
orange, the five-part grid with per-part visibility scores in red, and
boxes removed by NMS in dashed gray. Images are upscaled so box edges
and score text stay readable at desk-scale resolutions.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .geometry import Box, divide_parts
from .nms import Detection

VISIBLE_COLOR = (40, 220, 60)
FULL_COLOR = (255, 170, 30)
PART_COLOR = (230, 60, 60)
SUPPRESSED_COLOR = (180, 180, 180)
_SCALE = 4


def _dashed_rectangle(draw: ImageDraw.ImageDraw, xy, color, dash=6, width=1):
    x1, y1, x2, y2 = xy
    segments = []
    for a, b in (((x1, y1), (x2, y1)), ((x2, y1), (x2, y2)),
                 ((x2, y2), (x1, y2)), ((x1, y2), (x1, y1))):
        length = max(abs(b[0] - a[0]), abs(b[1] - a[1]))
        steps = max(int(length // dash), 1)
        for s in range(0, steps, 2):
            t0 = s / steps
            t1 = min((s + 1) / steps, 1.0)
            segments.append((
                a[0] + (b[0] - a[0]) * t0, a[1] + (b[1] - a[1]) * t0,
                a[0] + (b[0] - a[0]) * t1, a[1] + (b[1] - a[1]) * t1,
            ))
    for seg in segments:
        draw.line(seg, fill=color, width=width)


def _scaled(box: Box):
    return tuple(v * _SCALE for v in box.as_tuple())


def render_overlay(
    image: np.ndarray,
    detections: list[Detection],
    suppressed: list[Detection] | None = None,
    draw_parts: bool = True,
) -> Image.Image:
    """Compose one annotated PIL image from detections on `image`."""
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    canvas = Image.fromarray(arr).resize(
        (arr.shape[1] * _SCALE, arr.shape[0] * _SCALE), Image.NEAREST
    )
    draw = ImageDraw.Draw(canvas)
    for det in suppressed or []:
        box = det.visible if det.visible is not None else det.full
        _dashed_rectangle(draw, _scaled(box), SUPPRESSED_COLOR, width=1)
    for det in detections:
        if det.full is not None:
            draw.rectangle(_scaled(det.full), outline=FULL_COLOR, width=2)
            if draw_parts and det.part_scores is not None:
                for part, score in zip(divide_parts(det.full), det.part_scores):
                    draw.rectangle(_scaled(part), outline=PART_COLOR, width=1)
                    x1, y1, _, _ = _scaled(part)
                    draw.text((x1 + 2, y1 + 1), f"{score:.2f}", fill=PART_COLOR)
        if det.visible is not None:
            draw.rectangle(_scaled(det.visible), outline=VISIBLE_COLOR, width=2)
        anchor_box = det.visible if det.visible is not None else det.full
        x1, y1, _, _ = _scaled(anchor_box)
        draw.text((x1 + 2, max(y1 - 12, 0)), f"{det.score:.2f}", fill=VISIBLE_COLOR)
    return canvas


def save_overlay(path, image, detections, suppressed=None, draw_parts=True):
    render_overlay(image, detections, suppressed, draw_parts).save(path)


def plot_metric_curves(metrics, out_dir, prefix: str = "") -> list[Path]:
    """Write PR and FPPI-missrate curves as PNG files; returns the paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(metrics.recalls, metrics.precisions)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_title(f"PR (AP={metrics.ap:.4f} @ IoU {metrics.iou_threshold})")
    ax.grid(True, alpha=0.3)
    pr_path = out_dir / f"{prefix}pr_curve.png"
    fig.savefig(pr_path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(pr_path)

    fig, ax = plt.subplots(figsize=(5, 4))
    fppi = np.maximum(metrics.fppi, 1e-4)
    miss = np.maximum(metrics.miss_rates, 1e-4)
    ax.loglog(fppi, miss)
    ax.set_xlabel("FPPI")
    ax.set_ylabel("miss rate")
    ax.set_title(f"miss rate vs FPPI (MR-2={metrics.mr2:.4f})")
    ax.grid(True, which="both", alpha=0.3)
    mr_path = out_dir / f"{prefix}fppi_missrate.png"
    fig.savefig(mr_path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(mr_path)
    return written
