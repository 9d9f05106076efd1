"""Greedy NMS with selectable IoU source (full or paired visible boxes)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import MissingBox
from .geometry import Box, pairwise_iou

NMS_MODES = ("full", "visible")


@dataclass
class Detection:
    """A scored detection, optionally carrying both box kinds.

    `full` may be absent before full-body estimation; `visible` may be
    absent for the full-box-only pipeline. At least one must be present.
    """

    score: float
    full: Box | None = None
    visible: Box | None = None
    part_scores: np.ndarray | None = None

    def __post_init__(self):
        if self.full is None and self.visible is None:
            raise MissingBox("detection carries neither a full nor a visible box")

    def box_for(self, mode: str) -> Box:
        box = self.full if mode == "full" else self.visible
        if box is None:
            raise MissingBox(f"detection lacks the {mode} box required by NMS")
        return box


def nms_array(boxes: np.ndarray, scores: np.ndarray, threshold: float) -> list[int]:
    """Greedy suppression on raw arrays; kept indices in score order.

    Ties in score are broken by input order; a box is suppressed when its
    IoU with an already-kept box strictly exceeds `threshold`.
    """
    n = len(boxes)
    if n == 0:
        return []
    order = np.lexsort((np.arange(n), -np.asarray(scores, dtype=np.float64)))
    iou_mat = pairwise_iou(boxes, boxes)
    kept: list[int] = []
    suppressed = np.zeros(n, dtype=bool)
    for i in order:
        if suppressed[i]:
            continue
        kept.append(int(i))
        suppressed |= iou_mat[i] > threshold
    return kept


def greedy_nms(dets: list[Detection], mode: str, threshold: float) -> list[int]:
    """Standard greedy suppression; returns kept indices in score order.

    Detections are visited by descending score (ties broken by input
    order). A detection is suppressed when its IoU, computed on the boxes
    selected by `mode`, with an already-kept detection exceeds `threshold`
    (strictly).
    """
    if mode not in NMS_MODES:
        raise ValueError(f"mode must be one of {NMS_MODES}, got {mode!r}")
    if not dets:
        return []
    boxes = np.array([d.box_for(mode).as_tuple() for d in dets], dtype=np.float64)
    scores = np.array([d.score for d in dets], dtype=np.float64)
    return nms_array(boxes, scores, threshold)


def filter_by_score(dets: list[Detection], min_score: float) -> list[Detection]:
    """Order-preserving subset with score >= min_score."""
    return [d for d in dets if d.score >= min_score]
