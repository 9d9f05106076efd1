"""Detection evaluation: greedy matching, AP, log-average miss rate, recall.

Matching follows the standard single-class protocol: detections are
processed in descending score order, each taking its best-IoU unmatched
non-ignore ground truth when the IoU clears the matching threshold.
Detections falling on ignore regions (IoA >= 0.5) count as neither true
nor false positives. AP is the area under the un-interpolated
precision-recall curve; the log-average miss rate averages miss rates at
nine FPPI reference points log-spaced over [1e-2, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Box, pairwise_ioa, pairwise_iou
from .nms import Detection
from .scenes import GroundTruthPedestrian

SWEEP_THRESHOLDS = (0.5, 0.4, 0.3, 0.2, 0.1)
_MISS_RATE_FLOOR = 1e-10
_FPPI_REFERENCES = np.logspace(-2, 0, 9)
_IGNORE_IOA = 0.5


@dataclass
class MatchResult:
    """Per-image matching outcome.

    `flags` and `scores` are in detection input order; `gt_matched` is in
    ground-truth input order (always False for ignore entries); `n_gt`
    counts non-ignore ground truths.
    """

    flags: list[str]
    scores: np.ndarray
    gt_matched: np.ndarray
    n_gt: int


def _match_core(scores, iou_mat, ioa_ignore, iou_threshold):
    n_det = len(scores)
    n_pos = iou_mat.shape[1]
    order = np.lexsort((np.arange(n_det), -np.asarray(scores)))
    flags: list[str | None] = [None] * n_det
    taken = np.zeros(n_pos, dtype=bool)
    for i in order:
        if n_pos:
            row = np.where(taken, -1.0, iou_mat[i])
            j = int(np.argmax(row))
            if row[j] >= iou_threshold:
                flags[i] = "tp"
                taken[j] = True
                continue
        if ioa_ignore.shape[1] and ioa_ignore[i].max() >= _IGNORE_IOA:
            flags[i] = "ignored"
            continue
        flags[i] = "fp"
    return flags, taken


def _overlap_tables(dets, gts):
    det_boxes = np.array(
        [d.full.as_tuple() for d in dets], dtype=np.float64
    ).reshape(len(dets), 4) if dets else np.zeros((0, 4))
    pos_idx = [k for k, g in enumerate(gts) if not g.ignore]
    ign_idx = [k for k, g in enumerate(gts) if g.ignore]
    pos_boxes = np.array([gts[k].full.as_tuple() for k in pos_idx]).reshape(-1, 4) \
        if pos_idx else np.zeros((0, 4))
    ign_boxes = np.array([gts[k].full.as_tuple() for k in ign_idx]).reshape(-1, 4) \
        if ign_idx else np.zeros((0, 4))
    iou_mat = pairwise_iou(det_boxes, pos_boxes)
    ioa_ign = pairwise_ioa(det_boxes, ign_boxes)
    return iou_mat, ioa_ign, pos_idx


def match_detections(
    dets: list[Detection],
    gts: list[GroundTruthPedestrian],
    iou_threshold: float,
) -> MatchResult:
    """Greedily match detections (by their full boxes) to ground truth."""
    scores = np.array([d.score for d in dets], dtype=np.float64)
    iou_mat, ioa_ign, pos_idx = _overlap_tables(dets, gts)
    flags, taken = _match_core(scores, iou_mat, ioa_ign, iou_threshold)
    gt_matched = np.zeros(len(gts), dtype=bool)
    for local, orig in enumerate(pos_idx):
        gt_matched[orig] = taken[local]
    return MatchResult(
        flags=flags, scores=scores, gt_matched=gt_matched, n_gt=len(pos_idx)
    )


def _merged_ranking(results: list[MatchResult]):
    """All non-ignored detections sorted by score, deterministic ties."""
    scores, flags, img_idx, det_idx = [], [], [], []
    for k, res in enumerate(results):
        for i, flag in enumerate(res.flags):
            if flag == "ignored":
                continue
            scores.append(res.scores[i])
            flags.append(flag)
            img_idx.append(k)
            det_idx.append(i)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((det_idx, img_idx, -scores))
    is_tp = np.array([flags[i] == "tp" for i in order])
    return scores[order], is_tp


def average_precision(results: list[MatchResult]) -> float:
    """Area under the un-interpolated precision-recall curve."""
    n_gt = sum(res.n_gt for res in results)
    if n_gt == 0:
        return 0.0
    _, is_tp = _merged_ranking(results)
    if len(is_tp) == 0:
        return 0.0
    cum_tp = np.cumsum(is_tp)
    ranks = np.arange(1, len(is_tp) + 1)
    precision = cum_tp / ranks
    return float(np.sum(precision[is_tp]) / n_gt)


def recall(results: list[MatchResult]) -> float:
    """Matched non-ignore GTs over all non-ignore GTs."""
    n_gt = sum(res.n_gt for res in results)
    if n_gt == 0:
        return 0.0
    matched = sum(int(res.gt_matched.sum()) for res in results)
    return matched / n_gt


def _miss_rate_curve(results: list[MatchResult]):
    """(fppi, miss_rate) at each distinct score threshold, descending."""
    n_gt = sum(res.n_gt for res in results)
    n_img = len(results)
    scores, is_tp = _merged_ranking(results)
    if len(scores) == 0 or n_gt == 0 or n_img == 0:
        return np.zeros(0), np.zeros(0)
    cum_tp = np.cumsum(is_tp)
    cum_fp = np.cumsum(~is_tp)
    # keep the last rank of each distinct-score group (achievable thresholds)
    last_of_group = np.ones(len(scores), dtype=bool)
    last_of_group[:-1] = scores[:-1] != scores[1:]
    fppi = cum_fp[last_of_group] / n_img
    miss = 1.0 - cum_tp[last_of_group] / n_gt
    return fppi, miss


def log_average_miss_rate(results: list[MatchResult]) -> float:
    """Exp-mean-log of miss rates at the nine FPPI reference points.

    For each reference the miss rate at the largest achieved FPPI <= the
    reference is used (the curve's first point if none); miss rates are
    clamped to >= 1e-10 before the log.
    """
    n_gt = sum(res.n_gt for res in results)
    if n_gt == 0:
        return 0.0
    fppi, miss = _miss_rate_curve(results)
    if len(fppi) == 0:
        return 1.0
    samples = []
    for ref in _FPPI_REFERENCES:
        idx = np.flatnonzero(fppi <= ref)
        j = idx[-1] if len(idx) else 0
        samples.append(max(float(miss[j]), _MISS_RATE_FLOOR))
    return float(np.exp(np.mean(np.log(samples))))


@dataclass
class EvalMetrics:
    """Scalar metrics plus the curves they were computed from."""

    ap: float
    mr2: float
    recall: float
    iou_threshold: float
    precisions: np.ndarray = field(default_factory=lambda: np.zeros(0))
    recalls: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fppi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    miss_rates: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "mr2": self.mr2,
            "recall": self.recall,
            "iou_threshold": self.iou_threshold,
        }


def _metrics_from_results(results, iou_threshold) -> EvalMetrics:
    n_gt = sum(res.n_gt for res in results)
    _, is_tp = _merged_ranking(results)
    if len(is_tp) and n_gt:
        cum_tp = np.cumsum(is_tp)
        precisions = cum_tp / np.arange(1, len(is_tp) + 1)
        recalls = cum_tp / n_gt
    else:
        precisions = np.zeros(0)
        recalls = np.zeros(0)
    fppi, miss = _miss_rate_curve(results)
    return EvalMetrics(
        ap=average_precision(results),
        mr2=log_average_miss_rate(results),
        recall=recall(results),
        iou_threshold=iou_threshold,
        precisions=precisions,
        recalls=recalls,
        fppi=fppi,
        miss_rates=miss,
    )


def evaluate(dets_per_image, gts_per_image, iou_threshold: float = 0.5) -> EvalMetrics:
    """Match every image at `iou_threshold` and aggregate the metrics."""
    results = [
        match_detections(d, g, iou_threshold)
        for d, g in zip(dets_per_image, gts_per_image)
    ]
    return _metrics_from_results(results, iou_threshold)


def threshold_sweep(
    dets_per_image,
    gts_per_image,
    thresholds=SWEEP_THRESHOLDS,
) -> list[EvalMetrics]:
    """One EvalMetrics row per matching threshold, reusing cached IoUs."""
    cached = []
    for dets, gts in zip(dets_per_image, gts_per_image):
        scores = np.array([d.score for d in dets], dtype=np.float64)
        iou_mat, ioa_ign, pos_idx = _overlap_tables(dets, gts)
        cached.append((scores, iou_mat, ioa_ign, pos_idx, len(gts)))
    rows = []
    for thr in thresholds:
        results = []
        for scores, iou_mat, ioa_ign, pos_idx, n_gts in cached:
            flags, taken = _match_core(scores, iou_mat, ioa_ign, thr)
            gt_matched = np.zeros(n_gts, dtype=bool)
            for local, orig in enumerate(pos_idx):
                gt_matched[orig] = taken[local]
            results.append(
                MatchResult(flags=flags, scores=scores,
                            gt_matched=gt_matched, n_gt=len(pos_idx))
            )
        rows.append(_metrics_from_results(results, thr))
    return rows


# ---------------------------------------------------------------------------
# Detection dumps (JSON-lines)
# ---------------------------------------------------------------------------


def write_detections(path, per_image: dict[str, list[Detection]]) -> None:
    """Write detections as JSON-lines of {image_id, score, fbox, ...}."""
    with open(path, "w", encoding="utf-8") as handle:
        for image_id in per_image:
            for d in per_image[image_id]:
                rec = {"image_id": image_id, "score": float(d.score)}
                if d.full is not None:
                    rec["fbox"] = [round(v, 4) for v in d.full.as_xywh()]
                if d.visible is not None:
                    rec["vbox"] = [round(v, 4) for v in d.visible.as_xywh()]
                if d.part_scores is not None:
                    rec["parts"] = [round(float(v), 6) for v in d.part_scores]
                handle.write(json.dumps(rec, sort_keys=True) + "\n")


def read_detections(path) -> dict[str, list[Detection]]:
    """Inverse of :func:`write_detections`."""
    per_image: dict[str, list[Detection]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        det = Detection(
            score=rec["score"],
            full=Box.from_xywh(*rec["fbox"]) if "fbox" in rec else None,
            visible=Box.from_xywh(*rec["vbox"]) if "vbox" in rec else None,
            part_scores=np.asarray(rec["parts"]) if "parts" in rec else None,
        )
        per_image.setdefault(rec["image_id"], []).append(det)
    return per_image
