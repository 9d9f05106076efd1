"""Two-stage detector building blocks: anchors, RPN, region head.

The same machinery serves both box targets: the visible-box detector
(anchor ratios {0.5, 1, 1.5}) and the full-box baseline (ratios
{1, 2, 3}). Ratios are H/W; anchors may extend past the image and are
clipped only at decode time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .geometry import (
    decode_offsets_array,
    encode_offsets_array,
    pairwise_iou,
    valid_box_mask,
)
from .netcore import DTYPE, FeatureMap, rectifier, roi_align

VISIBLE_ANCHOR_RATIOS = (0.5, 1.0, 1.5)
FULL_ANCHOR_RATIOS = (1.0, 2.0, 3.0)
ANCHOR_BASE_FACTOR = 4

RPN_POS_IOU = 0.7
RPN_NEG_IOU = 0.3
RPN_BATCH = 256
RPN_POS_FRACTION = 0.5
PROPOSAL_NMS_IOU = 0.7


@dataclass
class AnchorSet:
    """One anchor per (feature cell x ratio), cell-major then ratio."""

    boxes: np.ndarray  # [A, 4]
    stride: int
    scale: float
    ratios: tuple[float, ...]


def generate_anchors(fm_shape, stride, scale=1.0, ratios=VISIBLE_ANCHOR_RATIOS,
                     base_factor=ANCHOR_BASE_FACTOR) -> AnchorSet:
    """Anchors centered at (stride*(j+0.5), stride*(i+0.5)) per cell.

    For ratio r (H/W): height = base*scale*sqrt(r), width = base*scale/sqrt(r)
    with base = stride * base_factor.
    """
    fm_h, fm_w = fm_shape
    base = stride * base_factor
    cy, cx = np.mgrid[0:fm_h, 0:fm_w].astype(np.float64) + 0.5
    cy = cy.reshape(-1) * stride
    cx = cx.reshape(-1) * stride
    rows = []
    for i in range(fm_h * fm_w):
        for r in ratios:
            h = base * scale * math.sqrt(r)
            w = base * scale / math.sqrt(r)
            rows.append((cx[i] - w / 2, cy[i] - h / 2, cx[i] + w / 2, cy[i] + h / 2))
    return AnchorSet(
        boxes=np.asarray(rows, dtype=np.float64),
        stride=stride,
        scale=scale,
        ratios=tuple(ratios),
    )


def assign_rpn_targets(anchors: np.ndarray, gt_boxes: np.ndarray,
                       pos_iou=RPN_POS_IOU, neg_iou=RPN_NEG_IOU):
    """Label anchors {1 pos, 0 neg, -1 ignore} and pick regression targets.

    An anchor is positive when its IoU with some GT reaches `pos_iou` or it
    is an argmax anchor for a GT (only for GTs with a positive best IoU);
    negative when its best IoU is below `neg_iou`; ignored otherwise.
    Positives regress to their best-IoU GT, ties by lowest GT index.

    Returns:
        labels [A], matched_gt [A] (-1 for non-positives), offsets [A, 4].
    """
    n_a = len(anchors)
    labels = np.zeros(n_a, dtype=np.int64)
    matched = np.full(n_a, -1, dtype=np.int64)
    offsets = np.zeros((n_a, 4), dtype=np.float64)
    if len(gt_boxes) == 0:
        return labels, matched, offsets
    iou_mat = pairwise_iou(anchors, gt_boxes)
    best_iou = iou_mat.max(axis=1)
    best_gt = iou_mat.argmax(axis=1)  # first max = lowest GT index
    labels[best_iou >= pos_iou] = 1
    labels[(best_iou >= neg_iou) & (best_iou < pos_iou)] = -1
    for j in range(len(gt_boxes)):
        col_best = iou_mat[:, j].max()
        if col_best > 0.0:
            labels[iou_mat[:, j] == col_best] = 1
    pos = labels == 1
    matched[pos] = best_gt[pos]
    if pos.any():
        offsets[pos] = encode_offsets_array(anchors[pos], gt_boxes[best_gt[pos]])
    return labels, matched, offsets


def sample_balanced(labels: np.ndarray, num: int, pos_fraction: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Sample up to `num` indices with at most `pos_fraction` positives.

    Backfills with extra negatives when positives are scarce; labels of
    -1 are never sampled.
    """
    pos_idx = np.flatnonzero(labels == 1)
    neg_idx = np.flatnonzero(labels == 0)
    n_pos = min(len(pos_idx), int(round(num * pos_fraction)))
    n_neg = min(len(neg_idx), num - n_pos)
    chosen = []
    if n_pos:
        chosen.append(rng.choice(pos_idx, size=n_pos, replace=False))
    if n_neg:
        chosen.append(rng.choice(neg_idx, size=n_neg, replace=False))
    if not chosen:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(chosen)


class RpnHead(nn.Module):
    """3x3 conv trunk with 1x1 objectness and offset heads."""

    def __init__(self, channels: int, num_ratios: int):
        super().__init__()
        self.trunk = nn.Conv2d(channels, channels, 3, padding=1)
        self.objectness = nn.Conv2d(channels, num_ratios, 1)
        self.offsets = nn.Conv2d(channels, num_ratios * 4, 1)
        self.num_ratios = num_ratios
        self.to(DTYPE)

    def forward(self, fm_values: torch.Tensor):
        """[C, H, W] -> (logits [A], offsets [A, 4]) in anchor order."""
        x = rectifier(self.trunk(fm_values.unsqueeze(0)))
        logits = self.objectness(x)[0]  # [R, H, W]
        offs = self.offsets(x)[0]  # [4R, H, W]
        r = self.num_ratios
        h, w = logits.shape[1:]
        logits = logits.permute(1, 2, 0).reshape(h * w * r)
        offs = offs.reshape(r, 4, h, w).permute(2, 3, 0, 1).reshape(h * w * r, 4)
        return logits, offs


class RegionHead(nn.Module):
    """RoI features -> two FC layers -> score plus box-offset branches."""

    def __init__(self, channels: int, roi_size: int = 7, width: int = 256,
                 num_reg_branches: int = 1):
        super().__init__()
        in_dim = channels * roi_size * roi_size
        self.fc1 = nn.Linear(in_dim, width)
        self.fc2 = nn.Linear(width, width)
        self.score = nn.Linear(width, 1)
        self.reg_branches = nn.ModuleList(
            [nn.Linear(width, 4) for _ in range(num_reg_branches)]
        )
        self.roi_size = roi_size
        self.to(DTYPE)

    def forward(self, pooled: torch.Tensor):
        """[N, C, k, k] -> (logits [N], [offsets [N, 4] per branch])."""
        x = pooled.reshape(pooled.shape[0], -1)
        x = rectifier(self.fc1(x))
        x = rectifier(self.fc2(x))
        logits = self.score(x).squeeze(-1)
        return logits, [branch(x) for branch in self.reg_branches]


def region_forward(fm: FeatureMap, head: RegionHead, boxes: np.ndarray):
    """Pool `boxes` from `fm` and run the region head."""
    pooled = roi_align(fm, boxes, k=head.roi_size)
    return head(pooled)


def select_proposals(
    anchors: np.ndarray,
    logits: torch.Tensor,
    offsets: torch.Tensor,
    image_size: tuple[float, float],
    max_n: int,
    nms_iou: float = PROPOSAL_NMS_IOU,
    min_size: float = 1.0,
):
    """Decode, clip and NMS-filter RPN outputs into proposal boxes.

    Proposal boxes are detached: the region stage treats them as
    constants, as the RPN losses carry the location gradients.

    Returns:
        (boxes [M, 4], scores [M]) numpy arrays, score-descending.
    """
    from .nms import nms_array

    scores = torch.sigmoid(logits).detach().numpy()
    boxes = decode_offsets_array(anchors, offsets.detach().numpy(), image_size)
    keep = valid_box_mask(boxes, min_size=min_size)
    boxes, scores = boxes[keep], scores[keep]
    if len(boxes) == 0:
        return np.zeros((0, 4)), np.zeros(0)
    kept = nms_array(boxes, scores, nms_iou)[:max_n]
    return boxes[kept], scores[kept]


def bce_loss(logits: torch.Tensor, targets) -> torch.Tensor:
    """Mean binary cross-entropy on logits; 0 for an empty batch."""
    if logits.numel() == 0:
        return logits.new_zeros(())
    targets = torch.as_tensor(targets, dtype=DTYPE)
    return nn.functional.binary_cross_entropy_with_logits(logits, targets)


def smooth_l1(pred: torch.Tensor, target, beta: float = 1.0) -> torch.Tensor:
    """Element-wise smooth-L1 (Huber) with the given transition point."""
    target = torch.as_tensor(target, dtype=DTYPE)
    diff = torch.abs(pred - target)
    return torch.where(diff < beta, 0.5 * diff * diff / beta, diff - 0.5 * beta)


def regression_loss(pred: torch.Tensor, target, n_norm: int) -> torch.Tensor:
    """Smooth-L1 summed over entries, normalized by max(1, n_norm)."""
    if pred.numel() == 0:
        return pred.new_zeros(()) if isinstance(pred, torch.Tensor) else torch.zeros((), dtype=DTYPE)
    return smooth_l1(pred, target).sum() / max(1, n_norm)
