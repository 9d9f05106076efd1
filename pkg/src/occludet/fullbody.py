"""Full-body estimation: regress the full box from a detected visible box.

Label assignment follows the detected-visible -> GT-visible -> GT-full
chain: a candidate visible box is matched to the ground-truth pedestrian
whose visible box it overlaps most (IoU >= 0.5, argmax, ties by lowest
index) and regresses to that pedestrian's full box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .exceptions import EmptyBatch
from .geometry import Box, boxes_to_array, encode_offsets_array, pairwise_iou
from .netcore import DTYPE, FeatureMap, rectifier, roi_align
from .two_stage import smooth_l1

ASSIGN_IOU = 0.5


@dataclass(frozen=True)
class AssignmentResult:
    status: str  # "positive" | "negative"
    gt_index: int | None = None

    def __post_init__(self):
        if self.status == "positive" and self.gt_index is None:
            raise ValueError("positive assignment requires a gt_index")


def assign_visible_array(visible_boxes: np.ndarray, gt_visible: np.ndarray):
    """Vectorized assignment of candidate visible boxes to GT indices.

    Returns:
        positive [N] bool, gt_index [N] int (-1 for negatives).
    """
    n = len(visible_boxes)
    positive = np.zeros(n, dtype=bool)
    gt_index = np.full(n, -1, dtype=np.int64)
    if n == 0 or len(gt_visible) == 0:
        return positive, gt_index
    iou_mat = pairwise_iou(visible_boxes, gt_visible)
    best = iou_mat.max(axis=1)
    idx = iou_mat.argmax(axis=1)  # first max = lowest index
    positive = best >= ASSIGN_IOU
    gt_index[positive] = idx[positive]
    return positive, gt_index


def assign_visible_to_gt(v: Box, gts) -> AssignmentResult:
    """Assign one visible box against ground-truth pedestrians.

    Ignore-flagged pedestrians are excluded from matching; returned
    indices refer to the original list.
    """
    keep = [i for i, g in enumerate(gts) if not g.ignore]
    gt_vis = boxes_to_array([gts[i].visible for i in keep])
    positive, gt_index = assign_visible_array(
        boxes_to_array([v]), gt_vis
    )
    if not positive[0]:
        return AssignmentResult(status="negative")
    return AssignmentResult(status="positive", gt_index=keep[int(gt_index[0])])


class FullBodyHead(nn.Module):
    """Visible-box RoI features -> task features -> full-box offsets.

    The second hidden layer's output is the transformed feature vector
    shared with the part-visibility module; the regression affine
    consumes it directly.
    """

    def __init__(self, channels: int, roi_size: int = 7, width: int = 256,
                 feature_dim: int = 64):
        super().__init__()
        in_dim = channels * roi_size * roi_size
        self.fc1 = nn.Linear(in_dim, width)
        self.fc2 = nn.Linear(width, feature_dim)
        self.offsets = nn.Linear(feature_dim, 4)
        self.roi_size = roi_size
        self.feature_dim = feature_dim
        self.to(DTYPE)

    def forward(self, pooled: torch.Tensor):
        """[N, C, k, k] -> (offsets [N, 4], features [N, feature_dim])."""
        x = pooled.reshape(pooled.shape[0], -1)
        x = rectifier(self.fc1(x))
        feats = rectifier(self.fc2(x))
        return self.offsets(feats), feats


def fullbody_forward(fm: FeatureMap, head: FullBodyHead, visible_boxes: np.ndarray):
    """Pool visible boxes and predict full-box offsets plus features."""
    pooled = roi_align(fm, visible_boxes, k=head.roi_size)
    return head(pooled)


def fullbody_loss(pred_offsets: torch.Tensor, visible_boxes: np.ndarray,
                  gt_full_boxes: np.ndarray) -> torch.Tensor:
    """Smooth-L1 between predicted and encoded target offsets, mean over
    positives.

    Raises:
        EmptyBatch: no positive samples were supplied.
    """
    if pred_offsets.shape[0] == 0:
        raise EmptyBatch("full-body regression loss needs positive samples")
    targets = encode_offsets_array(visible_boxes, gt_full_boxes)
    return smooth_l1(pred_offsets, targets).sum() / pred_offsets.shape[0]
