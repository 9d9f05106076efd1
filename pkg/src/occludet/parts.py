"""Part-visibility supervision via learned part-concept embeddings.

A 5 x d embedding matrix holds one concept vector per body part. The
response of a candidate's transformed feature on part i is
sigmoid(<feature, E_i>); responses are supervised toward hard or soft
visibility labels derived from the IoA between the visible box and each
part of the assigned full box. Training-only: inference never evaluates
this module.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .exceptions import ShapeMismatch
from .geometry import Box, divide_parts, ioa, PART_COUNT

EMBED_INIT_RANGE = 5e-4
HARD_LABEL_IOA = 0.5
LABEL_MODES = ("hard", "soft")
IOA_DENOMINATORS = ("visible", "part")
_EPS = 1e-7


class PartEmbedding(nn.Module):
    """The learned part-concept matrix, uniformly initialized in a tight
    range so early responses stay near 0.5."""

    def __init__(self, feature_dim: int = 64, init_range: float = EMBED_INIT_RANGE):
        super().__init__()
        matrix = torch.empty(PART_COUNT, feature_dim, dtype=torch.float64)
        nn.init.uniform_(matrix, -init_range, init_range)
        self.matrix = nn.Parameter(matrix)
        self.feature_dim = feature_dim


def part_response(features: torch.Tensor, embedding: PartEmbedding) -> torch.Tensor:
    """sigmoid(features @ E^T): per-part visibility responses in (0, 1).

    Args:
        features: [N, d] (or [d]) transformed feature vectors.
    """
    squeeze = features.dim() == 1
    if squeeze:
        features = features.unsqueeze(0)
    if features.shape[-1] != embedding.feature_dim:
        raise ShapeMismatch(
            f"feature dim {features.shape[-1]} != embedding dim "
            f"{embedding.feature_dim}"
        )
    out = torch.sigmoid(features @ embedding.matrix.t())
    return out[0] if squeeze else out


def part_labels(v: Box, assigned_full: Box, mode: str = "hard",
                ioa_denominator: str = "visible") -> np.ndarray:
    """Per-part visibility labels from the geometry of v inside the full box.

    With the default denominator the overlap is normalized by area(v);
    the "part" alternative normalizes by the part's own area.
    """
    if mode not in LABEL_MODES:
        raise ValueError(f"mode must be one of {LABEL_MODES}")
    if ioa_denominator not in IOA_DENOMINATORS:
        raise ValueError(f"ioa_denominator must be one of {IOA_DENOMINATORS}")
    parts = divide_parts(assigned_full)
    if ioa_denominator == "visible":
        vals = np.array([ioa(v, p) for p in parts])
    else:
        vals = np.array([ioa(p, v) for p in parts])
    if mode == "hard":
        return (vals >= HARD_LABEL_IOA).astype(np.float64)
    return vals


def part_labels_batch(visible_boxes, assigned_fulls, positive_mask,
                      mode="hard", ioa_denominator="visible") -> np.ndarray:
    """Labels for a sampled batch; negatives (no assigned GT) get zeros."""
    n = len(visible_boxes)
    out = np.zeros((n, PART_COUNT), dtype=np.float64)
    for i in range(n):
        if positive_mask[i]:
            out[i] = part_labels(
                Box(*visible_boxes[i]), Box(*assigned_fulls[i]),
                mode=mode, ioa_denominator=ioa_denominator,
            )
    return out


def part_visibility_loss(responses: torch.Tensor, labels) -> torch.Tensor:
    """Cross-entropy summed over the five parts, mean over samples.

    Responses are clamped to [eps, 1-eps] to stabilize the logs; the loss
    is non-negative and zero (up to the clamp) when responses match hard
    labels exactly.
    """
    if responses.dim() == 1:
        responses = responses.unsqueeze(0)
    labels = torch.as_tensor(labels, dtype=torch.float64)
    if labels.dim() == 1:
        labels = labels.unsqueeze(0)
    if responses.shape != labels.shape:
        raise ShapeMismatch(
            f"responses {tuple(responses.shape)} vs labels {tuple(labels.shape)}"
        )
    if responses.numel() == 0:
        return responses.new_zeros(())
    r = responses.clamp(_EPS, 1.0 - _EPS)
    per_part = -(labels * torch.log(r) + (1.0 - labels) * torch.log(1.0 - r))
    return per_part.sum(dim=1).mean()
