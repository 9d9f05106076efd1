"""End-to-end training and inference for the four pipeline variants.

Variants:
    F    detect full-body boxes directly, NMS on full boxes.
    V&F  one region head predicts (full, visible) pairs in parallel.
    F2   F plus a second regression head refining full boxes before NMS.
    V2F  detect visible boxes, NMS on visible boxes, then estimate the
         full box from each kept visible box (no second NMS). The
         part-visibility module supervises training only.

The sklearn-style :class:`PedestrianDetector` estimator wraps everything
behind fit/predict.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted
from torch import nn

from .config import TrainConfig
from .exceptions import CheckpointMismatch, DivergedLoss, EmptyBatch, ShapeMismatch
from .fullbody import (
    FullBodyHead,
    assign_visible_array,
    fullbody_forward,
    fullbody_loss,
)
from .geometry import (
    Box,
    boxes_to_array,
    decode_offsets_array,
    encode_offsets_array,
    valid_box_mask,
)
from .netcore import (
    FeatureExtractor,
    FeatureMap,
    config_hash,
    extract_features,
    load_checkpoint,
    save_checkpoint,
)
from .nms import Detection, greedy_nms
from .parts import PartEmbedding, part_labels_batch, part_response, part_visibility_loss
from .scenes import SceneSample
from .two_stage import (
    FULL_ANCHOR_RATIOS,
    VISIBLE_ANCHOR_RATIOS,
    RegionHead,
    RpnHead,
    assign_rpn_targets,
    bce_loss,
    generate_anchors,
    region_forward,
    regression_loss,
    sample_balanced,
    select_proposals,
)
from .validation import as_image_array, as_scene_list

DIAGNOSTIC_MODES = ("P-VDN", "P-VDN+NMS", "P-FEN")
LOG_COLUMNS = ("epoch", "l_cls1", "l_reg1", "l_cls2", "l_reg2",
               "l_fen", "l_epm", "total")


class DetectionModel(nn.Module):
    """All trainable parts of one pipeline variant."""

    def __init__(self, cfg: TrainConfig):
        super().__init__()
        self.variant = cfg.variant
        self.anchor_ratios = (
            VISIBLE_ANCHOR_RATIOS if cfg.variant == "V2F" else FULL_ANCHOR_RATIOS
        )
        self.extractor = FeatureExtractor(channels=cfg.channels)
        self.rpn = RpnHead(cfg.channels, len(self.anchor_ratios))
        self.region = RegionHead(
            cfg.channels,
            roi_size=cfg.roi_size,
            width=cfg.head_width,
            num_reg_branches=2 if cfg.variant == "V&F" else 1,
        )
        if cfg.variant == "V2F":
            self.fullbody = FullBodyHead(
                cfg.channels, roi_size=cfg.roi_size, width=cfg.head_width,
                feature_dim=cfg.feature_dim,
            )
            self.parts = PartEmbedding(feature_dim=cfg.feature_dim)
        elif cfg.variant == "F2":
            self.refine = FullBodyHead(
                cfg.channels, roi_size=cfg.roi_size, width=cfg.head_width,
                feature_dim=cfg.feature_dim,
            )


def build_model(cfg: TrainConfig) -> DetectionModel:
    """Seeded, deterministic model construction."""
    torch.manual_seed(cfg.seed)
    return DetectionModel(cfg)


# ---------------------------------------------------------------------------
# Training-batch construction for the full-body/part stage
# ---------------------------------------------------------------------------


@dataclass
class TrainingBatchSamples:
    """The augmented candidate set (detected union GT visible boxes) with
    assignments and the sampled subset used for the losses."""

    candidates: np.ndarray      # [K, 4] detected boxes then GT boxes
    cand_positive: np.ndarray   # [K] bool
    cand_gt_index: np.ndarray   # [K] int, -1 for negatives
    sampled: np.ndarray         # [M] indices into candidates

    @property
    def boxes(self) -> np.ndarray:
        return self.candidates[self.sampled]

    @property
    def positive(self) -> np.ndarray:
        return self.cand_positive[self.sampled]

    @property
    def gt_index(self) -> np.ndarray:
        return self.cand_gt_index[self.sampled]


def build_training_batch(
    detected: np.ndarray,
    gt_boxes: np.ndarray,
    cap: int,
    positive_fraction: float,
    rng: np.random.Generator,
    literal_max: bool = False,
) -> TrainingBatchSamples:
    """Augment detections with GT boxes, assign, and sample pos:neg.

    No NMS is applied; GT boxes are always candidates. The sample size is
    min(cap, #candidates) (or literally max(cap, #candidates), drawing
    with replacement, when `literal_max`). Sampling targets
    positive_fraction positives and backfills from the other class.
    """
    detected = np.asarray(detected, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    candidates = np.vstack([detected, gt_boxes])
    positive, gt_index = assign_visible_array(candidates, gt_boxes)
    n = len(candidates)
    if n == 0:
        return TrainingBatchSamples(
            candidates=candidates, cand_positive=positive,
            cand_gt_index=gt_index, sampled=np.zeros(0, dtype=np.int64),
        )
    target = max(cap, n) if literal_max else min(cap, n)
    pos_idx = np.flatnonzero(positive)
    neg_idx = np.flatnonzero(~positive)
    want_pos = int(round(target * positive_fraction))
    n_pos = min(len(pos_idx), want_pos)
    n_neg = min(len(neg_idx), target - n_pos)
    n_pos = min(len(pos_idx), target - n_neg)  # backfill positives
    replace = literal_max and target > n
    if replace:
        # over-draw proportionally when the literal reading is requested
        short = target - n_pos - n_neg
        extra = rng.choice(np.arange(n), size=short, replace=True) if short else []
    chosen = []
    if n_pos:
        chosen.append(rng.choice(pos_idx, size=n_pos, replace=False))
    if n_neg:
        chosen.append(rng.choice(neg_idx, size=n_neg, replace=False))
    if replace and len(extra):
        chosen.append(np.asarray(extra, dtype=np.int64))
    sampled = np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.int64)
    return TrainingBatchSamples(
        candidates=candidates, cand_positive=positive,
        cand_gt_index=gt_index, sampled=sampled,
    )


def total_loss(l_vdn, l_fen, l_epm, alpha: float, beta: float):
    """Weighted sum of the three loss groups."""
    return l_vdn + alpha * l_fen + beta * l_epm


# ---------------------------------------------------------------------------
# Per-image forward passes and losses
# ---------------------------------------------------------------------------


def _gt_arrays(peds, variant: str):
    """Target boxes for stage 1/2: visible boxes for V2F, full otherwise."""
    active = [p for p in peds if not p.ignore]
    full = boxes_to_array([p.full for p in active])
    visible = boxes_to_array([p.visible for p in active])
    primary = visible if variant == "V2F" else full
    return primary, full, visible


def stage_forward(model: DetectionModel, image: np.ndarray, cfg: TrainConfig,
                  max_proposals: int):
    """Extractor + RPN + proposal selection for one image."""
    h, w = image.shape[:2]
    fm = extract_features(image, model.extractor)
    anchors = generate_anchors(
        tuple(fm.values.shape[1:]), fm.stride,
        scale=cfg.anchor_scale, ratios=model.anchor_ratios,
    )
    rpn_logits, rpn_offsets = model.rpn(fm.values)
    proposals, prop_scores = select_proposals(
        anchors.boxes, rpn_logits, rpn_offsets, (w, h), max_proposals,
        min_size=1.5,
    )
    return fm, anchors, rpn_logits, rpn_offsets, proposals


@dataclass
class BatchPlan:
    """All discrete training choices for one image, held fixed.

    Proposal boxes, sampled indices, assignments and label targets are
    computed once without gradients; given a plan, the loss terms are
    smooth functions of the parameters (which is what both the optimizer
    and the finite-difference gradient checks differentiate).
    """

    anchors: np.ndarray
    rpn_labels: np.ndarray
    rpn_targets: np.ndarray
    rpn_sampled: np.ndarray
    region_boxes: np.ndarray       # sampled stage-2 boxes
    region_labels: np.ndarray      # 0/1 per sampled box
    region_targets: np.ndarray     # offsets for positives (row-aligned)
    region_vis_targets: np.ndarray | None  # second branch (V&F)
    region_pos: np.ndarray         # indices of positives in region_boxes
    fen_boxes: np.ndarray | None   # stage-3 sampled boxes
    fen_pos: np.ndarray | None
    fen_full_targets: np.ndarray | None    # assigned GT fulls for positives
    part_targets: np.ndarray | None        # per-part labels for all samples


def plan_image_batch(model: DetectionModel, scene: SceneSample,
                     cfg: TrainConfig, rng: np.random.Generator) -> BatchPlan:
    """Build the fixed discrete choices for one training image."""
    with torch.no_grad():
        fm = extract_features(scene.image, model.extractor)
        rpn_logits, rpn_offsets = model.rpn(fm.values)
    return _plan_from_outputs(model, scene, cfg, rng, fm, rpn_logits, rpn_offsets)


def _plan_from_outputs(model, scene, cfg, rng, fm, rpn_logits, rpn_offsets
                       ) -> BatchPlan:
    image = scene.image
    h, w = image.shape[:2]
    gt_primary, gt_full, gt_visible = _gt_arrays(scene.pedestrians, cfg.variant)

    anchors = generate_anchors(
        tuple(fm.values.shape[1:]), fm.stride,
        scale=cfg.anchor_scale, ratios=model.anchor_ratios,
    )
    proposals, _ = select_proposals(
        anchors.boxes, rpn_logits, rpn_offsets, (w, h), cfg.train_proposals,
        min_size=1.5,
    )

    labels, _, targets = assign_rpn_targets(anchors.boxes, gt_primary)
    sampled = sample_balanced(labels, cfg.rpn_batch, 0.5, rng)

    candidates = np.vstack([proposals, gt_primary]) if len(gt_primary) else proposals
    cand_pos, cand_gt = assign_visible_array(candidates, gt_primary)
    sampled2 = sample_balanced(cand_pos.astype(np.int64), cfg.rpn_batch, 0.5, rng)
    region_boxes = candidates[sampled2]
    region_labels = cand_pos[sampled2].astype(np.float64)
    region_pos = np.flatnonzero(cand_pos[sampled2])
    if len(region_pos):
        pos_boxes = region_boxes[region_pos]
        matched = cand_gt[sampled2][region_pos]
        region_targets = encode_offsets_array(pos_boxes, gt_primary[matched])
        region_vis_targets = (
            encode_offsets_array(pos_boxes, gt_visible[matched])
            if cfg.variant == "V&F" else None
        )
    else:
        region_targets = np.zeros((0, 4))
        region_vis_targets = np.zeros((0, 4)) if cfg.variant == "V&F" else None

    fen_boxes = fen_pos = fen_full_targets = part_targets = None
    if cfg.variant in ("V2F", "F2"):
        with torch.no_grad():
            if len(proposals):
                _, all_branches = region_forward(fm, model.region, proposals)
                detected = decode_offsets_array(
                    proposals, all_branches[0].numpy(), (w, h)
                )
                detected = detected[valid_box_mask(detected, min_size=1.5)]
            else:
                detected = np.zeros((0, 4))
        ref_boxes = gt_visible if cfg.variant == "V2F" else gt_full
        batch = build_training_batch(
            detected, ref_boxes, cfg.sample_cap, cfg.positive_fraction,
            rng, literal_max=cfg.sample_cap_literal_max,
        )
        if len(batch.sampled):
            fen_boxes = batch.boxes
            fen_pos = np.flatnonzero(batch.positive)
            fen_full_targets = gt_full[batch.gt_index[fen_pos]] \
                if len(fen_pos) else np.zeros((0, 4))
            if cfg.variant == "V2F":
                fulls = np.tile([0.0, 0.0, 1.0, 1.0], (len(batch.sampled), 1))
                if len(fen_pos):
                    fulls[fen_pos] = fen_full_targets
                part_targets = part_labels_batch(
                    fen_boxes, fulls, batch.positive,
                    mode=cfg.label_mode, ioa_denominator=cfg.ioa_denominator,
                )

    return BatchPlan(
        anchors=anchors.boxes, rpn_labels=labels, rpn_targets=targets,
        rpn_sampled=sampled, region_boxes=region_boxes,
        region_labels=region_labels, region_targets=region_targets,
        region_vis_targets=region_vis_targets, region_pos=region_pos,
        fen_boxes=fen_boxes, fen_pos=fen_pos,
        fen_full_targets=fen_full_targets, part_targets=part_targets,
    )


def losses_given_plan(model: DetectionModel, scene: SceneSample,
                      cfg: TrainConfig, plan: BatchPlan) -> dict:
    """All loss terms for one image under a fixed batch plan."""
    fm = extract_features(scene.image, model.extractor)
    rpn_logits, rpn_offsets = model.rpn(fm.values)
    return _losses_from_outputs(model, scene, cfg, plan, fm, rpn_logits,
                                rpn_offsets)


def _losses_from_outputs(model, scene, cfg, plan, fm, rpn_logits, rpn_offsets
                         ) -> dict:
    zero = rpn_logits.new_zeros(())

    sampled = plan.rpn_sampled
    l_cls1 = bce_loss(
        rpn_logits[sampled], plan.rpn_labels[sampled].astype(np.float64)
    )
    pos_sampled = sampled[plan.rpn_labels[sampled] == 1]
    l_reg1 = regression_loss(
        rpn_offsets[pos_sampled], plan.rpn_targets[pos_sampled], len(pos_sampled)
    ) if len(pos_sampled) else zero

    if len(plan.region_boxes):
        logits2, branches = region_forward(fm, model.region, plan.region_boxes)
        l_cls2 = bce_loss(logits2, plan.region_labels)
        if len(plan.region_pos):
            l_reg2 = regression_loss(
                branches[0][plan.region_pos], plan.region_targets,
                len(plan.region_pos),
            )
            if cfg.variant == "V&F":
                l_reg2 = l_reg2 + regression_loss(
                    branches[1][plan.region_pos], plan.region_vis_targets,
                    len(plan.region_pos),
                )
        else:
            l_reg2 = zero
    else:
        l_cls2 = zero
        l_reg2 = zero

    l_fen = zero
    l_epm = zero
    if plan.fen_boxes is not None:
        head = model.fullbody if cfg.variant == "V2F" else model.refine
        offsets, feats = fullbody_forward(fm, head, plan.fen_boxes)
        if len(plan.fen_pos):
            try:
                l_fen = fullbody_loss(
                    offsets[plan.fen_pos], plan.fen_boxes[plan.fen_pos],
                    plan.fen_full_targets,
                )
            except EmptyBatch:
                l_fen = zero
        if cfg.variant == "V2F":
            responses = part_response(feats, model.parts)
            l_epm = part_visibility_loss(responses, plan.part_targets)

    return {
        "l_cls1": l_cls1, "l_reg1": l_reg1,
        "l_cls2": l_cls2, "l_reg2": l_reg2,
        "l_fen": l_fen, "l_epm": l_epm,
    }


def compute_image_losses(model: DetectionModel, scene: SceneSample,
                         cfg: TrainConfig, rng: np.random.Generator) -> dict:
    """Plan the discrete choices, then evaluate the losses under them.

    The forward pass is shared: the plan uses detached copies of the same
    extractor/RPN outputs the losses differentiate through.
    """
    fm = extract_features(scene.image, model.extractor)
    rpn_logits, rpn_offsets = model.rpn(fm.values)
    fm_detached = FeatureMap(values=fm.values.detach(), stride=fm.stride)
    plan = _plan_from_outputs(
        model, scene, cfg, rng, fm_detached,
        rpn_logits.detach(), rpn_offsets.detach(),
    )
    return _losses_from_outputs(model, scene, cfg, plan, fm, rpn_logits,
                                rpn_offsets)


def train_model(model: DetectionModel, scenes: list[SceneSample],
                cfg: TrainConfig) -> list[dict]:
    """SGD with momentum and stepped decay; returns the per-epoch log.

    Raises:
        DivergedLoss: the total loss became non-finite.
    """
    if not scenes:
        raise ValueError("training needs a non-empty dataset")
    rng = np.random.default_rng(cfg.seed)
    optimizer = torch.optim.SGD(
        model.parameters(), lr=cfg.learning_rate,
        momentum=cfg.momentum, weight_decay=cfg.weight_decay,
    )
    # effective loss weights: F2's refinement loss takes the alpha slot,
    # F and V&F have no third stage
    alpha = cfg.alpha if cfg.variant in ("V2F", "F2") else 0.0
    beta = cfg.beta if cfg.variant == "V2F" else 0.0
    log = []
    for epoch in range(1, cfg.epochs + 1):
        decay_steps = sum(epoch >= d for d in cfg.lr_decay_epochs)
        lr = cfg.learning_rate * (0.1 ** decay_steps)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = rng.permutation(len(scenes))
        sums = {key: 0.0 for key in LOG_COLUMNS if key != "epoch"}
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            terms = {k: [] for k in ("l_cls1", "l_reg1", "l_cls2", "l_reg2",
                                     "l_fen", "l_epm")}
            for i in idx:
                for key, val in compute_image_losses(
                    model, scenes[int(i)], cfg, rng
                ).items():
                    terms[key].append(val)
            mean_terms = {
                k: torch.stack([torch.as_tensor(v, dtype=torch.float64)
                                if not isinstance(v, torch.Tensor) else v
                                for v in vals]).mean()
                for k, vals in terms.items()
            }
            l_vdn = (mean_terms["l_cls1"] + mean_terms["l_reg1"]
                     + mean_terms["l_cls2"] + mean_terms["l_reg2"])
            batch_total = total_loss(
                l_vdn, mean_terms["l_fen"], mean_terms["l_epm"], alpha, beta
            )
            if not torch.isfinite(batch_total):
                raise DivergedLoss(
                    f"non-finite total loss at epoch {epoch}: "
                    + ", ".join(f"{k}={v.item():.4g}" for k, v in mean_terms.items())
                )
            optimizer.zero_grad()
            batch_total.backward()
            optimizer.step()
            for key, val in mean_terms.items():
                sums[key] += val.item()
            sums["total"] += batch_total.item()
            n_batches += 1
        row = {"epoch": epoch}
        row.update({k: sums[k] / n_batches for k in sums})
        log.append(row)
    return log


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def _decode_with_fallback(refs: np.ndarray, offsets: np.ndarray,
                          bounds) -> np.ndarray:
    """Decode offsets; rows whose decode fully clips keep the reference."""
    decoded = decode_offsets_array(refs, offsets, bounds)
    bad = ~valid_box_mask(decoded)
    decoded[bad] = refs[bad]
    return decoded


def infer_verbose(model: DetectionModel, image: np.ndarray, cfg: TrainConfig
                  ) -> tuple[list[Detection], list[Detection]]:
    """Variant-dispatched inference; exactly one NMS pass per image.

    Returns (kept, suppressed). Suppressed V2F detections carry only
    their visible box: they never reach the full-body stage.
    """
    image = as_image_array(image)
    h, w = image.shape[:2]
    with torch.no_grad():
        fm, _, _, _, proposals = stage_forward(
            model, image, cfg, cfg.infer_proposals
        )
        if len(proposals) == 0:
            return [], []
        logits, branches = region_forward(fm, model.region, proposals)
        scores = torch.sigmoid(logits).numpy()
        primary = decode_offsets_array(proposals, branches[0].numpy(), (w, h))
        keep = valid_box_mask(primary, min_size=1.5)
        proposals, scores, primary = proposals[keep], scores[keep], primary[keep]
        branch_rest = [b.numpy()[keep] for b in branches[1:]]
        if len(primary) == 0:
            return [], []

        if cfg.variant == "V2F":
            if cfg.resolved_nms_mode == "visible":
                # NMS on visible boxes first; only kept boxes reach the
                # full-body stage
                dets = [
                    Detection(score=float(s), visible=Box(*b))
                    for s, b in zip(scores, primary)
                ]
                kept = greedy_nms(dets, "visible", cfg.nms_threshold)
                visible_kept = primary[kept]
                offsets, _ = fullbody_forward(fm, model.fullbody, visible_kept)
                fulls = _decode_with_fallback(
                    visible_kept, offsets.numpy(), (w, h)
                )
                final = [
                    Detection(
                        score=float(scores[i]),
                        visible=Box(*visible_kept[j]),
                        full=Box(*fulls[j]),
                    )
                    for j, i in enumerate(kept)
                ]
                dropped = [dets[i] for i in range(len(dets)) if i not in set(kept)]
                return final, dropped
            # full-box NMS needs the estimates first: estimate for every
            # candidate, then suppress on the estimated full boxes
            offsets, _ = fullbody_forward(fm, model.fullbody, primary)
            fulls = _decode_with_fallback(primary, offsets.numpy(), (w, h))
            dets = [
                Detection(score=float(s), visible=Box(*v), full=Box(*f))
                for s, v, f in zip(scores, primary, fulls)
            ]
            kept = greedy_nms(dets, "full", cfg.nms_threshold)
            dropped = [dets[i] for i in range(len(dets)) if i not in set(kept)]
            return [dets[i] for i in kept], dropped

        if cfg.variant == "V&F":
            visibles = _decode_with_fallback(proposals, branch_rest[0], (w, h))
            dets = [
                Detection(score=float(s), full=Box(*f), visible=Box(*v))
                for s, f, v in zip(scores, primary, visibles)
            ]
        else:
            if cfg.variant == "F2":
                refined_off, _ = fullbody_forward(fm, model.refine, primary)
                primary = _decode_with_fallback(primary, refined_off.numpy(), (w, h))
            dets = [
                Detection(score=float(s), full=Box(*b))
                for s, b in zip(scores, primary)
            ]
        kept = greedy_nms(dets, cfg.resolved_nms_mode, cfg.nms_threshold)
        dropped = [dets[i] for i in range(len(dets)) if i not in set(kept)]
        return [dets[i] for i in kept], dropped


def infer_image(model: DetectionModel, image: np.ndarray,
                cfg: TrainConfig) -> list[Detection]:
    """Final detections for one image (see :func:`infer_verbose`)."""
    return infer_verbose(model, image, cfg)[0]


def score_given_boxes(model: DetectionModel, image: np.ndarray, boxes,
                      cfg: TrainConfig) -> np.ndarray:
    """Region-head scores for externally supplied boxes (RPN bypassed)."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if len(boxes) == 0:
        return np.zeros(0)
    image = as_image_array(image)
    with torch.no_grad():
        fm = extract_features(image, model.extractor)
        logits, _ = region_forward(fm, model.region, boxes)
        return torch.sigmoid(logits).numpy()


def part_scores_for_boxes(model: DetectionModel, image: np.ndarray,
                          visible_boxes) -> np.ndarray:
    """Part-visibility responses for visible boxes (visualization path;
    never part of inference)."""
    boxes = np.asarray(visible_boxes, dtype=np.float64).reshape(-1, 4)
    if len(boxes) == 0:
        return np.zeros((0, 5))
    image = as_image_array(image)
    with torch.no_grad():
        fm = extract_features(image, model.extractor)
        _, feats = fullbody_forward(fm, model.fullbody, boxes)
        return part_response(feats, model.parts).numpy()


# ---------------------------------------------------------------------------
# Perfect-component diagnostics
# ---------------------------------------------------------------------------


def run_diagnostic(model: DetectionModel, mode: str,
                   scenes: list[SceneSample], cfg: TrainConfig):
    """Replace one V2F component with ground truth and re-run inference.

    P-VDN scores the GT visible boxes with the region head and keeps the
    normal NMS + estimation tail; P-VDN+NMS also skips the NMS;
    P-FEN runs normal detection but swaps each positive-assigned full-box
    estimate for its assigned GT full box.

    Returns detections per scene.
    """
    if mode not in DIAGNOSTIC_MODES:
        raise ValueError(f"mode must be one of {DIAGNOSTIC_MODES}")
    if cfg.variant != "V2F":
        raise ValueError("diagnostics apply to the V2F pipeline")
    out = []
    for scene in scenes:
        image = scene.image
        h, w = image.shape[:2]
        active = [p for p in scene.pedestrians if not p.ignore]
        gt_visible = boxes_to_array([p.visible for p in active])
        gt_full = boxes_to_array([p.full for p in active])
        with torch.no_grad():
            if mode in ("P-VDN", "P-VDN+NMS"):
                if len(gt_visible) == 0:
                    out.append([])
                    continue
                scores = score_given_boxes(model, image, gt_visible, cfg)
                dets = [
                    Detection(score=float(s), visible=Box(*b))
                    for s, b in zip(scores, gt_visible)
                ]
                if mode == "P-VDN":
                    kept = greedy_nms(dets, "visible", cfg.nms_threshold)
                else:
                    kept = list(range(len(dets)))
                fm = extract_features(image, model.extractor)
                vis = gt_visible[kept]
                offsets, _ = fullbody_forward(fm, model.fullbody, vis)
                fulls = _decode_with_fallback(vis, offsets.numpy(), (w, h))
                out.append([
                    Detection(score=dets[i].score, visible=Box(*vis[j]),
                              full=Box(*fulls[j]))
                    for j, i in enumerate(kept)
                ])
            else:  # P-FEN
                dets = infer_image(model, image, cfg)
                if not dets:
                    out.append([])
                    continue
                vis = boxes_to_array([d.visible for d in dets])
                positive, gt_idx = assign_visible_array(vis, gt_visible)
                swapped = []
                for i, d in enumerate(dets):
                    if positive[i]:
                        swapped.append(Detection(
                            score=d.score, visible=d.visible,
                            full=Box(*gt_full[gt_idx[i]]),
                        ))
                    else:
                        swapped.append(d)
                out.append(swapped)
    return out


# ---------------------------------------------------------------------------
# Estimator facade
# ---------------------------------------------------------------------------


class PedestrianDetector(BaseEstimator):
    """Occluded-pedestrian detector with a fit/predict estimator surface.

    Parameters mirror the training config; see :class:`TrainConfig`. The
    default configuration is the visible-to-full pipeline with hard part
    labels, alpha=0.3, beta=1 and NMS threshold 0.5 on visible boxes.
    """

    def __init__(self, variant="V2F", alpha=0.3, beta=1.0, label_mode="hard",
                 ioa_denominator="visible", nms_mode=None, nms_threshold=0.5,
                 epochs=20, learning_rate=1e-3, lr_decay_epochs=(14, 18),
                 momentum=0.9, weight_decay=1e-4, batch_size=1, seed=0,
                 sample_cap=1000, sample_cap_literal_max=False,
                 positive_fraction=0.9, channels=64, feature_dim=64,
                 roi_size=7, head_width=256, anchor_scale=1.0,
                 train_proposals=256, infer_proposals=300, rpn_batch=256):
        self.variant = variant
        self.alpha = alpha
        self.beta = beta
        self.label_mode = label_mode
        self.ioa_denominator = ioa_denominator
        self.nms_mode = nms_mode
        self.nms_threshold = nms_threshold
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.lr_decay_epochs = lr_decay_epochs
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.seed = seed
        self.sample_cap = sample_cap
        self.sample_cap_literal_max = sample_cap_literal_max
        self.positive_fraction = positive_fraction
        self.channels = channels
        self.feature_dim = feature_dim
        self.roi_size = roi_size
        self.head_width = head_width
        self.anchor_scale = anchor_scale
        self.train_proposals = train_proposals
        self.infer_proposals = infer_proposals
        self.rpn_batch = rpn_batch

    def _train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.get_params())

    def fit(self, X, y=None):
        """Train on scenes (SceneSample list, dataset dir, or images + y)."""
        scenes = as_scene_list(X, y)
        cfg = self._train_config()
        model = build_model(cfg)
        log = train_model(model, scenes, cfg)
        self.model_ = model
        self.config_ = cfg
        self.training_log_ = log
        return self

    def predict(self, X) -> list[list[Detection]]:
        """Detections per image, descending score, post-NMS."""
        check_is_fitted(self, "model_")
        images = X if isinstance(X, (list, tuple)) else [X]
        return [
            infer_image(self.model_, as_image_array(img), self.config_)
            for img in images
        ]

    def score_boxes(self, image, boxes) -> np.ndarray:
        """Region-head confidence for supplied boxes on one image."""
        check_is_fitted(self, "model_")
        return score_given_boxes(self.model_, image, boxes, self.config_)

    def evaluate(self, scenes, iou_threshold: float = 0.5):
        """Convenience: predict on scenes and compute metrics."""
        from .metrics import evaluate as _evaluate

        check_is_fitted(self, "model_")
        scenes = as_scene_list(scenes)
        dets = [
            infer_image(self.model_, s.image, self.config_) for s in scenes
        ]
        return _evaluate(dets, [s.pedestrians for s in scenes], iou_threshold)

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        arrays = {
            name: tensor.detach().numpy()
            for name, tensor in self.model_.state_dict().items()
        }
        config = self.config_.to_dict()
        config["arch_hash"] = config_hash(self.config_.arch_dict())
        save_checkpoint(path, arrays, config)

    @classmethod
    def load(cls, path, expect_config: TrainConfig | None = None
             ) -> "PedestrianDetector":
        """Rebuild a fitted detector from a checkpoint archive.

        Raises:
            CheckpointMismatch: the stored architecture hash differs from
                `expect_config`'s.
        """
        arrays, manifest = load_checkpoint(path)
        stored = dict(manifest["config"])
        arch_hash = stored.pop("arch_hash", None)
        cfg = TrainConfig.from_dict(stored)
        if expect_config is not None:
            want = config_hash(expect_config.arch_dict())
            if want != arch_hash:
                raise CheckpointMismatch(
                    f"checkpoint architecture {arch_hash} does not match "
                    f"requested config {want}"
                )
        model = build_model(cfg)
        state = {name: torch.from_numpy(a) for name, a in arrays.items()}
        try:
            model.load_state_dict(state)
        except RuntimeError as exc:
            raise ShapeMismatch(f"checkpoint does not fit the model: {exc}") from exc
        detector = cls(**{k: v for k, v in cfg.to_dict().items()})
        detector.model_ = model
        detector.config_ = cfg
        detector.training_log_ = []
        return detector
