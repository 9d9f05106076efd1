"""Independent reference implementations used as test oracles.

Everything here is deliberately brute-force (rasterization, exhaustive
rule application, dense interpolation grids) and kept separate from the
library code it checks.
"""

import numpy as np


def raster_mask(box, width, height):
    """Boolean [height, width] mask of unit pixels whose centers lie in box."""
    x1, y1, x2, y2 = box
    ys, xs = np.mgrid[0:height, 0:width]
    cx = xs + 0.5
    cy = ys + 0.5
    return (cx >= x1) & (cx < x2) & (cy >= y1) & (cy < y2)


def raster_iou(a, b, width=None, height=None):
    """IoU by counting unit pixels (exact for integer boxes)."""
    if width is None:
        width = int(np.ceil(max(a[2], b[2]))) + 1
    if height is None:
        height = int(np.ceil(max(a[3], b[3]))) + 1
    ma = raster_mask(a, width, height)
    mb = raster_mask(b, width, height)
    union = np.count_nonzero(ma | mb)
    if union == 0:
        return 0.0
    return np.count_nonzero(ma & mb) / union


def raster_ioa(a, b, width=None, height=None):
    """Intersection pixels over pixels of `a` (exact for integer boxes)."""
    if width is None:
        width = int(np.ceil(max(a[2], b[2]))) + 1
    if height is None:
        height = int(np.ceil(max(a[3], b[3]))) + 1
    ma = raster_mask(a, width, height)
    mb = raster_mask(b, width, height)
    na = np.count_nonzero(ma)
    if na == 0:
        return 0.0
    return np.count_nonzero(ma & mb) / na


def random_int_box(rng, max_coord=64, min_size=1, max_size=None):
    """A random integer box inside [0, max_coord]^2."""
    if max_size is None:
        max_size = max_coord
    w = int(rng.integers(min_size, max_size + 1))
    h = int(rng.integers(min_size, max_size + 1))
    x1 = int(rng.integers(0, max_coord - w + 1))
    y1 = int(rng.integers(0, max_coord - h + 1))
    return (x1, y1, x1 + w, y1 + h)


def reference_nms(boxes, scores, threshold):
    """Greedy NMS applied directly from its definition.

    Sort by descending score (ties broken by input order), repeatedly keep
    the best remaining box and discard every remaining box whose IoU with
    it exceeds `threshold`. Returns kept input indices in score order.
    """
    boxes = np.asarray(boxes, dtype=float)
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept = []
    removed = set()
    for i in order:
        if i in removed:
            continue
        kept.append(i)
        for j in order:
            if j in removed or j == i:
                continue
            if _iou_single(boxes[i], boxes[j]) > threshold:
                removed.add(j)
    return kept


def _iou_single(a, b):
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def _ioa_single(a, b):
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    return (iw * ih) / ((a[2] - a[0]) * (a[3] - a[1]))


def reference_assign_visible(v, gt_visible, ignore_flags=None):
    """Rule oracle for visible-box assignment.

    Negative if IoU(v, g) < 0.5 for every non-ignore g, otherwise positive
    with the argmax-IoU index (ties by lowest index).
    """
    best_idx = None
    best_iou = -1.0
    for idx, g in enumerate(gt_visible):
        if ignore_flags is not None and ignore_flags[idx]:
            continue
        val = _iou_single(v, g)
        if val > best_iou:
            best_iou = val
            best_idx = idx
    if best_idx is None or best_iou < 0.5:
        return ("negative", None)
    return ("positive", best_idx)


def reference_assign_rpn(anchors, gts, pos_iou=0.7, neg_iou=0.3):
    """Rule oracle for anchor labelling.

    pos if IoU with some GT >= pos_iou or the anchor is an argmax anchor
    for some GT (GTs with zero best IoU force nothing); neg if max IoU
    < neg_iou; else ignore. Positives match their best-IoU GT, ties
    broken by lowest GT index.
    """
    n_a, n_g = len(anchors), len(gts)
    labels = np.zeros(n_a, dtype=int)
    matched = np.full(n_a, -1, dtype=int)
    if n_g == 0:
        return labels, matched
    iou_mat = np.zeros((n_a, n_g))
    for i in range(n_a):
        for j in range(n_g):
            iou_mat[i, j] = _iou_single(anchors[i], gts[j])
    for i in range(n_a):
        best = iou_mat[i].max()
        if best >= pos_iou:
            labels[i] = 1
        elif best < neg_iou:
            labels[i] = 0
        else:
            labels[i] = -1
    for j in range(n_g):
        best = iou_mat[:, j].max()
        if best <= 0.0:
            continue
        for i in range(n_a):
            if iou_mat[i, j] == best:
                labels[i] = 1
    for i in range(n_a):
        if labels[i] == 1:
            matched[i] = int(np.argmax(iou_mat[i]))
    return labels, matched


def reference_match_detections(det_boxes, det_scores, gt_boxes, gt_ignore,
                               iou_threshold):
    """Rule oracle for greedy score-ordered detection/GT matching.

    Returns per-detection flags in input order: 'tp', 'fp' or 'ignored'.
    """
    order = sorted(range(len(det_boxes)), key=lambda i: (-det_scores[i], i))
    taken = [False] * len(gt_boxes)
    flags = [None] * len(det_boxes)
    for i in order:
        best_iou, best_j = -1.0, None
        for j, g in enumerate(gt_boxes):
            if gt_ignore[j] or taken[j]:
                continue
            val = _iou_single(det_boxes[i], g)
            if val > best_iou:
                best_iou, best_j = val, j
        if best_j is not None and best_iou >= iou_threshold:
            flags[i] = "tp"
            taken[best_j] = True
            continue
        best_ioa = 0.0
        for j, g in enumerate(gt_boxes):
            if not gt_ignore[j]:
                continue
            best_ioa = max(best_ioa, _ioa_single(det_boxes[i], g))
        flags[i] = "ignored" if best_ioa >= 0.5 else "fp"
    return flags


def dense_bilinear_sample(values, x, y):
    """Bilinear sample of a [C, H, W] grid at one continuous point.

    Grid values sit at cell centers: value [c, r, col] lives at coordinate
    (col + 0.5, r + 0.5). Samples outside the center hull clamp to the edge.
    """
    c_count, h, w = values.shape
    fx = min(max(x - 0.5, 0.0), w - 1.0)
    fy = min(max(y - 0.5, 0.0), h - 1.0)
    x0 = int(np.floor(fx))
    y0 = int(np.floor(fy))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    ax = fx - x0
    ay = fy - y0
    return (
        values[:, y0, x0] * (1 - ax) * (1 - ay)
        + values[:, y0, x1] * ax * (1 - ay)
        + values[:, y1, x0] * (1 - ax) * ay
        + values[:, y1, x1] * ax * ay
    )


def reference_roi_align(values, box, stride, k, samples_per_bin=2):
    """Dense-sampling oracle for RoI-Align on a [C, H, W] feature grid.

    Each of the k x k bins averages samples_per_bin^2 bilinear samples at
    regular sub-bin locations (fractions (m + 0.5) / samples_per_bin).
    """
    x1, y1, x2, y2 = (v / stride for v in box)
    bw = (x2 - x1) / k
    bh = (y2 - y1) / k
    out = np.zeros((values.shape[0], k, k))
    for i in range(k):
        for j in range(k):
            acc = 0.0
            for m in range(samples_per_bin):
                for n in range(samples_per_bin):
                    sx = x1 + (j + (m + 0.5) / samples_per_bin) * bw
                    sy = y1 + (i + (n + 0.5) / samples_per_bin) * bh
                    acc = acc + dense_bilinear_sample(values, sx, sy)
            out[:, i, j] = acc / (samples_per_bin ** 2)
    return out


def finite_difference_gradients(fn, params, step=1e-3, max_entries=4, seed=0):
    """Central finite differences of scalar fn() w.r.t. named tensors.

    `params` maps names to torch tensors mutated in place. For each tensor
    a deterministic sample of up to `max_entries` flat entries is probed.
    Yields (name, flat_index, fd_value).
    """
    import torch

    rng = np.random.default_rng(seed)
    for name, tensor in params.items():
        flat = tensor.detach().reshape(-1)
        n = flat.numel()
        idxs = rng.permutation(n)[: min(max_entries, n)]
        for idx in idxs:
            idx = int(idx)
            orig = flat[idx].item()
            with torch.no_grad():
                flat[idx] = orig + step
            hi = _as_float(fn())
            with torch.no_grad():
                flat[idx] = orig - step
            lo = _as_float(fn())
            with torch.no_grad():
                flat[idx] = orig
            yield name, idx, (hi - lo) / (2.0 * step)


def _as_float(value):
    return float(value.detach()) if hasattr(value, "detach") else float(value)


def relative_error(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)
