"""Rectangle arithmetic: IoU, IoA, box-offset coding, five-part subdivision.

Boxes use corner (x1, y1, x2, y2) convention in continuous pixel
coordinates with x1 < x2 and y1 < y2. All functions here are pure and
safe to call from concurrent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateBox, GeometryError

# Row fractions of the part grid: head band, torso rows, leg rows.
PART_ROW_FRACTIONS = (0.0, 0.2, 0.6, 1.0)
PART_COUNT = 5

# Default bound on log size ratios before exponentiation at decode.
DEFAULT_OFFSET_CLAMP = 4.0


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle with positive width and height."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in vals):
            raise GeometryError(f"non-finite box coordinates {vals}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise DegenerateBox(f"box has non-positive extent {vals}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def as_xywh(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.width, self.height)

    @classmethod
    def from_xywh(cls, x, y, w, h) -> "Box":
        return cls(x, y, x + w, y + h)


@dataclass(frozen=True)
class OffsetVector:
    """Box regression offsets: center shifts and log size ratios."""

    tx: float
    ty: float
    tw: float
    th: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.tx, self.ty, self.tw, self.th)):
            raise GeometryError("non-finite offset vector")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.tx, self.ty, self.tw, self.th)


def _intersection_area(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def iou(a: Box, b: Box) -> float:
    """Intersection over union; symmetric, in [0, 1]."""
    inter = _intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def ioa(a: Box, b: Box) -> float:
    """Intersection area divided by area(a); asymmetric, in [0, 1]."""
    return _intersection_area(a, b) / a.area


def encode_offsets(ref: Box, target: Box) -> OffsetVector:
    """Encode `target` relative to `ref` as (tx, ty, tw, th)."""
    cxr, cyr = ref.center
    cxt, cyt = target.center
    return OffsetVector(
        tx=(cxt - cxr) / ref.width,
        ty=(cyt - cyr) / ref.height,
        tw=math.log(target.width / ref.width),
        th=math.log(target.height / ref.height),
    )


def decode_offsets(
    ref: Box,
    off: OffsetVector,
    bounds: tuple[float, float],
    clamp: float = DEFAULT_OFFSET_CLAMP,
) -> Box:
    """Invert :func:`encode_offsets` and clip the result to the image.

    Args:
        ref: reference box.
        off: offsets; tw/th are clamped to +-`clamp` before exponentiation.
        bounds: (image_width, image_height) used for clipping.

    Raises:
        DegenerateBox: if the decoded box is fully clipped away.
    """
    width, height = bounds
    cxr, cyr = ref.center
    cx = cxr + off.tx * ref.width
    cy = cyr + off.ty * ref.height
    w = ref.width * math.exp(min(max(off.tw, -clamp), clamp))
    h = ref.height * math.exp(min(max(off.th, -clamp), clamp))
    x1 = max(cx - 0.5 * w, 0.0)
    y1 = max(cy - 0.5 * h, 0.0)
    x2 = min(cx + 0.5 * w, float(width))
    y2 = min(cy + 0.5 * h, float(height))
    if x2 - x1 <= 0.0 or y2 - y1 <= 0.0:
        raise DegenerateBox(
            f"decoded box fully clipped to zero area within bounds {bounds}"
        )
    return Box(x1, y1, x2, y2)


def divide_parts(full: Box) -> list[Box]:
    """Split a full-body box into the fixed five-part grid.

    Part 1 is the top 20% of the height across the full width; parts 2/3
    split rows [20%, 60%) into left/right halves; parts 4/5 do the same
    for rows [60%, 100%]. The parts tile the box exactly.
    """
    r0, r1, r2, r3 = (full.y1 + f * full.height for f in PART_ROW_FRACTIONS)
    xm = full.x1 + 0.5 * full.width
    return [
        Box(full.x1, r0, full.x2, r1),
        Box(full.x1, r1, xm, r2),
        Box(xm, r1, full.x2, r2),
        Box(full.x1, r2, xm, r3),
        Box(xm, r2, full.x2, r3),
    ]


# ---------------------------------------------------------------------------
# Array forms used by the network and evaluation paths. Boxes are float
# arrays of shape [N, 4] in (x1, y1, x2, y2).
# ---------------------------------------------------------------------------


def boxes_to_array(boxes) -> np.ndarray:
    """Stack Box objects (or 4-sequences) into an [N, 4] float64 array."""
    if len(boxes) == 0:
        return np.zeros((0, 4), dtype=np.float64)
    rows = [b.as_tuple() if isinstance(b, Box) else tuple(b) for b in boxes]
    return np.asarray(rows, dtype=np.float64)


def array_to_boxes(arr: np.ndarray) -> list[Box]:
    return [Box(*row) for row in np.asarray(arr, dtype=np.float64)]


def areas(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    return (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])


def pairwise_intersection(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """[N, M] intersection areas between box arrays `a` and `b`."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    return np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """[N, M] IoU matrix between box arrays `a` and `b`."""
    inter = pairwise_intersection(a, b)
    union = areas(a)[:, None] + areas(b)[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def pairwise_ioa(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """[N, M] IoA matrix: intersection over area of the row box `a`."""
    inter = pairwise_intersection(a, b)
    return inter / areas(a)[:, None]


def encode_offsets_array(ref: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Vectorized :func:`encode_offsets` over [N, 4] box arrays."""
    ref = np.asarray(ref, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    rw = ref[:, 2] - ref[:, 0]
    rh = ref[:, 3] - ref[:, 1]
    rcx = 0.5 * (ref[:, 0] + ref[:, 2])
    rcy = 0.5 * (ref[:, 1] + ref[:, 3])
    tw = target[:, 2] - target[:, 0]
    th = target[:, 3] - target[:, 1]
    tcx = 0.5 * (target[:, 0] + target[:, 2])
    tcy = 0.5 * (target[:, 1] + target[:, 3])
    return np.stack(
        [(tcx - rcx) / rw, (tcy - rcy) / rh, np.log(tw / rw), np.log(th / rh)],
        axis=1,
    )


def decode_offsets_array(
    ref: np.ndarray,
    off: np.ndarray,
    bounds: tuple[float, float],
    clamp: float = DEFAULT_OFFSET_CLAMP,
) -> np.ndarray:
    """Vectorized decode + clip. Degenerate rows are NOT rejected here;
    callers filter with :func:`valid_box_mask` where dropping is allowed."""
    ref = np.asarray(ref, dtype=np.float64)
    off = np.asarray(off, dtype=np.float64)
    width, height = bounds
    rw = ref[:, 2] - ref[:, 0]
    rh = ref[:, 3] - ref[:, 1]
    cx = 0.5 * (ref[:, 0] + ref[:, 2]) + off[:, 0] * rw
    cy = 0.5 * (ref[:, 1] + ref[:, 3]) + off[:, 1] * rh
    w = rw * np.exp(np.clip(off[:, 2], -clamp, clamp))
    h = rh * np.exp(np.clip(off[:, 3], -clamp, clamp))
    out = np.stack(
        [
            np.clip(cx - 0.5 * w, 0.0, width),
            np.clip(cy - 0.5 * h, 0.0, height),
            np.clip(cx + 0.5 * w, 0.0, width),
            np.clip(cy + 0.5 * h, 0.0, height),
        ],
        axis=1,
    )
    return out


def valid_box_mask(boxes: np.ndarray, min_size: float = 1e-6) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    return (boxes[:, 2] - boxes[:, 0] > min_size) & (boxes[:, 3] - boxes[:, 1] > min_size)
