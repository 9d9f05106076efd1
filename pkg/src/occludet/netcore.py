"""Shared differentiable building blocks: feature extractor and RoI-Align.

All training-time arithmetic runs in double precision so that every
differentiable operation can be validated against central finite
differences. Parameters are immutable during forward/backward evaluation;
updates happen between evaluation phases (single writer).

RoI-Align convention: the value of feature cell (r, c) lives at
feature-map coordinate (c + 0.5, r + 0.5) (cell center); box coordinates
are divided by the stride, each of the k x k bins averages 2 x 2 bilinear
samples at the sub-bin fractions 0.25 and 0.75, and samples outside the
center hull clamp to the edge.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .exceptions import DegenerateBox, ShapeMismatch

DTYPE = torch.float64
FEATURE_STRIDE = 8
RECTIFIER_SHARPNESS = 4.0


def rectifier(x: torch.Tensor) -> torch.Tensor:
    """Smooth rectifier (sharp softplus) used by every trainable block.

    Behaves like ReLU away from zero but is differentiable everywhere,
    which keeps finite-difference gradient checks valid at step 1e-3.
    """
    return torch.nn.functional.softplus(x, beta=RECTIFIER_SHARPNESS)


@dataclass
class FeatureMap:
    """Strided feature grid produced by the extractor."""

    values: torch.Tensor  # [C, H/s, W/s]
    stride: int

    @property
    def channels(self) -> int:
        return int(self.values.shape[0])


class FeatureExtractor(nn.Module):
    """Small stack of strided convolutions; overall stride 8."""

    def __init__(self, channels: int = 64):
        super().__init__()
        mid = max(channels // 2, 8)
        self.conv1 = nn.Conv2d(3, mid, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(mid, channels, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(channels, channels, 3, stride=2, padding=1)
        self.conv4 = nn.Conv2d(channels, channels, 3, stride=1, padding=1)
        self.channels = channels
        self.stride = FEATURE_STRIDE
        self.to(DTYPE)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = rectifier(self.conv1(x))
        x = rectifier(self.conv2(x))
        x = rectifier(self.conv3(x))
        x = rectifier(self.conv4(x))
        return x


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """HxWx3 array in [0, 1] -> [3, H', W'] tensor padded to the stride."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeMismatch(f"expected HxWx3 image, got shape {arr.shape}")
    h, w = arr.shape[:2]
    pad_h = (-h) % FEATURE_STRIDE
    pad_w = (-w) % FEATURE_STRIDE
    if pad_h or pad_w:
        arr = np.pad(arr, ((0, pad_h), (0, pad_w), (0, 0)))
    return torch.from_numpy(arr.transpose(2, 0, 1)).to(DTYPE)


def extract_features(image, extractor: FeatureExtractor) -> FeatureMap:
    """Run the extractor on one image (array or pre-converted tensor)."""
    if isinstance(image, np.ndarray):
        tensor = image_to_tensor(image)
    else:
        tensor = image.to(DTYPE)
    values = extractor(tensor.unsqueeze(0))[0]
    return FeatureMap(values=values, stride=extractor.stride)


def roi_align(
    fm: FeatureMap,
    boxes,
    k: int = 7,
    samples_per_bin: int = 2,
) -> torch.Tensor:
    """Pool [N, C, k, k] region features from image-coordinate boxes.

    Differentiable with respect to `fm.values`.

    Raises:
        DegenerateBox: any box with area < 1 px^2.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    n = len(boxes)
    c, height, width = fm.values.shape
    if n == 0:
        return fm.values.new_zeros((0, c, k, k))
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    if (areas < 1.0).any():
        raise DegenerateBox("roi_align received a box with area < 1 px^2")

    b = boxes / fm.stride
    frac = (np.arange(samples_per_bin) + 0.5) / samples_per_bin
    offs = (np.arange(k)[:, None] + frac[None, :]).reshape(-1)  # [k*S]
    xs = b[:, 0, None] + offs[None, :] * ((b[:, 2] - b[:, 0]) / k)[:, None]
    ys = b[:, 1, None] + offs[None, :] * ((b[:, 3] - b[:, 1]) / k)[:, None]

    def split(coords, size):
        f = np.clip(coords - 0.5, 0.0, size - 1.0)
        lo = np.floor(f).astype(np.int64)
        lo = np.minimum(lo, size - 2) if size > 1 else lo
        return lo, f - lo

    x0, ax = split(xs, width)
    y0, ay = split(ys, height)
    x0_t = torch.from_numpy(x0)
    y0_t = torch.from_numpy(y0)
    ax_t = torch.from_numpy(ax).to(DTYPE)
    ay_t = torch.from_numpy(ay).to(DTYPE)

    vals = fm.values
    iy0 = y0_t[:, :, None]
    ix0 = x0_t[:, None, :]
    v00 = vals[:, iy0, ix0]
    v01 = vals[:, iy0, ix0 + 1] if width > 1 else v00
    v10 = vals[:, iy0 + 1, ix0] if height > 1 else v00
    v11 = vals[:, iy0 + 1, ix0 + 1] if width > 1 and height > 1 else v00
    wy = ay_t[None, :, :, None]
    wx = ax_t[None, :, None, :]
    grid = (
        v00 * (1 - wy) * (1 - wx)
        + v01 * (1 - wy) * wx
        + v10 * wy * (1 - wx)
        + v11 * wy * wx
    )  # [C, N, k*S, k*S]
    grid = grid.reshape(c, n, k, samples_per_bin, k, samples_per_bin)
    pooled = grid.mean(dim=(3, 5))  # [C, N, k, k]
    return pooled.permute(1, 0, 2, 3)


# ---------------------------------------------------------------------------
# Checkpoints: a single npz archive of named arrays plus a JSON manifest.
# ---------------------------------------------------------------------------


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, named_arrays: dict[str, np.ndarray], config: dict) -> None:
    """Single zip archive: one .npy per array plus manifest.json.

    Written with fixed zip timestamps so identical runs produce
    byte-identical checkpoints.
    """
    import io
    import zipfile

    arrays = {name: np.asarray(a, dtype=np.float64) for name, a in named_arrays.items()}
    manifest = {
        "arrays": {
            name: {"shape": list(a.shape), "dtype": str(a.dtype)}
            for name, a in arrays.items()
        },
        "config": config,
        "config_hash": config_hash(config),
    }
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as archive:
        def add(name: str, payload: bytes):
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            archive.writestr(info, payload)

        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, arrays[name], allow_pickle=False)
            add(name + ".npy", buf.getvalue())
        add("manifest.json", json.dumps(manifest, sort_keys=True).encode())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    import zipfile

    with zipfile.ZipFile(path) as archive:
        manifest = json.loads(archive.read("manifest.json"))
    arrays = {}
    with np.load(path, allow_pickle=False) as npz:
        for name, meta in manifest["arrays"].items():
            if name not in npz.files:
                raise ShapeMismatch(f"checkpoint array {name!r} missing")
            arrays[name] = npz[name]
            if list(arrays[name].shape) != meta["shape"]:
                raise ShapeMismatch(f"checkpoint array {name!r} misshaped")
    return arrays, manifest
