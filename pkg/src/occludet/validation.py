"""Input validation and coercion helpers for the estimator surface."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .exceptions import ShapeMismatch
from .scenes import SceneSample


def as_image_array(image) -> np.ndarray:
    """Coerce to an HxWx3 float array in [0, 1]."""
    if isinstance(image, SceneSample):
        image = image.image
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeMismatch(f"expected HxWx3 image, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("image contains non-finite values")
    if arr.min() < -1e-6 or arr.max() > 1.0 + 1e-6:
        raise ValueError("image values must lie in [0, 1]")
    return arr


def as_scene_list(X, y=None) -> list[SceneSample]:
    """Coerce fit/evaluate inputs into a list of SceneSample.

    Accepts a dataset directory, SceneSample sequences, or parallel
    (images, ground-truth lists) sequences.
    """
    if isinstance(X, (str, Path)):
        from .scenes import load_dataset

        return load_dataset(X)
    if isinstance(X, SceneSample):
        return [X]
    X = list(X)
    if all(isinstance(s, SceneSample) for s in X):
        return X
    if y is None:
        raise ValueError(
            "raw images need ground truth: pass y as a parallel list of "
            "GroundTruthPedestrian lists"
        )
    y = list(y)
    if len(X) != len(y):
        raise ValueError(f"X and y lengths differ: {len(X)} vs {len(y)}")
    return [
        SceneSample(image=as_image_array(img), pedestrians=list(peds),
                    seed=-1, image_id=f"image_{i:06d}")
        for i, (img, peds) in enumerate(zip(X, y))
    ]
