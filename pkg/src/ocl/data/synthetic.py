"""Synthetic labelled data so the full suite runs without downloads."""

from __future__ import annotations

import numpy as np


def gaussian_blobs(
    n_classes: int,
    per_class: int,
    dim: int,
    seed: int,
    *,
    spread: float = 1.0,
    separation: float = 4.0,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Isotropic Gaussian clusters with centres drawn at scale `separation`.

    Inputs are squashed into [0, 1] with a logistic so they look like pixel
    intensities (and can be reshaped into square images when `dim` is a square).
    """
    rng = np.random.default_rng(seed)
    centres = rng.normal(0.0, separation / np.sqrt(dim), size=(n_classes, dim)) * np.sqrt(dim) / 2
    xs, ys = [], []
    for c in range(n_classes):
        xs.append(centres[c] + spread * rng.standard_normal((per_class, dim)))
        ys.append(np.full(per_class, c, dtype=np.int64))
    x = 1.0 / (1.0 + np.exp(-np.concatenate(xs)))
    return x, np.concatenate(ys)
