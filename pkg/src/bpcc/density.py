"""Dot annotations, density-map supervision, and the evaluation metrics.

A density map is an H x W nonnegative float32 plane whose integral is the
person count. Each dot contributes a truncated Gaussian renormalized to unit
mass over its in-image support, so counts are preserved exactly even at
borders.
"""

import dataclasses
import math

import numpy as np


@dataclasses.dataclass
class DotMap:
    """Head positions (x, y) in pixel coordinates for one frame."""

    xy: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        arr = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        self.xy = arr
        if arr.size:
            x, y = arr[:, 0], arr[:, 1]
            if (x < 0).any() or (x >= self.width).any() or (y < 0).any() or (y >= self.height).any():
                raise ValueError("dot outside the frame")

    def __len__(self):
        return self.xy.shape[0]


def rasterize_density(dots, sigma):
    """Sum of per-dot isotropic Gaussians (std sigma, truncated at radius
    4*sigma, renormalized to unit mass over in-image support)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    h, w = dots.height, dots.width
    out = np.zeros((h, w), dtype=np.float64)
    radius = 4.0 * sigma
    inv = 1.0 / (2.0 * sigma * sigma)
    for x, y in dots.xy:
        x0 = max(0, int(math.ceil(x - radius)))
        x1 = min(w - 1, int(math.floor(x + radius)))
        y0 = max(0, int(math.ceil(y - radius)))
        y1 = min(h - 1, int(math.floor(y + radius)))
        if x0 > x1 or y0 > y1:
            continue
        dx = np.arange(x0, x1 + 1, dtype=np.float64) - x
        dy = np.arange(y0, y1 + 1, dtype=np.float64) - y
        d2 = dy[:, None] ** 2 + dx[None, :] ** 2
        kernel = np.where(d2 <= radius * radius, np.exp(-d2 * inv), 0.0)
        out[y0 : y1 + 1, x0 : x1 + 1] += kernel / kernel.sum()
    return out.astype(np.float32)


def count(density_map):
    """Integral of the map = estimated person count."""
    return float(np.sum(density_map, dtype=np.float64))


def pixel_mae_mse(pred, gt):
    """Per-pixel mean absolute error and root mean squared error.

    The second value is a root-mean-square, following the usual convention of
    reporting it under the MSE label.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"size mismatch: {pred.shape} vs {gt.shape}")
    d = pred.astype(np.float64) - gt.astype(np.float64)
    mae = float(np.mean(np.abs(d)))
    mse = float(np.sqrt(np.mean(d * d)))
    return mae, mse


def count_mae_mse(pairs):
    """Aggregate |pred - gt| count errors over frames: (mean abs, root mean square)."""
    if len(pairs) == 0:
        raise ValueError("need at least one (pred, gt) pair")
    d = np.array([float(p) - float(g) for p, g in pairs], dtype=np.float64)
    return float(np.mean(np.abs(d))), float(np.sqrt(np.mean(d * d)))
