"""Small shared image helpers: luminance, bilinear resampling, box decimation.

These are plain ndarray functions with no gradient tracking; the tensor ops in
`bpcc.tensor` are separate on purpose.
"""

import numpy as np

# Rec.601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114])


def luminance(rgb):
    """H x W x 3 in [0,1] -> H x W luminance plane."""
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected HxWx3 RGB array, got shape {rgb.shape}")
    return rgb @ _LUMA.astype(rgb.dtype)


def resize_bilinear(plane, out_h, out_w):
    """Resample a 2-D plane to (out_h, out_w), half-pixel centers, edge clamp.

    Exact copy when the size is unchanged.
    """
    h, w = plane.shape
    if (out_h, out_w) == (h, w):
        return plane.copy()
    sy = h / out_h
    sx = w / out_w
    ys = (np.arange(out_h) + 0.5) * sy - 0.5
    xs = (np.arange(out_w) + 0.5) * sx - 0.5
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    fy = ys - y0
    fx = xs - x0
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    top = plane[y0c][:, x0c] * (1 - fx) + plane[y0c][:, x1c] * fx
    bot = plane[y1c][:, x0c] * (1 - fx) + plane[y1c][:, x1c] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return out.astype(plane.dtype)


def sample_bilinear(plane, xs, ys):
    """Sample a 2-D plane at float coordinates (edge clamp)."""
    h, w = plane.shape
    sx = np.clip(xs, 0.0, w - 1.0)
    sy = np.clip(ys, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(sx).astype(np.intp), w - 2) if w > 1 else np.zeros_like(sx, np.intp)
    y0 = np.minimum(np.floor(sy).astype(np.intp), h - 2) if h > 1 else np.zeros_like(sy, np.intp)
    fx = sx - x0
    fy = sy - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    return (
        plane[y0, x0] * (1 - fx) * (1 - fy)
        + plane[y0, x1] * fx * (1 - fy)
        + plane[y1, x0] * (1 - fx) * fy
        + plane[y1, x1] * fx * fy
    )


def box_downsample(plane, factor):
    """Mean over factor x factor blocks; trailing rows/cols that do not fill a
    block are dropped."""
    h, w = plane.shape
    nh, nw = h // factor, w // factor
    trimmed = plane[: nh * factor, : nw * factor]
    return trimmed.reshape(nh, factor, nw, factor).mean(axis=(1, 3)).astype(plane.dtype)
