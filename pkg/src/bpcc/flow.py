"""Dense optical flow between adjacent frames and its 3-channel encoding.

Flow is estimated by coarse-to-fine patch alignment: a grid of template
patches per pyramid level, each aligned by inverse-compositional Gauss-Newton
on translation, then densified into a per-pixel field weighted by inverse
photometric residual. The resulting field, after magnitude thresholding, is
packed together with the luminance frame difference into the three input
channels of the flow branch (either cartesian or polar form).
"""

import dataclasses
import math

import numpy as np

from bpcc import backend, imageops

CARTESIAN = "cartesian"
POLAR = "polar"


@dataclasses.dataclass(frozen=True)
class DisParams:
    """Knobs of the patch-based flow estimator."""

    patch_size: int = 8
    patch_stride: int = 4
    iterations: int = 8
    downscale: int = 2
    min_dim: int = 16
    densify_eps: float = 1e-6

    def __post_init__(self):
        if not self.patch_size >= self.patch_stride >= 1:
            raise ValueError("need patch_size >= patch_stride >= 1")
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if self.downscale < 2:
            raise ValueError("downscale factor must be >= 2")
        if self.min_dim < self.patch_size:
            raise ValueError("coarsest level must fit at least one patch")


@dataclasses.dataclass
class FlowField:
    """Per-pixel displacement in px/frame; u rightward, v downward."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float32)
        self.v = np.asarray(self.v, dtype=np.float32)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ValueError("u and v must be equal-shaped 2-D planes")
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise ValueError("flow contains non-finite values")

    @property
    def shape(self):
        return self.u.shape

    def magnitude(self):
        return np.hypot(self.u, self.v)


@dataclasses.dataclass
class FlowInput:
    """The 3-channel flow-branch input: (3, H, W) float32 in [0, 1].

    Channel 2 is always the frame difference. `scale` is the per-frame
    magnitude normalizer the first two channels were divided by; carrying it
    makes the encoding invertible.
    """

    channels: np.ndarray
    mode: str
    scale: float

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float32)
        if self.channels.ndim != 3 or self.channels.shape[0] != 3:
            raise ValueError("flow input must be (3, H, W)")
        if self.mode not in (CARTESIAN, POLAR):
            raise ValueError(f"unknown flow encoding mode {self.mode!r}")

    @property
    def shape(self):
        return self.channels.shape[1:]


def build_pyramid(gray, params=DisParams()):
    """Downsample `gray` into a coarse-to-fine list of levels.

    Each level is a box-filtered, decimated copy of the next finer one; levels
    are added while the coarser min dim stays >= params.min_dim.
    """
    gray = np.asarray(gray, dtype=np.float32)
    if gray.ndim != 2:
        raise ValueError("expected a 2-D luminance plane")
    if min(gray.shape) < params.min_dim:
        raise ValueError(
            f"image {gray.shape} smaller than the coarsest allowed level ({params.min_dim})"
        )
    levels = [gray]
    while min(levels[-1].shape) // params.downscale >= params.min_dim:
        levels.append(imageops.box_downsample(levels[-1], params.downscale))
    return levels[::-1]


def _patch_positions(h, w, size, stride):
    """Top-left corners of the patch grid, plus forced last row/column so the
    image is fully covered."""
    ys = list(range(0, h - size + 1, stride))
    if ys[-1] != h - size:
        ys.append(h - size)
    xs = list(range(0, w - size + 1, stride))
    if xs[-1] != w - size:
        xs.append(w - size)
    pos = [(y, x) for y in ys for x in xs]
    return np.asarray(pos, dtype=np.int64)


def _central_gradients(img):
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, 1:-1] = (img[:, 2:] - img[:, :-2]) * 0.5
    gx[:, 0] = img[:, 1] - img[:, 0]
    gx[:, -1] = img[:, -1] - img[:, -2]
    gy[1:-1, :] = (img[2:, :] - img[:-2, :]) * 0.5
    gy[0, :] = img[1, :] - img[0, :]
    gy[-1, :] = img[-1, :] - img[-2, :]
    return gx, gy


def _densify(positions, uv, weights, h, w, size):
    """Per-pixel weighted mean of the patch flows covering each pixel.

    Patches are accumulated in grid order; every pixel is covered by at least
    one patch because the grid includes the forced last row/column.
    """
    num_u = np.zeros((h, w), dtype=np.float64)
    num_v = np.zeros((h, w), dtype=np.float64)
    den = np.zeros((h, w), dtype=np.float64)
    for k in range(positions.shape[0]):
        y, x = positions[k]
        wk = weights[k]
        num_u[y : y + size, x : x + size] += wk * uv[k, 0]
        num_v[y : y + size, x : x + size] += wk * uv[k, 1]
        den[y : y + size, x : x + size] += wk
    return (num_u / den).astype(np.float32), (num_v / den).astype(np.float32)


def _patch_means(plane, positions, size):
    """Mean of `plane` over each size x size patch, via an integral image."""
    s = np.zeros((plane.shape[0] + 1, plane.shape[1] + 1), dtype=np.float64)
    np.cumsum(np.cumsum(plane, axis=0), axis=1, out=s[1:, 1:])
    y, x = positions[:, 0], positions[:, 1]
    total = s[y + size, x + size] - s[y, x + size] - s[y + size, x] + s[y, x]
    return (total / (size * size)).astype(np.float32)


def dis_flow(frame_t, frame_t1, params=DisParams()):
    """Dense flow from frame_t to frame_t1 over grayscale planes in [0, 1].

    Each level runs two align-and-densify rounds: the second round re-seeds
    every patch from the neighborhood-consensus field of the first, which
    pulls back patches that locked onto a false photometric match (the cheap,
    order-independent stand-in for the reference method's neighbor
    propagation).
    """
    a = np.asarray(frame_t, dtype=np.float32)
    b = np.asarray(frame_t1, dtype=np.float32)
    if a.shape != b.shape:
        raise ValueError(f"frame size mismatch: {a.shape} vs {b.shape}")
    pyr_a = build_pyramid(a, params)
    pyr_b = build_pyramid(b, params)

    u = v = None
    for lvl_a, lvl_b in zip(pyr_a, pyr_b):
        h, w = lvl_a.shape
        if u is None:
            u = np.zeros((h, w), dtype=np.float32)
            v = np.zeros((h, w), dtype=np.float32)
        else:
            u = imageops.resize_bilinear(u, h, w) * params.downscale
            v = imageops.resize_bilinear(v, h, w) * params.downscale
        positions = _patch_positions(h, w, params.patch_size, params.patch_stride)
        gx, gy = _central_gradients(lvl_a)
        for _ in range(2):
            init = np.stack(
                [
                    _patch_means(u, positions, params.patch_size),
                    _patch_means(v, positions, params.patch_size),
                ],
                axis=1,
            )
            uv, residual = backend.dis_patch_solve(
                lvl_a, lvl_b, gx, gy, positions, init,
                params.patch_size, params.iterations, 1e-6,
            )
            weights = 1.0 / np.maximum(params.densify_eps, residual)
            u, v = _densify(positions, uv, weights, h, w, params.patch_size)
    return FlowField(u, v)


def frame_difference(frame_t, frame_t1):
    """Luminance difference of two RGB frames, mapped from [-1, 1] to [0, 1]."""
    if frame_t.shape != frame_t1.shape:
        raise ValueError(f"frame size mismatch: {frame_t.shape} vs {frame_t1.shape}")
    d = imageops.luminance(frame_t) - imageops.luminance(frame_t1)
    return ((d + 1.0) * 0.5).astype(np.float32)


def threshold_filter(flow, tau):
    """Zero out flow vectors whose magnitude is below tau px."""
    if tau < 0:
        raise ValueError(f"threshold must be nonnegative, got {tau}")
    if tau == 0:
        return FlowField(flow.u.copy(), flow.v.copy())
    keep = flow.magnitude() >= tau
    return FlowField(np.where(keep, flow.u, 0.0), np.where(keep, flow.v, 0.0))


def encode_flow(flow, frame_diff, mode):
    """Pack a flow field and frame-difference plane into the 3-channel input.

    cartesian: (u, v) divided by the per-frame max magnitude then remapped
    from [-1, 1] to [0, 1]. polar: normalized angle in [0, 1) and normalized
    magnitude in [0, 1]. Channel 2 is the frame difference in both modes.
    """
    if flow.shape != frame_diff.shape:
        raise ValueError(f"size mismatch: flow {flow.shape} vs diff {frame_diff.shape}")
    mag = flow.magnitude()
    scale = float(mag.max())
    if scale == 0.0:
        scale = 1.0
    if mode == CARTESIAN:
        c0 = (flow.u / scale + 1.0) * 0.5
        c1 = (flow.v / scale + 1.0) * 0.5
    elif mode == POLAR:
        angle = np.arctan2(flow.v, flow.u)  # atan2(0, 0) == 0, keeping c0 total
        c0 = np.mod(angle / (2.0 * math.pi), 1.0)
        c1 = mag / scale
    else:
        raise ValueError(f"unknown flow encoding mode {mode!r}")
    channels = np.stack([c0, c1, frame_diff]).astype(np.float32)
    return FlowInput(channels, mode, scale)


def decode_flow(flow_input):
    """Invert encode_flow using the carried scale."""
    c0, c1 = flow_input.channels[0], flow_input.channels[1]
    m = flow_input.scale
    if flow_input.mode == CARTESIAN:
        u = (2.0 * c0 - 1.0) * m
        v = (2.0 * c1 - 1.0) * m
    else:
        angle = c0 * (2.0 * math.pi)
        mag = c1 * m
        u = mag * np.cos(angle)
        v = mag * np.sin(angle)
    return FlowField(u.astype(np.float32), v.astype(np.float32))


def flow_input_from_frames(frame_t, frame_t1, mode, tau, params=DisParams()):
    """Full front end: estimate, denoise, and encode flow for an RGB pair."""
    gray_t = imageops.luminance(frame_t)
    gray_t1 = imageops.luminance(frame_t1)
    flow = threshold_filter(dis_flow(gray_t, gray_t1, params), tau)
    return flow, encode_flow(flow, frame_difference(frame_t, frame_t1), mode)
