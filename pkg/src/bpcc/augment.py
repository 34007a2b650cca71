"""Random training-time transforms applied consistently to each
(image, flow input, dot map) group.

The pipeline order is fixed: scale, then crop, then flips, then gamma. Flips
and rescaling also correct the flow *content* (sign of the displacement
components / magnitude scale), not just the pixel layout, so the flow channel
stays a truthful motion field; `flow_correction=False` turns that off for
ablation. Gamma only ever touches the RGB image.
"""

import dataclasses

import numpy as np

from bpcc import flow as flowmod
from bpcc import imageops
from bpcc.density import DotMap
from bpcc.flow import FlowInput

HORIZONTAL = "horizontal"
VERTICAL = "vertical"


@dataclasses.dataclass(frozen=True)
class AugmentConfig:
    crop: int = 576
    flip_prob_h: float = 0.5
    flip_prob_v: float = 0.5
    gamma_prob: float = 0.5
    gamma_range: tuple = (0.4, 2.0)
    scale_range: tuple = (0.6, 1.8)
    flow_correction: bool = True

    def __post_init__(self):
        if self.crop <= 0:
            raise ValueError("crop size must be positive")
        for p in (self.flip_prob_h, self.flip_prob_v, self.gamma_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must be in [0, 1]")
        if self.gamma_range[0] <= 0 or self.gamma_range[0] > self.gamma_range[1]:
            raise ValueError("bad gamma range")
        if self.scale_range[0] <= 0 or self.scale_range[0] > self.scale_range[1]:
            raise ValueError("bad scale range")


@dataclasses.dataclass
class SampleGroup:
    """One training group: RGB image (H, W, 3) in [0, 1], its flow input, and
    the dot annotations, all sharing H x W."""

    image: np.ndarray
    flow_input: FlowInput
    dots: DotMap
    meta: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        h, w = self.image.shape[:2]
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError("image must be (H, W, 3)")
        if self.flow_input.shape != (h, w):
            raise ValueError("flow input dims differ from the image")
        if (self.dots.width, self.dots.height) != (w, h):
            raise ValueError("dot map dims differ from the image")

    @property
    def size(self):
        return self.image.shape[1], self.image.shape[0]  # (W, H)


def random_crop(group, size, offset):
    """Crop every member to the size x size window at (ox, oy); dots outside
    the window are dropped, survivors are translated."""
    ox, oy = offset
    w, h = group.size
    if ox < 0 or oy < 0 or ox + size > w or oy + size > h:
        raise ValueError(f"crop window {size}@({ox},{oy}) exceeds {w}x{h}")
    img = group.image[oy : oy + size, ox : ox + size].copy()
    fi = FlowInput(
        group.flow_input.channels[:, oy : oy + size, ox : ox + size].copy(),
        group.flow_input.mode,
        group.flow_input.scale,
    )
    xy = group.dots.xy
    if len(xy):
        inside = (
            (xy[:, 0] >= ox) & (xy[:, 0] < ox + size)
            & (xy[:, 1] >= oy) & (xy[:, 1] < oy + size)
        )
        xy = xy[inside] - np.array([ox, oy], dtype=np.float64)
    dots = DotMap(xy.copy(), size, size)
    return SampleGroup(img, fi, dots, dict(group.meta))


def flip(group, axis, flow_correction=True):
    """Mirror the group along an axis, correcting flow semantics: the mirrored
    displacement component flips sign (cartesian) / the angle channel is
    remapped (polar). Magnitude and frame-difference channels only mirror."""
    w, h = group.size
    ch = group.flow_input.channels
    mode = group.flow_input.mode
    xy = group.dots.xy.copy()
    if axis == HORIZONTAL:
        img = group.image[:, ::-1].copy()
        ch = ch[:, :, ::-1].copy()
        if len(xy):
            xy[:, 0] = np.maximum(0.0, (w - 1) - xy[:, 0])
        if flow_correction:
            if mode == flowmod.CARTESIAN:
                ch[0] = 1.0 - ch[0]
            else:
                ch[0] = np.mod(0.5 - ch[0], 1.0)
    elif axis == VERTICAL:
        img = group.image[::-1].copy()
        ch = ch[:, ::-1].copy()
        if len(xy):
            xy[:, 1] = np.maximum(0.0, (h - 1) - xy[:, 1])
        if flow_correction:
            if mode == flowmod.CARTESIAN:
                ch[1] = 1.0 - ch[1]
            else:
                ch[0] = np.mod(1.0 - ch[0], 1.0)
    else:
        raise ValueError(f"unknown flip axis {axis!r}")
    fi = FlowInput(ch, mode, group.flow_input.scale)
    return SampleGroup(img, fi, DotMap(xy, w, h), dict(group.meta))


def gamma_correct(image, gamma):
    """Power-law intensity transform of an RGB image in [0, 1]."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if gamma == 1.0:
        return image.copy()
    return np.power(image, np.float32(gamma)).astype(np.float32)


def random_scale(group, factor):
    """Resample the group by `factor`. Dot coordinates and flow displacement
    magnitudes scale with it; the flow is decoded, scaled, resampled, and
    re-encoded so its normalized channels stay in range."""
    if factor <= 0:
        raise ValueError("scale factor must be positive")
    w, h = group.size
    if factor == 1.0:
        return SampleGroup(
            group.image.copy(),
            FlowInput(group.flow_input.channels.copy(), group.flow_input.mode,
                      group.flow_input.scale),
            DotMap(group.dots.xy.copy(), w, h),
            dict(group.meta),
        )
    nh = max(1, int(np.ceil(h * factor)))
    nw = max(1, int(np.ceil(w * factor)))
    img = np.stack(
        [imageops.resize_bilinear(group.image[:, :, c], nh, nw) for c in range(3)],
        axis=-1,
    )
    field = flowmod.decode_flow(group.flow_input)
    u = imageops.resize_bilinear(field.u, nh, nw) * factor
    v = imageops.resize_bilinear(field.v, nh, nw) * factor
    diff = imageops.resize_bilinear(group.flow_input.channels[2], nh, nw)
    fi = flowmod.encode_flow(flowmod.FlowField(u, v), diff, group.flow_input.mode)
    xy = group.dots.xy * factor
    return SampleGroup(img, fi, DotMap(xy, nw, nh), dict(group.meta))


def apply_pipeline(group, cfg, rng):
    """Draw and apply the full random transform: scale -> crop -> flips ->
    gamma. All randomness comes from `rng`, so a given generator state yields
    a bit-reproducible result. The draw order is fixed."""
    factor = float(rng.uniform(cfg.scale_range[0], cfg.scale_range[1]))
    g = random_scale(group, factor)
    w, h = g.size
    if cfg.crop > min(w, h):
        raise ValueError(f"crop {cfg.crop} larger than scaled image {w}x{h}")
    ox = int(rng.integers(0, w - cfg.crop + 1))
    oy = int(rng.integers(0, h - cfg.crop + 1))
    g = random_crop(g, cfg.crop, (ox, oy))
    if float(rng.random()) < cfg.flip_prob_h:
        g = flip(g, HORIZONTAL, cfg.flow_correction)
    if float(rng.random()) < cfg.flip_prob_v:
        g = flip(g, VERTICAL, cfg.flow_correction)
    if float(rng.random()) < cfg.gamma_prob:
        gamma = float(rng.uniform(cfg.gamma_range[0], cfg.gamma_range[1]))
        g = SampleGroup(gamma_correct(g.image, gamma), g.flow_input, g.dots, g.meta)
    return g
