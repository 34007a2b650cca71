"""Procedural video sequences with exact ground truth.

Soft discs ("persons") move with constant velocity over a value-noise
background, reflecting at the borders; a global per-frame jitter simulates
camera shake. Because every moving part is known, each sequence carries exact
dot annotations and an exact flow field between adjacent frames, which is what
the flow and training tests check against. A luminance factor darkens whole
sequences to stand in for night footage.
"""

import dataclasses
import math

import numpy as np

from bpcc import imageops
from bpcc.density import DotMap
from bpcc.flow import FlowField


@dataclasses.dataclass(frozen=True)
class SceneSpec:
    n_persons: int = 12
    radius_range: tuple = (4.0, 7.0)
    speed_range: tuple = (0.5, 2.0)
    texture_seed: int = 0
    octaves: int = 3
    jitter: float = 0.5
    luminance: float = 1.0
    frames: int = 4
    height: int = 128
    width: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.height < 64 or self.width < 64:
            raise ValueError("frames must be at least 64x64")
        if self.frames < 2:
            raise ValueError("need at least two frames")
        if not 0.0 < self.luminance <= 1.0:
            raise ValueError("luminance factor must be in (0, 1]")
        if self.speed_range[0] < 0 or self.speed_range[0] > self.speed_range[1]:
            raise ValueError("bad speed range")
        if self.radius_range[0] <= 0 or self.radius_range[0] > self.radius_range[1]:
            raise ValueError("bad radius range")
        if self.jitter < 0:
            raise ValueError("jitter amplitude must be nonnegative")

    @property
    def is_night(self):
        return self.luminance <= 0.2


@dataclasses.dataclass
class GeneratedSequence:
    frames: list  # T arrays (H, W, 3) float32 in [0, 1]
    dots: list  # T DotMaps
    true_flows: list  # T-1 FlowFields
    spec: SceneSpec
    radii: np.ndarray  # (n_persons,)
    centers: np.ndarray  # (T, n_persons, 2) rendered (x, y) per frame

    def person_mask(self, t, erode=0.0):
        """Pixels within (radius - erode) of any person center in frame t."""
        h, w = self.spec.height, self.spec.width
        ys, xs = np.mgrid[0:h, 0:w]
        mask = np.zeros((h, w), dtype=bool)
        for (cx, cy), r in zip(self.centers[t], self.radii):
            rr = r - erode
            if rr <= 0:
                continue
            mask |= (xs - cx) ** 2 + (ys - cy) ** 2 <= rr * rr
        return mask


def _value_noise(rng, h, w, octaves):
    out = np.zeros((h, w), dtype=np.float32)
    amp_total = 0.0
    for o in range(octaves):
        cell = max(4, 32 >> o)
        gh, gw = h // cell + 2, w // cell + 2
        grid = rng.random((gh, gw)).astype(np.float32)
        layer = imageops.resize_bilinear(grid, h, w)
        amp = 0.5**o
        out += amp * layer
        amp_total += amp
    out /= amp_total
    lo, hi = out.min(), out.max()
    return (out - lo) / max(hi - lo, 1e-6)


def _reflect(x, v, lo, hi):
    while x < lo or x > hi:
        if x < lo:
            x = 2 * lo - x
        else:
            x = 2 * hi - x
        v = -v
    return x, v


def generate_sequence(spec):
    """Render a full sequence; bit-identical for identical specs."""
    h, w, t_count = spec.height, spec.width, spec.frames
    tex_rng = np.random.default_rng(spec.texture_seed)
    rng = np.random.default_rng(spec.seed)

    margin = int(math.ceil(spec.jitter)) + 1
    world = _value_noise(tex_rng, h + 2 * margin, w + 2 * margin, spec.octaves)
    tint = _value_noise(tex_rng, h + 2 * margin, w + 2 * margin, max(1, spec.octaves - 1))
    base = 0.25 + 0.5 * world
    bg = np.stack(
        [
            np.clip(base * (0.85 + 0.3 * tint), 0.05, 0.95),
            np.clip(base, 0.05, 0.95),
            np.clip(base * (1.15 - 0.3 * tint), 0.05, 0.95),
        ],
        axis=-1,
    ).astype(np.float32)

    n = spec.n_persons
    radii = rng.uniform(spec.radius_range[0], spec.radius_range[1], size=n)
    speeds = rng.uniform(spec.speed_range[0], spec.speed_range[1], size=n)
    headings = rng.uniform(0.0, 2.0 * math.pi, size=n)
    vel = np.stack([speeds * np.cos(headings), speeds * np.sin(headings)], axis=1)
    lo_x, hi_x = spec.jitter, w - 1 - spec.jitter
    lo_y, hi_y = spec.jitter, h - 1 - spec.jitter
    pos = np.stack(
        [rng.uniform(lo_x, hi_x, size=n), rng.uniform(lo_y, hi_y, size=n)], axis=1
    )
    colors = np.empty((n, 3), dtype=np.float32)
    for i in range(n):
        base_v = 0.9 if i % 2 == 0 else 0.08
        colors[i] = np.clip(base_v + rng.uniform(-0.08, 0.08, size=3), 0.0, 1.0)

    jitters = (
        rng.uniform(-spec.jitter, spec.jitter, size=(t_count, 2))
        if spec.jitter > 0
        else np.zeros((t_count, 2))
    )

    world_pos = np.empty((t_count, n, 2))
    velocities = vel.copy()
    cur = pos.copy()
    for t in range(t_count):
        world_pos[t] = cur
        if t == t_count - 1:
            break
        nxt = cur + velocities
        for i in range(n):
            nxt[i, 0], velocities[i, 0] = _reflect(nxt[i, 0], velocities[i, 0], lo_x, hi_x)
            nxt[i, 1], velocities[i, 1] = _reflect(nxt[i, 1], velocities[i, 1], lo_y, hi_y)
        cur = nxt

    centers = world_pos + jitters[:, None, :]

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float32)
    frames = []
    dots = []
    for t in range(t_count):
        jx, jy = jitters[t]
        frame = np.stack(
            [
                imageops.sample_bilinear(bg[:, :, c], xs - jx + margin, ys - jy + margin)
                for c in range(3)
            ],
            axis=-1,
        ).astype(np.float32)
        for i in range(n):
            cx, cy = centers[t, i]
            r = radii[i]
            x0 = max(0, int(cx - r - 2))
            x1 = min(w, int(cx + r + 3))
            y0 = max(0, int(cy - r - 2))
            y1 = min(h, int(cy + r + 3))
            d = np.hypot(xs[y0:y1, x0:x1] - cx, ys[y0:y1, x0:x1] - cy)
            alpha = np.clip(r + 0.5 - d, 0.0, 1.0)[:, :, None]
            frame[y0:y1, x0:x1] = (1 - alpha) * frame[y0:y1, x0:x1] + alpha * colors[i]
        frame = np.clip(frame * spec.luminance, 0.0, 1.0).astype(np.float32)
        frames.append(frame)
        dots.append(DotMap(centers[t].copy(), width=w, height=h))

    true_flows = []
    for t in range(t_count - 1):
        dj = jitters[t + 1] - jitters[t]
        u = np.full((h, w), dj[0], dtype=np.float32)
        v = np.full((h, w), dj[1], dtype=np.float32)
        for i in range(n):
            cx, cy = centers[t, i]
            disp = centers[t + 1, i] - centers[t, i]
            mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= radii[i] ** 2
            u[mask] = disp[0]
            v[mask] = disp[1]
        true_flows.append(FlowField(u, v))

    return GeneratedSequence(frames, dots, true_flows, spec, radii, centers)


def apply_night(frames, luminance):
    """Darken frames by a multiplicative factor, clamped to [0, 1]."""
    if not 0.0 < luminance <= 1.0:
        raise ValueError("luminance factor must be in (0, 1]")
    return [np.clip(f * luminance, 0.0, 1.0).astype(np.float32) for f in frames]


def translated_pair(size, shift, texture_seed=0, octaves=4):
    """A wrap-free translated frame pair with exactly known flow.

    Both frames are crops of one larger texture; the scene shifts by `shift` =
    (dx, dy) px between them.
    """
    dx, dy = int(shift[0]), int(shift[1])
    pad = max(abs(dx), abs(dy)) + 2
    rng = np.random.default_rng(texture_seed)
    world = _value_noise(rng, size + 2 * pad, size + 2 * pad, octaves)
    a = world[pad : pad + size, pad : pad + size].copy()
    b = world[pad - dy : pad - dy + size, pad - dx : pad - dx + size].copy()
    return a, b
