"""The bi-path crowd counter: two encoder-decoder streams (RGB and flow),
spatial/channel attention over the fused features, and a regression head that
emits a full-resolution density map.

Every channel count scales with a width multiplier so the same architecture
runs from unit-test size up to the full 576-crop layout:

    encoder stages   round(w * [64, 256, 512, 1024]), stem stride 2 then
                     stage strides 1, 2, 2  (x8 total)
    decoder          six 3x3 dilation-2 convs, round(w * [512, 512, 512, 256, 128, 64])
    attention        spatial + channel branches, gated residually by scalars
                     initialized to zero (so a fresh model is attention-free)
    head             3x3 dilation-2 conv to round(w*512), 1x1 conv to one
                     channel, relu, bilinear x8 upsample

Total parameter count: sum over convs of co*ci*kh*kw + co, plus the two
attention gates; `BiPathModel.param_count()` evaluates it from the config
alone and the test suite cross-checks it against the allocated arrays.
"""

import dataclasses
import hashlib

import numpy as np

from bpcc import tensor as T

ENCODER_BASE = (64, 256, 512, 1024)
DECODER_BASE = (512, 512, 512, 256, 128, 64)
HEAD_BASE = 512
ATTENTION_MODES = ("fused", "per_stream")
INIT_SCHEMES = ("he", "normal")


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    width: float = 1.0
    crop: int = 576
    flow_mode: str = "polar"
    use_flow: bool = True
    attention: str = "fused"
    init: str = "he"
    dtype: str = "float32"

    def __post_init__(self):
        if not 0.0 < self.width <= 1.0:
            raise ValueError("width multiplier must be in (0, 1]")
        if self.crop % 8 != 0 or self.crop <= 0:
            raise ValueError("crop size must be a positive multiple of 8")
        if self.attention not in ATTENTION_MODES:
            raise ValueError(f"attention must be one of {ATTENTION_MODES}")
        if self.init not in INIT_SCHEMES:
            raise ValueError(f"init must be one of {INIT_SCHEMES}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def scaled(self, base):
        return tuple(max(1, int(round(self.width * c))) for c in base)

    @property
    def encoder_channels(self):
        return self.scaled(ENCODER_BASE)

    @property
    def decoder_channels(self):
        return self.scaled(DECODER_BASE)

    @property
    def head_channels(self):
        return self.scaled((HEAD_BASE,))[0]

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def digest(self):
        key = (
            f"width={self.width!r};crop={self.crop};flow_mode={self.flow_mode};"
            f"use_flow={self.use_flow};attention={self.attention}"
        )
        return hashlib.sha256(key.encode()).digest()


def _conv_shapes(cfg):
    """Ordered (name, out_ch, in_ch, k) for every conv in the model."""
    enc = cfg.encoder_channels
    dec = cfg.decoder_channels
    shapes = []
    streams = ["img", "flo"] if cfg.use_flow else ["img"]
    for s in streams:
        shapes.append((f"{s}.stem", enc[0], 3, 3))
        prev = enc[0]
        for i, c in enumerate(enc[1:], start=1):
            shapes.append((f"{s}.s{i}.c1", c, prev, 3))
            shapes.append((f"{s}.s{i}.c2", c, c, 3))
            prev = c
        for k, c in enumerate(dec, start=1):
            shapes.append((f"{s}.dec{k}", c, prev, 3))
            prev = c
    stream_out = cfg.decoder_channels[-1]
    if cfg.attention == "fused":
        fuse = stream_out * (2 if cfg.use_flow else 1)
        sam_in = cam_in = fuse
        att_out = 2 * fuse
    else:
        sam_in = cam_in = stream_out
        att_out = 2 * stream_out
    rc = max(1, sam_in // 8)
    shapes.append(("sam.q", rc, sam_in, 1))
    shapes.append(("sam.k", rc, sam_in, 1))
    shapes.append(("sam.v", sam_in, sam_in, 1))
    shapes.append(("head.conv", cfg.head_channels, att_out, 3))
    shapes.append(("head.out", 1, cfg.head_channels, 1))
    return shapes, sam_in, cam_in


class BiPathModel:
    """Parameter container plus forward passes. Batch size is one crop."""

    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        dtype = cfg.np_dtype
        rng = np.random.default_rng(seed)
        self.params = {}
        shapes, self._sam_in, self._cam_in = _conv_shapes(cfg)
        for name, co, ci, k in shapes:
            if cfg.init == "he":
                std = float(np.sqrt(2.0 / (ci * k * k)))
            else:
                std = 0.01
            w = rng.normal(0.0, std, size=(co, ci, k, k))
            self._add(f"{name}.w", w, dtype)
            self._add(f"{name}.b", np.zeros(co), dtype)
        self._add("sam.gamma", np.zeros(()), dtype)
        self._add("cam.gamma", np.zeros(()), dtype)

    def _add(self, name, data, dtype):
        self.params[name] = T.Param(name, np.asarray(data, dtype=dtype))

    def _v(self, name):
        return self.params[name].value

    def param_count(self):
        shapes, _, _ = _conv_shapes(self.cfg)
        return sum(co * ci * k * k + co for _, co, ci, k in shapes) + 2

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()

    # ----- submodule forwards -------------------------------------------

    def _conv_relu(self, name, x, stride=1, padding=1, dilation=1):
        y = T.conv2d(x, self._v(f"{name}.w"), self._v(f"{name}.b"),
                     stride=stride, padding=padding, dilation=dilation)
        return T.relu(y)

    def encoder_forward(self, x, stream="img"):
        n, c, h, w = x.shape
        if h % 8 or w % 8:
            raise ValueError(f"encoder input dims must be divisible by 8, got {h}x{w}")
        y = self._conv_relu(f"{stream}.stem", x, stride=2)
        for i, s in enumerate((1, 2, 2), start=1):
            y = self._conv_relu(f"{stream}.s{i}.c1", y, stride=s)
            y = self._conv_relu(f"{stream}.s{i}.c2", y)
        return y

    def decoder_forward(self, x, stream="img"):
        if x.shape[1] != self.cfg.encoder_channels[-1]:
            raise ValueError(
                f"decoder expects {self.cfg.encoder_channels[-1]} channels, got {x.shape[1]}"
            )
        y = x
        for k in range(1, 7):
            y = self._conv_relu(f"{stream}.dec{k}", y, padding=2, dilation=2)
        return y

    def sam_forward(self, x):
        """Spatial attention: softmax affinity over positions, residual with a
        learnable gate that starts at zero."""
        n, c, h, w = x.shape
        if n != 1:
            raise ValueError("attention runs on single-sample batches")
        q = T.conv2d(x, self._v("sam.q.w"), self._v("sam.q.b"))
        k = T.conv2d(x, self._v("sam.k.w"), self._v("sam.k.b"))
        v = T.conv2d(x, self._v("sam.v.w"), self._v("sam.v.b"))
        rc = q.shape[1]
        q2 = T.reshape(q, (rc, h * w))
        k2 = T.reshape(k, (rc, h * w))
        v2 = T.reshape(v, (c, h * w))
        attn = T.softmax_rows(T.matmul(T.transpose2d(q2), k2))
        out = T.matmul(v2, T.transpose2d(attn))
        return T.scale_add(x, T.reshape(out, (1, c, h, w)), self._v("sam.gamma"))

    def cam_forward(self, x):
        """Channel attention: softmax affinity between channel maps, same
        zero-initialized residual gate."""
        n, c, h, w = x.shape
        if n != 1:
            raise ValueError("attention runs on single-sample batches")
        x2 = T.reshape(x, (c, h * w))
        attn = T.softmax_rows(T.matmul(x2, T.transpose2d(x2)))
        out = T.matmul(attn, x2)
        return T.scale_add(x, T.reshape(out, (1, c, h, w)), self._v("cam.gamma"))

    # ----- full forward ---------------------------------------------------

    def forward(self, image, flow_input=None):
        """image/flow_input: (3, H, W) arrays or tensors; returns the
        (1, 1, H, W) density tensor (gradients flow when a Tape is active)."""
        x = image if isinstance(image, T.Tensor) else T.Tensor(
            np.asarray(image)[None], dtype=self.cfg.np_dtype)
        if x.data.ndim == 3:
            x = T.reshape(x, (1,) + x.shape)
        if self.cfg.use_flow:
            if flow_input is None:
                raise ValueError("model was built with a flow branch; flow input required")
            f = flow_input if isinstance(flow_input, T.Tensor) else T.Tensor(
                np.asarray(flow_input)[None], dtype=self.cfg.np_dtype)
            if f.data.ndim == 3:
                f = T.reshape(f, (1,) + f.shape)
            if f.shape[2:] != x.shape[2:]:
                raise ValueError(f"input size mismatch: {x.shape[2:]} vs {f.shape[2:]}")
        di = self.decoder_forward(self.encoder_forward(x, "img"), "img")
        if self.cfg.use_flow:
            df = self.decoder_forward(self.encoder_forward(f, "flo"), "flo")
            if self.cfg.attention == "fused":
                fused = T.concat_channels([di, df])
                att = T.concat_channels([self.sam_forward(fused), self.cam_forward(fused)])
            else:
                att = T.concat_channels([self.sam_forward(di), self.cam_forward(df)])
        else:
            att = T.concat_channels([self.sam_forward(di), self.cam_forward(di)])
        y = self._conv_relu("head.conv", att, padding=2, dilation=2)
        y = T.conv2d(y, self._v("head.out.w"), self._v("head.out.b"))
        y = T.relu(y)
        return T.bilinear_upsample(y, 8)

    def predict(self, image, flow_input=None):
        """Forward without gradient tracking; returns the H x W density map."""
        out = self.forward(image, flow_input)
        return out.data[0, 0].astype(np.float32)


def loss(pred, gt):
    """Mean squared pixel error between density tensors/maps."""
    if not isinstance(pred, T.Tensor):
        pred = T.Tensor(pred)
    if not isinstance(gt, T.Tensor):
        gt = T.Tensor(np.asarray(gt, dtype=pred.data.dtype))
    return T.mse(pred, gt)
