"""Dense tensor arithmetic with tape-based reverse-mode differentiation.

Feature maps are NCHW, row-major, float32 by default; everything can also run
in float64, which is what the finite-difference gradient checks use. Ops are
free functions that execute eagerly and, when a Tape is active, append a
backward closure to it. There is no broadcasting beyond the conv bias over
spatial dims: shapes must match exactly, and a mismatch raises. Any op that
produces a NaN/Inf raises NonFiniteError rather than letting it propagate.
"""

import numpy as np

from bpcc import backend


class NonFiniteError(ArithmeticError):
    """An op produced NaN or Inf."""


class Tensor:
    """Dense N-d array plus an accumulated gradient of the same shape."""

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g


class Param:
    """Named trainable tensor; its gradient lives on the wrapped Tensor."""

    __slots__ = ("name", "value")

    def __init__(self, name, data, dtype=None):
        self.name = name
        self.value = Tensor(data, dtype=dtype)

    @property
    def grad(self):
        if self.value.grad is None:
            return np.zeros_like(self.value.data)
        return self.value.grad

    def zero_grad(self):
        self.value.grad = None

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.value.shape})"


class Tape:
    """Ordered record of executed ops. Backward replays it in reverse, so each
    tensor's gradient is fully accumulated before its producer runs."""

    _active = None

    def __init__(self):
        self._records = []

    def __enter__(self):
        if Tape._active is not None:
            raise RuntimeError("a Tape is already active; nesting is not supported")
        Tape._active = self
        return self

    def __exit__(self, exc_type, exc, tb):
        Tape._active = None
        return False

    def record(self, backward_fn):
        self._records.append(backward_fn)

    def backward(self, output, seed=None):
        """Seed the output gradient (ones by default) and run all backward
        closures in reverse order."""
        if seed is None:
            seed = np.ones_like(output.data)
        else:
            seed = np.asarray(seed, dtype=output.dtype)
            if seed.shape != output.data.shape:
                raise ValueError("seed gradient shape must match the output shape")
        output.accumulate_grad(seed)
        for fn in reversed(self._records):
            fn()


def _finite(arr, opname):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{opname} produced non-finite values")
    return arr


def _record(fn):
    tape = Tape._active
    if tape is not None:
        tape.record(fn)


def _as_tensor(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _same_dtype(*tensors):
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise ValueError("mixed float32/float64 operands are not supported")
    return dt


# ---------------------------------------------------------------------------
# convolution

def conv2d(x, w, b, stride=1, padding=0, dilation=1):
    """Dilated 2-D convolution, NCHW input, OIHW weights, bias over channels.

    Padding is whatever the caller asks for; output dims follow
    (H + 2p - d*(K-1) - 1) // s + 1 and must be positive.
    """
    _same_dtype(x, w, b)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError("conv2d expects NCHW input and OIHW weights")
    n, ci, h, wd = x.shape
    co, ci_w, kh, kw = w.shape
    if ci != ci_w:
        raise ValueError(f"conv2d channel mismatch: input has {ci}, weights expect {ci_w}")
    if b.shape != (co,):
        raise ValueError(f"conv2d bias must have shape ({co},), got {b.shape}")
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d output dims would be {ho}x{wo}")
    y = backend.conv2d_forward(x.data, w.data, stride, padding, dilation)
    y += b.data[None, :, None, None]
    out = Tensor(_finite(y, "conv2d"))

    def backward():
        gy = out.grad
        if gy is None:
            return
        x.accumulate_grad(backend.conv2d_backward_x(w.data, gy, x.shape, stride, padding, dilation))
        w.accumulate_grad(backend.conv2d_backward_w(x.data, gy, w.shape, stride, padding, dilation))
        b.accumulate_grad(gy.sum(axis=(0, 2, 3)))

    _record(backward)
    return out


# ---------------------------------------------------------------------------
# pointwise

def relu(x):
    out = Tensor(_finite(np.maximum(x.data, 0), "relu"))

    def backward():
        if out.grad is not None:
            x.accumulate_grad(out.grad * (x.data > 0))

    _record(backward)
    return out


def add(x, y):
    if x.shape != y.shape:
        raise ValueError(f"add shape mismatch: {x.shape} vs {y.shape}")
    _same_dtype(x, y)
    out = Tensor(_finite(x.data + y.data, "add"))

    def backward():
        if out.grad is not None:
            x.accumulate_grad(out.grad)
            y.accumulate_grad(out.grad)

    _record(backward)
    return out


def sub(x, y):
    if x.shape != y.shape:
        raise ValueError(f"sub shape mismatch: {x.shape} vs {y.shape}")
    _same_dtype(x, y)
    out = Tensor(_finite(x.data - y.data, "sub"))

    def backward():
        if out.grad is not None:
            x.accumulate_grad(out.grad)
            y.accumulate_grad(-out.grad)

    _record(backward)
    return out


def scale_add(x, y, gamma):
    """x + gamma * y with a scalar (possibly learnable) gamma. gamma == 0 is a
    bit-exact identity on x, which is what the attention residuals rely on at
    initialization."""
    if x.shape != y.shape:
        raise ValueError(f"scale_add shape mismatch: {x.shape} vs {y.shape}")
    gamma = _as_tensor(gamma, x.dtype)
    if gamma.data.size != 1:
        raise ValueError("gamma must be a scalar")
    _same_dtype(x, y, gamma)
    g = float(gamma.data.reshape(()))
    out = Tensor(_finite(x.data + g * y.data if g != 0.0 else x.data.copy(), "scale_add"))

    def backward():
        gy = out.grad
        if gy is None:
            return
        x.accumulate_grad(gy)
        y.accumulate_grad(g * gy)
        gamma.accumulate_grad(np.sum(gy * y.data).reshape(gamma.data.shape))

    _record(backward)
    return out


def concat_channels(xs):
    """Concatenate NCHW tensors along the channel axis, argument order."""
    if not xs:
        raise ValueError("concat_channels needs at least one tensor")
    _same_dtype(*xs)
    first = xs[0]
    for t in xs[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (first.shape[0], first.shape[2], first.shape[3]):
            raise ValueError("concat_channels requires equal N, H, W")
    out = Tensor(_finite(np.concatenate([t.data for t in xs], axis=1), "concat_channels"))
    offsets = np.cumsum([0] + [t.shape[1] for t in xs])

    def backward():
        gy = out.grad
        if gy is None:
            return
        for t, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            t.accumulate_grad(gy[:, lo:hi])

    _record(backward)
    return out


def slice_channels(x, start, stop):
    out = Tensor(x.data[:, start:stop].copy())

    def backward():
        gy = out.grad
        if gy is None:
            return
        g = np.zeros_like(x.data)
        g[:, start:stop] = gy
        x.accumulate_grad(g)

    _record(backward)
    return out


# ---------------------------------------------------------------------------
# matmul / softmax / shape ops

def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D tensors")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    _same_dtype(a, b)
    out = Tensor(_finite(a.data @ b.data, "matmul"))

    def backward():
        gy = out.grad
        if gy is None:
            return
        a.accumulate_grad(gy @ b.data.T)
        b.accumulate_grad(a.data.T @ gy)

    _record(backward)
    return out


def softmax_rows(a):
    """Row-wise softmax over the last axis of a 2-D tensor, stabilized by
    subtracting the row max."""
    if a.data.ndim != 2:
        raise ValueError("softmax_rows expects a 2-D tensor")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    out = Tensor(_finite(s, "softmax_rows"))

    def backward():
        gy = out.grad
        if gy is None:
            return
        dot = np.sum(gy * s, axis=1, keepdims=True)
        a.accumulate_grad((gy - dot) * s)

    _record(backward)
    return out


def transpose2d(a):
    if a.data.ndim != 2:
        raise ValueError("transpose2d expects a 2-D tensor")
    out = Tensor(a.data.T.copy())

    def backward():
        if out.grad is not None:
            a.accumulate_grad(out.grad.T)

    _record(backward)
    return out


def reshape(x, shape):
    out = Tensor(x.data.reshape(shape).copy())

    def backward():
        if out.grad is not None:
            x.accumulate_grad(out.grad.reshape(x.data.shape))

    _record(backward)
    return out


# ---------------------------------------------------------------------------
# upsampling

def _upsample_axis_indices(size, factor):
    src = (np.arange(size * factor) + 0.5) / factor - 0.5
    i0 = np.floor(src).astype(np.intp)
    frac = src - i0
    lo = np.clip(i0, 0, size - 1)
    hi = np.clip(i0 + 1, 0, size - 1)
    return lo, hi, frac


def bilinear_upsample(x, factor):
    """Integer-factor bilinear upsampling of NCHW maps, half-pixel centers
    (align-corners=false), edges clamped. Constant maps stay constant."""
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if x.data.ndim != 4:
        raise ValueError("bilinear_upsample expects NCHW")
    if factor == 1:
        y0 = x.data.copy()
        out = Tensor(y0)

        def backward_id():
            if out.grad is not None:
                x.accumulate_grad(out.grad)

        _record(backward_id)
        return out

    n, c, h, w = x.shape
    ylo, yhi, fy = _upsample_axis_indices(h, factor)
    xlo, xhi, fx = _upsample_axis_indices(w, factor)
    rows = x.data[:, :, ylo, :] * (1 - fy)[None, None, :, None] + x.data[:, :, yhi, :] * fy[None, None, :, None]
    y = rows[:, :, :, xlo] * (1 - fx) + rows[:, :, :, xhi] * fx
    out = Tensor(_finite(y.astype(x.dtype), "bilinear_upsample"))

    def backward():
        gy = out.grad
        if gy is None:
            return
        grows = np.zeros((n, c, h * factor, w), dtype=gy.dtype)
        np.add.at(grows, (slice(None), slice(None), slice(None), xlo), gy * (1 - fx))
        np.add.at(grows, (slice(None), slice(None), slice(None), xhi), gy * fx)
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None), slice(None), ylo, slice(None)), grows * (1 - fy)[None, None, :, None])
        np.add.at(gx, (slice(None), slice(None), yhi, slice(None)), grows * fy[None, None, :, None])
        x.accumulate_grad(gx)

    _record(backward)
    return out


# ---------------------------------------------------------------------------
# reductions

def mse(x, y):
    """Mean squared difference, returned as a 0-d tensor."""
    if x.shape != y.shape:
        raise ValueError(f"mse shape mismatch: {x.shape} vs {y.shape}")
    _same_dtype(x, y)
    d = x.data - y.data
    out = Tensor(_finite(np.asarray(np.mean(d * d), dtype=x.dtype), "mse"))
    scale = 2.0 / d.size

    def backward():
        gy = out.grad
        if gy is None:
            return
        g = (scale * float(gy)) * d
        x.accumulate_grad(g)
        y.accumulate_grad(-g)

    _record(backward)
    return out


# ---------------------------------------------------------------------------
# gradient checking

def gradient_check(fn, inputs, eps=None, seed=0, max_coords=None):
    """Compare tape gradients of fn(*inputs) against central differences.

    The output is scalarized as sum(W * out) for a fixed random W, so every
    output coordinate participates. Returns the max over checked input
    coordinates of |analytic - numeric| / max(1, |numeric|). Inputs should be
    float64 for meaningful thresholds; float32 is allowed (with a larger eps)
    for the loose-tolerance variant. With max_coords set, a deterministic
    random subset of coordinates per input is checked instead of all of them.
    """
    rng = np.random.default_rng(seed)
    dtype = inputs[0].dtype
    if eps is None:
        eps = 1e-4 if dtype == np.float64 else 4e-3

    for t in inputs:
        t.grad = None
    with Tape() as tape:
        out = fn(*inputs)
        weights = rng.standard_normal(out.data.shape).astype(dtype)
        tape.backward(out, seed=weights)

    def scalarize():
        return float(np.sum(weights * fn(*inputs).data, dtype=np.float64))

    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        n = flat.size
        coords = range(n)
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + eps
            f_plus = scalarize()
            flat[idx] = orig - eps
            f_minus = scalarize()
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2 * eps)
            err = abs(float(analytic.reshape(-1)[idx]) - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
