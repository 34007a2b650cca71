"""Pure-numpy implementations of the hot kernels.

Same call signatures as the compiled extension (`bpcc._kernels_c`); whichever
is importable gets picked by `bpcc.backend`. Convolutions are done as one GEMM
per kernel tap, which keeps memory bounded (no full im2col buffer) while still
going through BLAS.
"""

import numpy as np

NAME = "numpy"


def conv2d_forward(x, w, stride, padding, dilation):
    n, ci, h, wd = x.shape
    co, ci_w, kh, kw = w.shape
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    xp = x
    if padding > 0:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, co, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            xs = xp[
                :,
                :,
                i * dilation : i * dilation + (ho - 1) * stride + 1 : stride,
                j * dilation : j * dilation + (wo - 1) * stride + 1 : stride,
            ]
            out += np.einsum("oi,nihw->nohw", w[:, :, i, j], xs, optimize=True)
    return out


def conv2d_backward_x(w, gy, x_shape, stride, padding, dilation):
    n, ci, h, wd = x_shape
    co, ci_w, kh, kw = w.shape
    ho, wo = gy.shape[2], gy.shape[3]
    gxp = np.zeros((n, ci, h + 2 * padding, wd + 2 * padding), dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            contrib = np.einsum("oi,nohw->nihw", w[:, :, i, j], gy, optimize=True)
            gxp[
                :,
                :,
                i * dilation : i * dilation + (ho - 1) * stride + 1 : stride,
                j * dilation : j * dilation + (wo - 1) * stride + 1 : stride,
            ] += contrib
    if padding > 0:
        return gxp[:, :, padding:-padding, padding:-padding]
    return gxp


def conv2d_backward_w(x, gy, w_shape, stride, padding, dilation):
    co, ci, kh, kw = w_shape
    ho, wo = gy.shape[2], gy.shape[3]
    xp = x
    if padding > 0:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    gw = np.zeros(w_shape, dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            xs = xp[
                :,
                :,
                i * dilation : i * dilation + (ho - 1) * stride + 1 : stride,
                j * dilation : j * dilation + (wo - 1) * stride + 1 : stride,
            ]
            gw[:, :, i, j] = np.einsum("nohw,nihw->oi", gy, xs, optimize=True)
    return gw


def dis_patch_solve(img_t, img_t1, grad_x, grad_y, positions, init_uv, size, iters, det_eps):
    """Align every template patch against img_t1 by Gauss-Newton on translation.

    The template (from img_t) and its gradients are fixed, so the 2x2 normal
    matrix is computed once per patch; patches whose normal matrix is
    near-singular (det < det_eps) keep their initialization. All patches run
    the full iteration count in lockstep. Returns (uv, mean_abs_residual),
    one row/value per patch.
    """
    h, w = img_t.shape
    p = positions.shape[0]
    ys = positions[:, 0][:, None, None] + np.arange(size)[None, :, None]
    xs = positions[:, 1][:, None, None] + np.arange(size)[None, None, :]
    tmpl = img_t[ys, xs]
    gx = grad_x[ys, xs]
    gy = grad_y[ys, xs]

    h11 = np.sum(gx * gx, axis=(1, 2))
    h12 = np.sum(gx * gy, axis=(1, 2))
    h22 = np.sum(gy * gy, axis=(1, 2))
    det = h11 * h22 - h12 * h12
    solvable = det >= det_eps
    inv_det = np.where(solvable, det, 1.0)

    uv = init_uv.astype(img_t.dtype).copy()
    clamp = float(2 * size)

    def _residual(cur):
        sx = xs + cur[:, 0][:, None, None]
        sy = ys + cur[:, 1][:, None, None]
        sx = np.clip(sx, 0.0, w - 1.0)
        sy = np.clip(sy, 0.0, h - 1.0)
        x0 = np.floor(sx).astype(np.intp)
        y0 = np.floor(sy).astype(np.intp)
        x0 = np.minimum(x0, w - 2) if w > 1 else x0 * 0
        y0 = np.minimum(y0, h - 2) if h > 1 else y0 * 0
        fx = sx - x0
        fy = sy - y0
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        v00 = img_t1[y0, x0]
        v01 = img_t1[y0, x1]
        v10 = img_t1[y1, x0]
        v11 = img_t1[y1, x1]
        warped = (
            v00 * (1 - fx) * (1 - fy)
            + v01 * fx * (1 - fy)
            + v10 * (1 - fx) * fy
            + v11 * fx * fy
        )
        return warped - tmpl

    init_res = np.mean(np.abs(_residual(uv)), axis=(1, 2))

    for _ in range(iters):
        r = _residual(uv)
        b1 = np.sum(gx * r, axis=(1, 2))
        b2 = np.sum(gy * r, axis=(1, 2))
        du = (h22 * b1 - h12 * b2) / inv_det
        dv = (h11 * b2 - h12 * b1) / inv_det
        step = np.stack([du, dv], axis=1)
        uv = np.where(solvable[:, None], np.clip(uv - step, -clamp, clamp), uv)

    res = np.mean(np.abs(_residual(uv)), axis=(1, 2))
    # a patch that ends up photometrically worse than where it started has
    # diverged; fall back to its initialization
    diverged = res > init_res
    uv = np.where(diverged[:, None], init_uv, uv)
    res = np.where(diverged, init_res, res)
    return uv.astype(img_t.dtype), res.astype(img_t.dtype)
