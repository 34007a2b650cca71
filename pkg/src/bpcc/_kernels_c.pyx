# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: direct dilated convolution (forward + both gradients)
and the per-patch translation solver used by the dense flow estimator.

Semantics mirror bpcc._kernels_np; only the summation order differs, so the
two backends agree to float rounding. Single-threaded by design: results must
be reproducible without caring about thread scheduling.
"""

from libc.math cimport fabs, floor

ctypedef fused floating:
    float
    double

import numpy as np


def conv2d_forward(x, w, int stride, int padding, int dilation):
    n, ci, h, wd = x.shape
    co, ci_w, kh, kw = w.shape
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, co, ho, wo), dtype=x.dtype)
    _conv2d_forward(x, w, out, stride, padding, dilation)
    return out


def conv2d_backward_x(w, gy, x_shape, int stride, int padding, int dilation):
    gx = np.zeros(x_shape, dtype=gy.dtype)
    _conv2d_backward_x(w, gy, gx, stride, padding, dilation)
    return gx


def conv2d_backward_w(x, gy, w_shape, int stride, int padding, int dilation):
    gw = np.zeros(w_shape, dtype=gy.dtype)
    _conv2d_backward_w(x, gy, gw, stride, padding, dilation)
    return gw


def _conv2d_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                    floating[:, :, :, ::1] out, int stride, int padding, int dilation):
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = out.shape[2], wo = out.shape[3]
    cdef Py_ssize_t b, o, i, p, q, ki, kj, hi, wi
    cdef floating acc
    for b in range(n):
        for o in range(co):
            for p in range(ho):
                for q in range(wo):
                    acc = 0
                    for i in range(ci):
                        for ki in range(kh):
                            hi = p * stride - padding + ki * dilation
                            if hi < 0 or hi >= h:
                                continue
                            for kj in range(kw):
                                wi = q * stride - padding + kj * dilation
                                if wi < 0 or wi >= wd:
                                    continue
                                acc = acc + x[b, i, hi, wi] * w[o, i, ki, kj]
                    out[b, o, p, q] = acc


def _conv2d_backward_x(floating[:, :, :, ::1] w, floating[:, :, :, ::1] gy,
                       floating[:, :, :, ::1] gx, int stride, int padding, int dilation):
    cdef Py_ssize_t n = gx.shape[0], ci = gx.shape[1], h = gx.shape[2], wd = gx.shape[3]
    cdef Py_ssize_t co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t b, o, i, p, q, ki, kj, hi, wi
    cdef floating g
    for b in range(n):
        for o in range(co):
            for p in range(ho):
                for q in range(wo):
                    g = gy[b, o, p, q]
                    for i in range(ci):
                        for ki in range(kh):
                            hi = p * stride - padding + ki * dilation
                            if hi < 0 or hi >= h:
                                continue
                            for kj in range(kw):
                                wi = q * stride - padding + kj * dilation
                                if wi < 0 or wi >= wd:
                                    continue
                                gx[b, i, hi, wi] += g * w[o, i, ki, kj]


def _conv2d_backward_w(floating[:, :, :, ::1] x, floating[:, :, :, ::1] gy,
                       floating[:, :, :, ::1] gw, int stride, int padding, int dilation):
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = gw.shape[0], kh = gw.shape[2], kw = gw.shape[3]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t b, o, i, p, q, ki, kj, hi, wi
    cdef floating g
    for b in range(n):
        for o in range(co):
            for p in range(ho):
                for q in range(wo):
                    g = gy[b, o, p, q]
                    for i in range(ci):
                        for ki in range(kh):
                            hi = p * stride - padding + ki * dilation
                            if hi < 0 or hi >= h:
                                continue
                            for kj in range(kw):
                                wi = q * stride - padding + kj * dilation
                                if wi < 0 or wi >= wd:
                                    continue
                                gw[o, i, ki, kj] += g * x[b, i, hi, wi]


cdef inline double _sample(floating[:, ::1] img, double sx, double sy,
                           Py_ssize_t h, Py_ssize_t w) nogil:
    cdef Py_ssize_t x0, y0, x1, y1
    cdef double fx, fy
    if sx < 0:
        sx = 0
    elif sx > w - 1:
        sx = w - 1
    if sy < 0:
        sy = 0
    elif sy > h - 1:
        sy = h - 1
    x0 = <Py_ssize_t> floor(sx)
    y0 = <Py_ssize_t> floor(sy)
    if x0 > w - 2:
        x0 = w - 2
    if y0 > h - 2:
        y0 = h - 2
    fx = sx - x0
    fy = sy - y0
    x1 = x0 + 1
    y1 = y0 + 1
    return (img[y0, x0] * (1 - fx) * (1 - fy) + img[y0, x1] * fx * (1 - fy)
            + img[y1, x0] * (1 - fx) * fy + img[y1, x1] * fx * fy)


def dis_patch_solve(img_t, img_t1, grad_x, grad_y, positions, init_uv,
                    int size, int iters, double det_eps):
    """Gauss-Newton translation alignment of template patches; see the numpy
    twin for the contract. Returns (uv, mean_abs_residual)."""
    uv = init_uv.astype(img_t.dtype).copy()
    res = np.zeros(positions.shape[0], dtype=img_t.dtype)
    _dis_patch_solve(img_t, img_t1, grad_x, grad_y,
                     np.ascontiguousarray(positions, dtype=np.int64),
                     uv, res, size, iters, det_eps)
    return uv, res


def _dis_patch_solve(floating[:, ::1] img_t, floating[:, ::1] img_t1,
                     floating[:, ::1] grad_x, floating[:, ::1] grad_y,
                     long[:, ::1] positions, floating[:, ::1] uv, floating[::1] res,
                     int size, int iters, double det_eps):
    cdef Py_ssize_t h = img_t.shape[0], w = img_t.shape[1]
    cdef Py_ssize_t n_patch = positions.shape[0]
    cdef Py_ssize_t p, i, j, it
    cdef Py_ssize_t y0, x0
    cdef double h11, h12, h22, det, b1, b2, du, dv, u, v, r, acc, g
    cdef double init_u, init_v, init_res, final_res
    cdef double clamp = 2.0 * size
    for p in range(n_patch):
        y0 = positions[p, 0]
        x0 = positions[p, 1]
        h11 = 0
        h12 = 0
        h22 = 0
        for i in range(size):
            for j in range(size):
                h11 += grad_x[y0 + i, x0 + j] * grad_x[y0 + i, x0 + j]
                h12 += grad_x[y0 + i, x0 + j] * grad_y[y0 + i, x0 + j]
                h22 += grad_y[y0 + i, x0 + j] * grad_y[y0 + i, x0 + j]
        det = h11 * h22 - h12 * h12
        init_u = uv[p, 0]
        init_v = uv[p, 1]
        u = init_u
        v = init_v
        acc = 0
        for i in range(size):
            for j in range(size):
                acc += fabs(_sample(img_t1, x0 + j + u, y0 + i + v, h, w) - img_t[y0 + i, x0 + j])
        init_res = acc / (size * size)
        if det >= det_eps:
            for it in range(iters):
                b1 = 0
                b2 = 0
                for i in range(size):
                    for j in range(size):
                        r = _sample(img_t1, x0 + j + u, y0 + i + v, h, w) - img_t[y0 + i, x0 + j]
                        b1 += grad_x[y0 + i, x0 + j] * r
                        b2 += grad_y[y0 + i, x0 + j] * r
                du = (h22 * b1 - h12 * b2) / det
                dv = (h11 * b2 - h12 * b1) / det
                u -= du
                v -= dv
                if u < -clamp:
                    u = -clamp
                elif u > clamp:
                    u = clamp
                if v < -clamp:
                    v = -clamp
                elif v > clamp:
                    v = clamp
        acc = 0
        for i in range(size):
            for j in range(size):
                acc += fabs(_sample(img_t1, x0 + j + u, y0 + i + v, h, w) - img_t[y0 + i, x0 + j])
        final_res = acc / (size * size)
        # a patch that ends up photometrically worse than where it started
        # has diverged; fall back to its initialization
        if final_res > init_res:
            u = init_u
            v = init_v
            final_res = init_res
        uv[p, 0] = <floating> u
        uv[p, 1] = <floating> v
        res[p] = <floating> final_res
