"""Numba-jitted kernel backend: explicit loops, same contracts as conv_numpy.

fastmath stays off so summation order (and therefore output bits) is stable
run to run. cache=True persists compiled kernels next to the source.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _conv2d_fwd(x, w, sh, sw, ph, pw, y):
    b, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    _, _, ho, wo = y.shape
    for n in range(b):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ic in range(c):
                        for u in range(kh):
                            ii = i * sh + u - ph
                            if ii < 0 or ii >= h:
                                continue
                            for v in range(kw):
                                jj = j * sw + v - pw
                                if jj < 0 or jj >= wd:
                                    continue
                                acc += x[n, ic, ii, jj] * w[oc, ic, u, v]
                    y[n, oc, i, j] = acc


@njit(cache=True)
def _conv2d_bwd(x, w, dy, sh, sw, ph, pw, dx, dw):
    b, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    _, _, ho, wo = dy.shape
    for n in range(b):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    g = dy[n, oc, i, j]
                    if g == 0.0:
                        continue
                    for ic in range(c):
                        for u in range(kh):
                            ii = i * sh + u - ph
                            if ii < 0 or ii >= h:
                                continue
                            for v in range(kw):
                                jj = j * sw + v - pw
                                if jj < 0 or jj >= wd:
                                    continue
                                dx[n, ic, ii, jj] += g * w[oc, ic, u, v]
                                dw[oc, ic, u, v] += g * x[n, ic, ii, jj]


@njit(cache=True)
def _conv3d_fwd(x, w, st, sh, sw, pt, ph, pw, y):
    b, c, t, h, wd = x.shape
    o, _, kt, kh, kw = w.shape
    _, _, to, ho, wo = y.shape
    for n in range(b):
        for oc in range(o):
            for m in range(to):
                for i in range(ho):
                    for j in range(wo):
                        acc = 0.0
                        for ic in range(c):
                            for s in range(kt):
                                tt = m * st + s - pt
                                if tt < 0 or tt >= t:
                                    continue
                                for u in range(kh):
                                    ii = i * sh + u - ph
                                    if ii < 0 or ii >= h:
                                        continue
                                    for v in range(kw):
                                        jj = j * sw + v - pw
                                        if jj < 0 or jj >= wd:
                                            continue
                                        acc += x[n, ic, tt, ii, jj] * w[oc, ic, s, u, v]
                        y[n, oc, m, i, j] = acc


@njit(cache=True)
def _conv3d_bwd(x, w, dy, st, sh, sw, pt, ph, pw, dx, dw):
    b, c, t, h, wd = x.shape
    o, _, kt, kh, kw = w.shape
    _, _, to, ho, wo = dy.shape
    for n in range(b):
        for oc in range(o):
            for m in range(to):
                for i in range(ho):
                    for j in range(wo):
                        g = dy[n, oc, m, i, j]
                        if g == 0.0:
                            continue
                        for ic in range(c):
                            for s in range(kt):
                                tt = m * st + s - pt
                                if tt < 0 or tt >= t:
                                    continue
                                for u in range(kh):
                                    ii = i * sh + u - ph
                                    if ii < 0 or ii >= h:
                                        continue
                                    for v in range(kw):
                                        jj = j * sw + v - pw
                                        if jj < 0 or jj >= wd:
                                            continue
                                        dx[n, ic, tt, ii, jj] += g * w[oc, ic, s, u, v]
                                        dw[oc, ic, s, u, v] += g * x[n, ic, tt, ii, jj]


@njit(cache=True)
def _maxpool3d_fwd(x, kt, kh, kw, st, sh, sw, pt, ph, pw, y, idx):
    b, c, t, h, wd = x.shape
    _, _, to, ho, wo = y.shape
    for n in range(b):
        for ic in range(c):
            for m in range(to):
                for i in range(ho):
                    for j in range(wo):
                        best = -np.inf
                        best_at = -1
                        for s in range(kt):
                            tt = m * st + s - pt
                            if tt < 0 or tt >= t:
                                continue
                            for u in range(kh):
                                ii = i * sh + u - ph
                                if ii < 0 or ii >= h:
                                    continue
                                for v in range(kw):
                                    jj = j * sw + v - pw
                                    if jj < 0 or jj >= wd:
                                        continue
                                    val = x[n, ic, tt, ii, jj]
                                    if val > best:
                                        best = val
                                        best_at = (tt * h + ii) * wd + jj
                        y[n, ic, m, i, j] = best
                        idx[n, ic, m, i, j] = best_at


@njit(cache=True)
def _maxpool3d_bwd(idx, dy, dx):
    b, c, to, ho, wo = dy.shape
    for n in range(b):
        for ic in range(c):
            for m in range(to):
                for i in range(ho):
                    for j in range(wo):
                        dx[n, ic, idx[n, ic, m, i, j]] += dy[n, ic, m, i, j]


def _out_extent(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def conv2d_forward(x, w, stride, pad):
    b, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = _out_extent(h, kh, stride[0], pad[0])
    wo = _out_extent(wd, kw, stride[1], pad[1])
    y = np.empty((b, o, ho, wo), dtype=x.dtype)
    _conv2d_fwd(x, w, stride[0], stride[1], pad[0], pad[1], y)
    return y


def conv2d_backward(x, w, dy, stride, pad):
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    _conv2d_bwd(x, w, dy, stride[0], stride[1], pad[0], pad[1], dx, dw)
    return dx, dw


def conv3d_forward(x, w, stride, pad):
    b, c, t, h, wd = x.shape
    o, _, kt, kh, kw = w.shape
    to = _out_extent(t, kt, stride[0], pad[0])
    ho = _out_extent(h, kh, stride[1], pad[1])
    wo = _out_extent(wd, kw, stride[2], pad[2])
    y = np.empty((b, o, to, ho, wo), dtype=x.dtype)
    _conv3d_fwd(x, w, stride[0], stride[1], stride[2], pad[0], pad[1], pad[2], y)
    return y


def conv3d_backward(x, w, dy, stride, pad):
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    _conv3d_bwd(x, w, dy, stride[0], stride[1], stride[2], pad[0], pad[1], pad[2], dx, dw)
    return dx, dw


def maxpool3d_forward(x, size, stride, pad):
    b, c, t, h, wd = x.shape
    to = _out_extent(t, size[0], stride[0], pad[0])
    ho = _out_extent(h, size[1], stride[1], pad[1])
    wo = _out_extent(wd, size[2], stride[2], pad[2])
    y = np.empty((b, c, to, ho, wo), dtype=x.dtype)
    idx = np.empty((b, c, to, ho, wo), dtype=np.int64)
    _maxpool3d_fwd(
        x, size[0], size[1], size[2], stride[0], stride[1], stride[2],
        pad[0], pad[1], pad[2], y, idx,
    )
    return y, idx


def maxpool3d_backward(x_shape, idx, dy):
    b, c, t, h, wd = x_shape
    dx = np.zeros((b, c, t * h * wd), dtype=dy.dtype)
    _maxpool3d_bwd(idx, dy, dx)
    return dx.reshape(x_shape)
