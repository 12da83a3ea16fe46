"""Pure-numpy kernel backend: im2col views plus BLAS matmuls.

Shapes are channels-first with a leading batch axis:

  conv2d: x [B,C,H,W], w [O,C,kh,kw] -> y [B,O,Ho,Wo]
  conv3d: x [B,C,T,H,W], w [O,C,kt,kh,kw] -> y [B,O,To,Ho,Wo]

Convolution means cross-correlation (no kernel flip) and output extents
follow floor((in + 2*pad - k) / stride) + 1.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _out_extent(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def _pad2(x, ph, pw):
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _pad3(x, pt, ph, pw):
    if pt == 0 and ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))


def _windows2d(xp, kh, kw, sh, sw, ho, wo):
    b, c = xp.shape[:2]
    sb, sc, srh, srw = xp.strides
    shape = (b, c, ho, wo, kh, kw)
    strides = (sb, sc, srh * sh, srw * sw, srh, srw)
    return as_strided(xp, shape=shape, strides=strides)


def _windows3d(xp, kt, kh, kw, st, sh, sw, to, ho, wo):
    b, c = xp.shape[:2]
    sb, sc, srt, srh, srw = xp.strides
    shape = (b, c, to, ho, wo, kt, kh, kw)
    strides = (sb, sc, srt * st, srh * sh, srw * sw, srt, srh, srw)
    return as_strided(xp, shape=shape, strides=strides)


def conv2d_forward(x, w, stride, pad):
    b, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    ho, wo = _out_extent(h, kh, sh, ph), _out_extent(wd, kw, sw, pw)
    xp = _pad2(x, ph, pw)
    cols = _windows2d(xp, kh, kw, sh, sw, ho, wo)
    cols = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5))
    cols = cols.reshape(b * ho * wo, c * kh * kw)
    y = cols @ w.reshape(o, -1).T
    return y.reshape(b, ho, wo, o).transpose(0, 3, 1, 2)


def conv2d_backward(x, w, dy, stride, pad):
    b, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    _, _, ho, wo = dy.shape

    xp = _pad2(x, ph, pw)
    cols = _windows2d(xp, kh, kw, sh, sw, ho, wo)
    cols = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5))
    cols = cols.reshape(b * ho * wo, c * kh * kw)
    dy_mat = dy.transpose(0, 2, 3, 1).reshape(b * ho * wo, o)

    dw = (dy_mat.T @ cols).reshape(w.shape)

    dcols = (dy_mat @ w.reshape(o, -1)).reshape(b, ho, wo, c, kh, kw)
    dxp = np.zeros((b, c, h + 2 * ph, wd + 2 * pw), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + ho * sh : sh, j : j + wo * sw : sw] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    dx = dxp[:, :, ph : ph + h, pw : pw + wd]
    return dx, dw


def conv3d_forward(x, w, stride, pad):
    b, c, t, h, wd = x.shape
    o, _, kt, kh, kw = w.shape
    st, sh, sw = stride
    pt, ph, pw = pad
    to = _out_extent(t, kt, st, pt)
    ho = _out_extent(h, kh, sh, ph)
    wo = _out_extent(wd, kw, sw, pw)
    xp = _pad3(x, pt, ph, pw)
    cols = _windows3d(xp, kt, kh, kw, st, sh, sw, to, ho, wo)
    cols = np.ascontiguousarray(cols.transpose(0, 2, 3, 4, 1, 5, 6, 7))
    cols = cols.reshape(b * to * ho * wo, c * kt * kh * kw)
    y = cols @ w.reshape(o, -1).T
    return y.reshape(b, to, ho, wo, o).transpose(0, 4, 1, 2, 3)


def conv3d_backward(x, w, dy, stride, pad):
    b, c, t, h, wd = x.shape
    o, _, kt, kh, kw = w.shape
    st, sh, sw = stride
    pt, ph, pw = pad
    _, _, to, ho, wo = dy.shape

    xp = _pad3(x, pt, ph, pw)
    cols = _windows3d(xp, kt, kh, kw, st, sh, sw, to, ho, wo)
    cols = np.ascontiguousarray(cols.transpose(0, 2, 3, 4, 1, 5, 6, 7))
    cols = cols.reshape(b * to * ho * wo, c * kt * kh * kw)
    dy_mat = dy.transpose(0, 2, 3, 4, 1).reshape(b * to * ho * wo, o)

    dw = (dy_mat.T @ cols).reshape(w.shape)

    dcols = (dy_mat @ w.reshape(o, -1)).reshape(b, to, ho, wo, c, kt, kh, kw)
    dxp = np.zeros((b, c, t + 2 * pt, h + 2 * ph, wd + 2 * pw), dtype=x.dtype)
    for i in range(kt):
        for j in range(kh):
            for k in range(kw):
                dxp[
                    :,
                    :,
                    i : i + to * st : st,
                    j : j + ho * sh : sh,
                    k : k + wo * sw : sw,
                ] += dcols[:, :, :, :, :, i, j, k].transpose(0, 4, 1, 2, 3)
    dx = dxp[:, :, pt : pt + t, ph : ph + h, pw : pw + wd]
    return dx, dw


def maxpool3d_forward(x, size, stride, pad):
    """Max pooling over (t,h,w) windows; padding uses -inf.

    Returns (y, idx) where idx holds flat indices into the *unpadded* input,
    as consumed by :func:`maxpool3d_backward`.
    """
    b, c, t, h, wd = x.shape
    kt, kh, kw = size
    st, sh, sw = stride
    pt, ph, pw = pad
    to = _out_extent(t, kt, st, pt)
    ho = _out_extent(h, kh, sh, ph)
    wo = _out_extent(wd, kw, sw, pw)

    if pt or ph or pw:
        xp = np.full(
            (b, c, t + 2 * pt, h + 2 * ph, wd + 2 * pw), -np.inf, dtype=x.dtype
        )
        xp[:, :, pt : pt + t, ph : ph + h, pw : pw + wd] = x
    else:
        xp = x
    win = _windows3d(xp, kt, kh, kw, st, sh, sw, to, ho, wo)
    flat = win.reshape(b, c, to, ho, wo, kt * kh * kw)
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    # window-local argmax -> coordinates in the unpadded input
    wt, rem = np.divmod(arg, kh * kw)
    wh, ww = np.divmod(rem, kw)
    ot = np.arange(to)[:, None, None]
    oh = np.arange(ho)[None, :, None]
    ow = np.arange(wo)[None, None, :]
    it = ot * st + wt - pt
    ih = oh * sh + wh - ph
    iw = ow * sw + ww - pw
    idx = (it * h + ih) * wd + iw
    return y, idx.astype(np.int64)


def maxpool3d_backward(x_shape, idx, dy):
    b, c, t, h, wd = x_shape
    dx = np.zeros((b, c, t * h * wd), dtype=dy.dtype)
    flat_idx = idx.reshape(b, c, -1)
    flat_dy = dy.reshape(b, c, -1)
    np.add.at(dx, (np.arange(b)[:, None, None], np.arange(c)[None, :, None], flat_idx), flat_dy)
    return dx.reshape(x_shape)
