"""Differentiable operators with hand-derived gradients.

Every operator comes as a ``*_forward`` returning ``(output, cache)`` and a
matching ``*_backward`` that maps the upstream gradient plus the cache to
gradients for inputs and parameters. Convolutions mean cross-correlation
(no kernel flip). All operators are pure given an explicit
:class:`OpContext`; stochastic behaviour (dropout masks) is driven entirely
by the context rng.

Internal array layout is channels-first with a leading batch axis. The
spec-level single-sample signatures (e.g. conv3d on ``[C,T,H,W]``) are
accepted too; a missing batch axis is added and stripped transparently.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class OpContext:
    """Execution mode plus the seeded generator behind all stochastic ops."""

    mode: str = "eval"
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def __post_init__(self):
        if self.mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {self.mode!r}")

    @property
    def train(self):
        return self.mode == "train"


def _normalize_stride_pad(value, ndim):
    if np.isscalar(value):
        return (int(value),) * ndim
    value = tuple(int(v) for v in value)
    if len(value) != ndim:
        raise ValueError(f"expected {ndim} entries, got {value}")
    return value


def _with_batch(x, ndim_unbatched):
    if x.ndim == ndim_unbatched:
        return x[None], True
    if x.ndim == ndim_unbatched + 1:
        return x, False
    raise ValueError(
        f"expected {ndim_unbatched} or {ndim_unbatched + 1} axes, got shape {x.shape}"
    )


# ---------------------------------------------------------------------------
# convolutions


def conv2d_forward(x, w, stride=1, pad=0):
    """Cross-correlate x [(B,)C,H,W] with kernels w [O,C,kh,kw]."""
    x, squeeze = _with_batch(np.asarray(x), 3)
    stride = _normalize_stride_pad(stride, 2)
    pad = _normalize_stride_pad(pad, 2)
    if x.shape[1] != w.shape[1]:
        raise ValueError(
            f"conv2d channel mismatch: input has {x.shape[1]} channels, "
            f"kernel expects {w.shape[1]} (kernel shape {w.shape})"
        )
    y = kernels.conv2d_forward(x, w, stride, pad)
    cache = (x, w, stride, pad, squeeze)
    return (y[0] if squeeze else y), cache


def conv2d_backward(dy, cache):
    x, w, stride, pad, squeeze = cache
    if squeeze:
        dy = dy[None]
    dx, dw = kernels.conv2d_backward(x, w, dy, stride, pad)
    return (dx[0] if squeeze else dx), dw


def conv3d_forward(x, w, stride=1, pad=0):
    """Cross-correlate x [(B,)C,T,H,W] with kernels w [O,C,kt,kh,kw]."""
    x, squeeze = _with_batch(np.asarray(x), 4)
    stride = _normalize_stride_pad(stride, 3)
    pad = _normalize_stride_pad(pad, 3)
    if x.shape[1] != w.shape[1]:
        raise ValueError(
            f"conv3d channel mismatch: input has {x.shape[1]} channels, "
            f"kernel expects {w.shape[1]} (kernel shape {w.shape})"
        )
    y = kernels.conv3d_forward(x, w, stride, pad)
    cache = (x, w, stride, pad, squeeze)
    return (y[0] if squeeze else y), cache


def conv3d_backward(dy, cache):
    x, w, stride, pad, squeeze = cache
    if squeeze:
        dy = dy[None]
    dx, dw = kernels.conv3d_backward(x, w, dy, stride, pad)
    return (dx[0] if squeeze else dx), dw


def maxpool3d_forward(x, size, stride, pad=0):
    x, squeeze = _with_batch(np.asarray(x), 4)
    size = _normalize_stride_pad(size, 3)
    stride = _normalize_stride_pad(stride, 3)
    pad = _normalize_stride_pad(pad, 3)
    y, idx = kernels.maxpool3d_forward(x, size, stride, pad)
    cache = (x.shape, idx, squeeze)
    return (y[0] if squeeze else y), cache


def maxpool3d_backward(dy, cache):
    x_shape, idx, squeeze = cache
    if squeeze:
        dy = dy[None]
    dx = kernels.maxpool3d_backward(x_shape, idx, dy)
    return dx[0] if squeeze else dx


# ---------------------------------------------------------------------------
# pointwise / affine


def relu_forward(x):
    y = np.maximum(x, 0.0)
    return y, (x > 0.0)


def relu_backward(dy, cache):
    # subgradient at 0 is 0
    return dy * cache


def linear_forward(x, w, b=None):
    """x [N,in] @ w [in,out] (+ b)."""
    y = x @ w
    if b is not None:
        y = y + b
    return y, (x, w, b is not None)


def linear_backward(dy, cache):
    x, w, has_bias = cache
    dx = dy @ w.T
    dw = x.T @ dy
    db = dy.sum(axis=0) if has_bias else None
    return dx, dw, db


# ---------------------------------------------------------------------------
# batch normalization


def batch_norm_forward(x, gamma, beta, running_mean, running_var, ctx,
                       momentum=BN_MOMENTUM, eps=BN_EPS):
    """Normalize x [N,F] per feature.

    Train mode uses batch statistics and returns updated running stats
    (exponential moving average); eval mode uses the running stats as given.
    Returns (y, cache, running_mean', running_var').
    """
    if x.ndim != 2:
        raise ValueError(f"batch_norm expects [N,F], got shape {x.shape}")
    if ctx.train:
        n = x.shape[0]
        if n < 2:
            raise ValueError(
                "batch_norm in train mode needs batch >= 2 "
                f"(got {n}); a single sample has zero variance"
            )
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        running_mean = (1 - momentum) * running_mean + momentum * mean
        running_var = (1 - momentum) * running_var + momentum * var
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    y = gamma * xhat + beta
    cache = (xhat, inv_std, gamma, ctx.train)
    return y, cache, running_mean, running_var


def batch_norm_backward(dy, cache):
    xhat, inv_std, gamma, train = cache
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    if train:
        dxhat = dy * gamma
        dx = inv_std * (
            dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0)
        )
    else:
        dx = dy * gamma * inv_std
    return dx, dgamma, dbeta


def bn_conv_forward(x, gamma, beta, running_mean, running_var, ctx,
                    momentum=BN_MOMENTUM, eps=BN_EPS):
    """Batch norm over feature maps [N,C,...]: statistics per channel across
    batch and all spatial (and temporal) positions."""
    c = x.shape[1]
    moved = np.moveaxis(x, 1, -1)
    flat = moved.reshape(-1, c)
    y2, cache2, rm, rv = batch_norm_forward(
        flat, gamma, beta, running_mean, running_var, ctx, momentum, eps
    )
    y = np.moveaxis(y2.reshape(moved.shape), -1, 1)
    return y, (cache2, x.shape), rm, rv


def bn_conv_backward(dy, cache):
    cache2, x_shape = cache
    c = x_shape[1]
    moved = np.moveaxis(dy, 1, -1)
    dx2, dgamma, dbeta = batch_norm_backward(moved.reshape(-1, c), cache2)
    dx = np.moveaxis(dx2.reshape(moved.shape), -1, 1)
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# residual block: relu(skip(x) + bn(conv(relu(bn(conv(x))))))


def residual_block_forward(x, block, stride, ctx):
    """Basic two-conv residual block on [N,C,H,W] maps.

    `block` maps short names to arrays: conv1_w, bn1_{gamma,beta,mean,var},
    conv2_w, bn2_*, and, when the skip path needs a projection (stride > 1
    or a channel change), proj_w plus pbn_*. Returns (y, cache, stat_updates)
    where stat_updates holds refreshed running statistics.
    """
    updates = {}
    out1, c_conv1 = conv2d_forward(x, block["conv1_w"], stride=stride, pad=1)
    out1, c_bn1, rm, rv = bn_conv_forward(
        out1, block["bn1_gamma"], block["bn1_beta"], block["bn1_mean"],
        block["bn1_var"], ctx,
    )
    updates["bn1_mean"], updates["bn1_var"] = rm, rv
    out1, c_relu1 = relu_forward(out1)

    out2, c_conv2 = conv2d_forward(out1, block["conv2_w"], stride=1, pad=1)
    out2, c_bn2, rm, rv = bn_conv_forward(
        out2, block["bn2_gamma"], block["bn2_beta"], block["bn2_mean"],
        block["bn2_var"], ctx,
    )
    updates["bn2_mean"], updates["bn2_var"] = rm, rv

    has_proj = "proj_w" in block
    if has_proj:
        skip, c_proj = conv2d_forward(x, block["proj_w"], stride=stride, pad=0)
        skip, c_pbn, rm, rv = bn_conv_forward(
            skip, block["pbn_gamma"], block["pbn_beta"], block["pbn_mean"],
            block["pbn_var"], ctx,
        )
        updates["pbn_mean"], updates["pbn_var"] = rm, rv
    else:
        if stride != 1 or x.shape[1] != out2.shape[1]:
            raise ValueError(
                "residual block needs a projection when stride > 1 or the "
                f"channel count changes (stride={stride}, "
                f"{x.shape[1]} -> {out2.shape[1]} channels)"
            )
        skip, c_proj, c_pbn = x, None, None

    y, c_relu_out = relu_forward(out2 + skip)
    cache = (c_conv1, c_bn1, c_relu1, c_conv2, c_bn2, c_proj, c_pbn, c_relu_out, has_proj)
    return y, cache, updates


def residual_block_backward(dy, cache):
    """Returns (dx, grads) with grads keyed by the block's short names."""
    c_conv1, c_bn1, c_relu1, c_conv2, c_bn2, c_proj, c_pbn, c_relu_out, has_proj = cache
    grads = {}
    dsum = relu_backward(dy, c_relu_out)

    d2, grads["bn2_gamma"], grads["bn2_beta"] = bn_conv_backward(dsum, c_bn2)
    dout1, grads["conv2_w"] = conv2d_backward(d2, c_conv2)
    dout1 = relu_backward(dout1, c_relu1)
    d1, grads["bn1_gamma"], grads["bn1_beta"] = bn_conv_backward(dout1, c_bn1)
    dx, grads["conv1_w"] = conv2d_backward(d1, c_conv1)

    if has_proj:
        dskip, grads["pbn_gamma"], grads["pbn_beta"] = bn_conv_backward(dsum, c_pbn)
        dx_proj, grads["proj_w"] = conv2d_backward(dskip, c_proj)
        dx = dx + dx_proj
    else:
        dx = dx + dsum
    return dx, grads


# ---------------------------------------------------------------------------
# sequence ops


def dropout_seq_forward(x, p, ctx):
    """Sequence dropout: one Bernoulli(1-p) feature mask per sequence,
    identical at every time step, inverted scaling by 1/(1-p).

    x is [T,F] (single sequence) or [B,T,F]. Eval mode or p == 0 is identity.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0,1), got {p}")
    x = np.asarray(x)
    x_b, squeeze = _with_batch(x, 2)
    if not ctx.train or p == 0.0:
        mask = None
        y = x
    else:
        keep = 1.0 - p
        mask = (ctx.rng.random((x_b.shape[0], 1, x_b.shape[2])) < keep) / keep
        y = x_b * mask
        if squeeze:
            y = y[0]
    return y, (mask, squeeze)


def dropout_seq_backward(dy, cache):
    mask, squeeze = cache
    if mask is None:
        return dy
    if squeeze:
        return dy * mask[0]
    return dy * mask


def temporal_pool_forward(x, mode):
    """Pool x [(B,)T,F] over time: arithmetic mean or the last row."""
    x = np.asarray(x)
    x_b, squeeze = _with_batch(x, 2)
    t = x_b.shape[1]
    if t < 1:
        raise ValueError("temporal_pool needs at least one time step")
    if mode == "average":
        y = x_b.mean(axis=1)
    elif mode == "last":
        y = x_b[:, -1, :]
    else:
        raise ValueError(f"unknown pooling mode {mode!r}")
    return (y[0] if squeeze else y), (x_b.shape, mode, squeeze)


def temporal_pool_backward(dy, cache):
    shape, mode, squeeze = cache
    if squeeze:
        dy = dy[None]
    dx = np.zeros(shape, dtype=dy.dtype)
    if mode == "average":
        dx += dy[:, None, :] / shape[1]
    else:
        dx[:, -1, :] = dy
    return dx[0] if squeeze else dx


# ---------------------------------------------------------------------------
# LSTM

# Gate layout in the fused weight matrix, columns [0:4h] = i | f | g | o.


@dataclass
class LstmWeights:
    w: np.ndarray  # [input+hidden, 4*hidden]
    b: np.ndarray  # [4*hidden]

    @property
    def hidden(self):
        return self.b.shape[0] // 4

    @property
    def input_size(self):
        return self.w.shape[0] - self.hidden


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_step_forward(x, h_prev, c_prev, weights):
    """One LSTM step for a batch: x [B,in], h_prev/c_prev [B,h].

    Standard recurrence: i,f,o sigmoid gates, g tanh candidate,
    c = f*c_prev + i*g, h = o*tanh(c).
    """
    h = weights.hidden
    z = np.concatenate([x, h_prev], axis=1) @ weights.w + weights.b
    i = _sigmoid(z[:, 0 * h : 1 * h])
    f = _sigmoid(z[:, 1 * h : 2 * h])
    g = np.tanh(z[:, 2 * h : 3 * h])
    o = _sigmoid(z[:, 3 * h : 4 * h])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h_new = o * tc
    cache = (x, h_prev, c_prev, i, f, g, o, tc, weights)
    return h_new, c, cache


def lstm_step_backward(dh, dc, cache):
    """Backward for one step. Returns (dx, dh_prev, dc_prev, dw, db)."""
    x, h_prev, c_prev, i, f, g, o, tc, weights = cache
    h = weights.hidden

    do = dh * tc
    dc_total = dc + dh * o * (1.0 - tc * tc)
    di = dc_total * g
    df = dc_total * c_prev
    dg = dc_total * i
    dc_prev = dc_total * f

    dz = np.empty((x.shape[0], 4 * h), dtype=x.dtype)
    dz[:, 0 * h : 1 * h] = di * i * (1.0 - i)
    dz[:, 1 * h : 2 * h] = df * f * (1.0 - f)
    dz[:, 2 * h : 3 * h] = dg * (1.0 - g * g)
    dz[:, 3 * h : 4 * h] = do * o * (1.0 - o)

    xh = np.concatenate([x, h_prev], axis=1)
    dw = xh.T @ dz
    db = dz.sum(axis=0)
    dxh = dz @ weights.w.T
    dx = dxh[:, : x.shape[1]]
    dh_prev = dxh[:, x.shape[1] :]
    return dx, dh_prev, dc_prev, dw, db


def lstm_sequence_forward(xs, weights, reverse=False):
    """Run an LSTM over xs [B,T,in] from zero initial state.

    Outputs hs [B,T,h] aligned with the input time axis regardless of
    direction (reverse=True processes t = T-1 .. 0).
    """
    b, t, _ = xs.shape
    h = weights.hidden
    hs = np.zeros((b, t, h), dtype=xs.dtype)
    h_t = np.zeros((b, h), dtype=xs.dtype)
    c_t = np.zeros((b, h), dtype=xs.dtype)
    caches = [None] * t
    order = range(t - 1, -1, -1) if reverse else range(t)
    for step in order:
        h_t, c_t, caches[step] = lstm_step_forward(xs[:, step], h_t, c_t, weights)
        hs[:, step] = h_t
    return hs, (caches, reverse, xs.shape)


def lstm_sequence_backward(dhs, cache):
    """BPTT over a whole sequence. Returns (dxs, dw, db)."""
    caches, reverse, x_shape = cache
    b, t, _ = x_shape
    step_cache = caches[0] if not reverse else caches[t - 1]
    weights = step_cache[-1]
    h = weights.hidden
    dxs = np.zeros(x_shape, dtype=dhs.dtype)
    dw = np.zeros_like(weights.w)
    db = np.zeros_like(weights.b)
    dh_carry = np.zeros((b, h), dtype=dhs.dtype)
    dc_carry = np.zeros((b, h), dtype=dhs.dtype)
    order = range(t) if reverse else range(t - 1, -1, -1)
    for step in order:
        dh = dhs[:, step] + dh_carry
        dx, dh_carry, dc_carry, dw_t, db_t = lstm_step_backward(
            dh, dc_carry, caches[step]
        )
        dw += dw_t
        db += db_t
        dxs[:, step] = dx
    return dxs, dw, db


# ---------------------------------------------------------------------------
# loss


def softmax_cross_entropy(logits, true_class):
    """Cross-entropy of softmax(logits) against a class index.

    logits is [K]; returns (loss, grad) with grad = softmax - one_hot.
    Stabilized by max subtraction.
    """
    logits = np.asarray(logits, dtype=float)
    k = logits.shape[0]
    if k < 2:
        raise ValueError("need at least 2 classes")
    if not 0 <= true_class < k:
        raise ValueError(f"class index {true_class} out of range [0,{k})")
    shifted = logits - logits.max()
    log_z = np.log(np.exp(shifted).sum())
    loss = log_z - shifted[true_class]
    grad = np.exp(shifted - log_z)
    grad[true_class] -= 1.0
    return loss, grad


def softmax_cross_entropy_batch(logits, labels):
    """Mean cross-entropy over a batch: logits [B,K], labels [B].

    Returns (loss, dlogits) with dlogits already divided by B.
    """
    b, k = logits.shape
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels outside [0,{k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    losses = log_z - shifted[np.arange(b), labels]
    probs = np.exp(shifted - log_z[:, None])
    dlogits = probs
    dlogits[np.arange(b), labels] -= 1.0
    return losses.mean(), dlogits / b
