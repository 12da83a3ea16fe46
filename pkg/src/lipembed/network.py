"""The word-embedding network: spatiotemporal convolutional front-end, a
residual 2D body applied per frame, and a late-concatenation bidirectional
LSTM backend with optional word-boundary feature, temporal pooling and an
embedding layer feeding a softmax classifier.

"Late concatenation" means the two directional recurrent stacks are run
independently through every layer and their outputs are concatenated only
after the last layer; the stacked-BiLSTM alternative (concatenate after
layer one) is deliberately not provided.

The whole forward/backward pass is hand-written over the operators in
:mod:`lipembed.ops`; parameters live in a flat dict name -> array. Keys
containing ``.mean`` / ``.var`` or under ``stats.`` are running statistics,
not learnable, and are skipped by the optimizer.
"""

from dataclasses import dataclass, asdict, replace

import numpy as np

from . import ops
from .dataio import Embedding


@dataclass
class NetworkConfig:
    frames: int = 9
    height: int = 24
    width: int = 24
    frontend_channels: int = 8
    frontend_kernel: tuple = (3, 5, 5)
    frontend_stride: int = 2
    stage_widths: tuple = (8, 16)
    stage_blocks: tuple = (1, 1)
    cnn_feature_size: int = 32
    lstm_layers: int = 2
    use_word_boundaries: bool = True
    backend_dropout: float = 0.4
    embedding_dropout: float = 0.2
    use_embedding_batchnorm: bool = True
    pooling: str = "average"
    embedding_size: int = 64
    num_classes: int = 10
    backend: str = "lstm"

    def __post_init__(self):
        self.frontend_kernel = tuple(self.frontend_kernel)
        self.stage_widths = tuple(self.stage_widths)
        self.stage_blocks = tuple(self.stage_blocks)
        for name in ("frames", "height", "width", "frontend_channels",
                     "cnn_feature_size", "embedding_size", "num_classes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if len(self.stage_widths) != len(self.stage_blocks):
            raise ValueError("stage_widths and stage_blocks disagree")
        if self.lstm_layers not in (1, 2):
            raise ValueError("lstm_layers must be 1 or 2")
        if self.pooling not in ("average", "last"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.backend not in ("lstm", "tempconv"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.pooling == "last" and self.backend != "lstm":
            raise ValueError("pooling 'last' requires the lstm backend")
        if self.backend == "lstm" and self.embedding_size % 2:
            raise ValueError("embedding_size must be even (two directions)")

    @property
    def backend_input_size(self):
        return self.cnn_feature_size + (1 if self.use_word_boundaries else 0)

    @property
    def lstm_hidden(self):
        return self.embedding_size // 2

    def feature_map_shape(self):
        """(channels, h, w) of the residual body output for one frame."""
        def down(n, k, s, p):
            return (n + 2 * p - k) // s + 1

        _, kh, kw = self.frontend_kernel
        h = down(self.height, kh, self.frontend_stride, kh // 2)
        w = down(self.width, kw, self.frontend_stride, kw // 2)
        h = down(h, 3, 2, 1)  # front-end max pooling, spatial only
        w = down(w, 3, 2, 1)
        for i in range(len(self.stage_widths)):
            if i > 0:
                h = down(h, 3, 2, 1)
                w = down(w, 3, 2, 1)
        return self.stage_widths[-1], h, w

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def toy_config(**overrides):
    """Desk-scale defaults: T=9 frames of 24x24, 32-dim CNN features,
    64-dim embeddings."""
    return replace(NetworkConfig(), **overrides)


def paper_config(**overrides):
    """Full-scale preset used for shape audits: 29 frames of 112x112,
    5x7x7 front-end, 18-layer residual body, 256-dim CNN features,
    512-dim embeddings, 500 classes."""
    base = NetworkConfig(
        frames=29, height=112, width=112,
        frontend_channels=64, frontend_kernel=(5, 7, 7), frontend_stride=2,
        stage_widths=(64, 128, 256, 512), stage_blocks=(2, 2, 2, 2),
        cnn_feature_size=256, embedding_size=512, num_classes=500,
    )
    return replace(base, **overrides)


def tiny_config(**overrides):
    """Smallest config that still exercises every layer type; used by the
    gradient-check suite."""
    base = NetworkConfig(
        frames=3, height=8, width=8,
        frontend_channels=4, frontend_kernel=(3, 3, 3), frontend_stride=2,
        stage_widths=(4,), stage_blocks=(1,),
        cnn_feature_size=4, embedding_size=8, num_classes=3,
        backend_dropout=0.0, embedding_dropout=0.0,
    )
    return replace(base, **overrides)


# ---------------------------------------------------------------------------
# parameters


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _bn_params(params, prefix, c):
    params[prefix + ".gamma"] = np.ones(c)
    params[prefix + ".beta"] = np.zeros(c)
    params[prefix + ".mean"] = np.zeros(c)
    params[prefix + ".var"] = np.ones(c)


def init_params(config, seed):
    """Build the parameter dict for a configuration, seeded.

    Convolution and linear weights are fan-in-scaled uniform; recurrent
    weights uniform within 1/sqrt(input+hidden); biases zero.
    """
    rng = np.random.default_rng(seed)
    params = {}

    kt, kh, kw = config.frontend_kernel
    c0 = config.frontend_channels
    params["frontend.conv.w"] = _uniform(rng, (c0, 1, kt, kh, kw), kt * kh * kw)
    _bn_params(params, "frontend.bn", c0)

    in_ch = c0
    for i, (width, blocks) in enumerate(zip(config.stage_widths, config.stage_blocks)):
        for j in range(blocks):
            prefix = f"resnet.s{i}.b{j}"
            stride = 2 if (i > 0 and j == 0) else 1
            params[prefix + ".conv1.w"] = _uniform(rng, (width, in_ch, 3, 3), in_ch * 9)
            _bn_params(params, prefix + ".bn1", width)
            params[prefix + ".conv2.w"] = _uniform(rng, (width, width, 3, 3), width * 9)
            _bn_params(params, prefix + ".bn2", width)
            if stride != 1 or in_ch != width:
                params[prefix + ".proj.w"] = _uniform(rng, (width, in_ch, 1, 1), in_ch)
                _bn_params(params, prefix + ".pbn", width)
            in_ch = width

    c_last, fh, fw = config.feature_map_shape()
    fc_in = c_last * fh * fw
    params["resnet.fc.w"] = _uniform(rng, (fc_in, config.cnn_feature_size), fc_in)
    params["resnet.fc.b"] = np.zeros(config.cnn_feature_size)

    fin = config.backend_input_size
    if config.backend == "lstm":
        h = config.lstm_hidden
        for direction in ("f", "b"):
            size_in = fin
            for layer in range(1, config.lstm_layers + 1):
                prefix = f"lstm.{direction}{layer}"
                params[prefix + ".w"] = _uniform(rng, (size_in + h, 4 * h), size_in + h)
                params[prefix + ".b"] = np.zeros(4 * h)
                size_in = h
        emb_dim = config.embedding_size
    else:
        f = config.cnn_feature_size
        params["tback.conv1.w"] = _uniform(rng, (f, fin, 1, 3), fin * 3)
        params["tback.conv1.b"] = np.zeros(f)
        params["tback.conv2.w"] = _uniform(rng, (f, f, 1, 3), f * 3)
        params["tback.conv2.b"] = np.zeros(f)
        emb_dim = f

    if config.use_embedding_batchnorm:
        _bn_params(params, "emb.bn", emb_dim)

    params["classifier.w"] = _uniform(rng, (emb_dim, config.num_classes), emb_dim)
    params["classifier.b"] = np.zeros(config.num_classes)

    # counts train-mode forward passes; batch-norm running statistics are
    # meaningless until this is > 0
    params["stats.bn_batches"] = np.zeros(1)

    for name, value in params.items():
        if not np.all(np.isfinite(value)):
            raise ValueError(f"non-finite initialization for {name}")
    return params


def is_learnable(name):
    return not (name.startswith("stats.") or name.endswith(".mean") or name.endswith(".var"))


def learnable_names(params):
    return [name for name in sorted(params) if is_learnable(name)]


def parameter_count(params):
    return sum(params[name].size for name in learnable_names(params))


def _block_view(params, prefix, has_proj):
    view = {
        "conv1_w": params[prefix + ".conv1.w"],
        "bn1_gamma": params[prefix + ".bn1.gamma"],
        "bn1_beta": params[prefix + ".bn1.beta"],
        "bn1_mean": params[prefix + ".bn1.mean"],
        "bn1_var": params[prefix + ".bn1.var"],
        "conv2_w": params[prefix + ".conv2.w"],
        "bn2_gamma": params[prefix + ".bn2.gamma"],
        "bn2_beta": params[prefix + ".bn2.beta"],
        "bn2_mean": params[prefix + ".bn2.mean"],
        "bn2_var": params[prefix + ".bn2.var"],
    }
    if has_proj:
        view.update(
            proj_w=params[prefix + ".proj.w"],
            pbn_gamma=params[prefix + ".pbn.gamma"],
            pbn_beta=params[prefix + ".pbn.beta"],
            pbn_mean=params[prefix + ".pbn.mean"],
            pbn_var=params[prefix + ".pbn.var"],
        )
    return view


_BLOCK_KEYMAP = {
    "conv1_w": ".conv1.w", "bn1_gamma": ".bn1.gamma", "bn1_beta": ".bn1.beta",
    "bn1_mean": ".bn1.mean", "bn1_var": ".bn1.var",
    "conv2_w": ".conv2.w", "bn2_gamma": ".bn2.gamma", "bn2_beta": ".bn2.beta",
    "bn2_mean": ".bn2.mean", "bn2_var": ".bn2.var",
    "proj_w": ".proj.w", "pbn_gamma": ".pbn.gamma", "pbn_beta": ".pbn.beta",
    "pbn_mean": ".pbn.mean", "pbn_var": ".pbn.var",
}


# ---------------------------------------------------------------------------
# forward


def forward(params, config, frames, boundaries, ctx, ablation=None):
    """Run the network on a batch.

    frames: [B,T,H,W] grayscale in [0,1]; boundaries: [B,T] binary.
    Returns (embeddings [B,d], logits [B,W], cache). Embeddings are the
    pooled vectors after the embedding batch norm (when enabled), before
    the embedding dropout. In train mode running statistics inside
    `params` are refreshed.

    ablation="zero-backward-input" feeds zeros to the backward recurrent
    stack; used to verify the directional streams stay independent.
    """
    frames = np.asarray(frames, dtype=float)
    boundaries = np.asarray(boundaries, dtype=float)
    b, t, h, w = frames.shape
    if (t, h, w) != (config.frames, config.height, config.width):
        raise ValueError(
            f"clip batch {frames.shape[1:]} does not match config "
            f"({config.frames},{config.height},{config.width})"
        )
    if boundaries.shape != (b, t):
        raise ValueError(f"boundaries shape {boundaries.shape} != {(b, t)}")
    if ctx.train and b < 2:
        raise ValueError("train-mode forward needs batch >= 2 (batch norm)")

    cache = {"config": config, "batch": b}
    kt, kh, kw = config.frontend_kernel
    s = config.frontend_stride

    x, cache["fe.conv"] = ops.conv3d_forward(
        frames[:, None], params["frontend.conv.w"],
        stride=(1, s, s), pad=(kt // 2, kh // 2, kw // 2),
    )
    x, cache["fe.bn"], rm, rv = ops.bn_conv_forward(
        x, params["frontend.bn.gamma"], params["frontend.bn.beta"],
        params["frontend.bn.mean"], params["frontend.bn.var"], ctx,
    )
    params["frontend.bn.mean"], params["frontend.bn.var"] = rm, rv
    x, cache["fe.relu"] = ops.relu_forward(x)
    x, cache["fe.pool"] = ops.maxpool3d_forward(
        x, size=(1, 3, 3), stride=(1, 2, 2), pad=(0, 1, 1)
    )

    # fold time into the batch for the per-frame residual body
    c0 = x.shape[1]
    x = np.ascontiguousarray(x.transpose(0, 2, 1, 3, 4))
    cache["body.in_shape"] = x.shape
    x = x.reshape(b * t, c0, x.shape[3], x.shape[4])

    block_keys = []
    in_ch = c0
    for i, (width, blocks) in enumerate(zip(config.stage_widths, config.stage_blocks)):
        for j in range(blocks):
            prefix = f"resnet.s{i}.b{j}"
            stride = 2 if (i > 0 and j == 0) else 1
            has_proj = stride != 1 or in_ch != width
            x, blk_cache, updates = ops.residual_block_forward(
                x, _block_view(params, prefix, has_proj), stride, ctx
            )
            for short, new in updates.items():
                params[prefix + _BLOCK_KEYMAP[short]] = new
            cache[prefix] = (blk_cache, has_proj)
            block_keys.append((prefix, has_proj))
            in_ch = width
    cache["body.blocks"] = block_keys

    cache["body.map_shape"] = x.shape
    x = x.reshape(b * t, -1)
    x, cache["body.fc"] = ops.linear_forward(x, params["resnet.fc.w"], params["resnet.fc.b"])
    feats = x.reshape(b, t, config.cnn_feature_size)

    if config.use_word_boundaries:
        feats = np.concatenate([feats, boundaries[:, :, None]], axis=2)
    cache["backend.in"] = feats.shape

    if config.backend == "lstm":
        pooled = _lstm_backend_forward(params, config, feats, ctx, cache, ablation)
    else:
        pooled = _tempconv_backend_forward(params, config, feats, ctx, cache)

    if config.use_embedding_batchnorm:
        pooled, cache["emb.bn"], rm, rv = ops.batch_norm_forward(
            pooled, params["emb.bn.gamma"], params["emb.bn.beta"],
            params["emb.bn.mean"], params["emb.bn.var"], ctx,
        )
        params["emb.bn.mean"], params["emb.bn.var"] = rm, rv
    embeddings = pooled

    dropped, cache["emb.dropout"] = ops.dropout_seq_forward(
        pooled[:, None, :], config.embedding_dropout, ctx
    )
    logits, cache["classifier"] = ops.linear_forward(
        dropped[:, 0, :], params["classifier.w"], params["classifier.b"]
    )

    if ctx.train:
        params["stats.bn_batches"] = params["stats.bn_batches"] + 1.0
    return embeddings, logits, cache


def _lstm_backend_forward(params, config, feats, ctx, cache, ablation):
    p1 = config.backend_dropout
    streams = {}
    for direction, reverse in (("f", False), ("b", True)):
        seq = feats
        if ablation == "zero-backward-input" and direction == "b":
            seq = np.zeros_like(seq)
        for layer in range(1, config.lstm_layers + 1):
            key = f"{direction}{layer}"
            seq, cache[f"lstm.{key}.drop"] = ops.dropout_seq_forward(seq, p1, ctx)
            weights = ops.LstmWeights(params[f"lstm.{key}.w"], params[f"lstm.{key}.b"])
            seq, cache[f"lstm.{key}"] = ops.lstm_sequence_forward(seq, weights, reverse=reverse)
        streams[direction] = seq
    cache["lstm.streams"] = streams
    concat = np.concatenate([streams["f"], streams["b"]], axis=2)
    pooled, cache["pool"] = ops.temporal_pool_forward(concat, config.pooling)
    return pooled


def _tempconv_backend_forward(params, config, feats, ctx, cache):
    # [B,T,F'] -> [B,F',1,T] so the temporal axis is convolved by 1x3 kernels
    x = np.ascontiguousarray(feats.transpose(0, 2, 1))[:, :, None, :]
    x, cache["tback.conv1"] = ops.conv2d_forward(
        x, params["tback.conv1.w"], stride=1, pad=(0, 1)
    )
    x = x + params["tback.conv1.b"][None, :, None, None]
    x, cache["tback.relu1"] = ops.relu_forward(x)
    x, cache["tback.conv2"] = ops.conv2d_forward(
        x, params["tback.conv2.w"], stride=1, pad=(0, 1)
    )
    x = x + params["tback.conv2.b"][None, :, None, None]
    x, cache["tback.relu2"] = ops.relu_forward(x)
    seq = x[:, :, 0, :].transpose(0, 2, 1)  # back to [B,T,F]
    pooled, cache["pool"] = ops.temporal_pool_forward(seq, "average")
    return pooled


# ---------------------------------------------------------------------------
# backward


def backward(params, config, cache, dlogits):
    """Gradients of a scalar loss with upstream dlogits for every learnable
    parameter. Mirrors forward exactly."""
    grads = {}
    b = cache["batch"]
    t = config.frames

    ddropped, grads["classifier.w"], grads["classifier.b"] = ops.linear_backward(
        dlogits, cache["classifier"]
    )
    dpooled = ops.dropout_seq_backward(ddropped[:, None, :], cache["emb.dropout"])[:, 0, :]

    if config.use_embedding_batchnorm:
        dpooled, grads["emb.bn.gamma"], grads["emb.bn.beta"] = ops.batch_norm_backward(
            dpooled, cache["emb.bn"]
        )

    if config.backend == "lstm":
        dfeats = _lstm_backend_backward(params, config, cache, dpooled, grads)
    else:
        dfeats = _tempconv_backend_backward(params, config, cache, dpooled, grads)

    if config.use_word_boundaries:
        dfeats = dfeats[:, :, : config.cnn_feature_size]

    dx = dfeats.reshape(b * t, config.cnn_feature_size)
    dx, grads["resnet.fc.w"], grads["resnet.fc.b"] = ops.linear_backward(
        dx, cache["body.fc"]
    )
    dx = dx.reshape(cache["body.map_shape"])

    for prefix, has_proj in reversed(cache["body.blocks"]):
        blk_cache, _ = cache[prefix]
        dx, blk_grads = ops.residual_block_backward(dx, blk_cache)
        for short, g in blk_grads.items():
            grads[prefix + _BLOCK_KEYMAP[short]] = g

    shape5 = cache["body.in_shape"]
    dx = dx.reshape(shape5)
    dx = np.ascontiguousarray(dx.transpose(0, 2, 1, 3, 4))

    dx = ops.maxpool3d_backward(dx, cache["fe.pool"])
    dx = ops.relu_backward(dx, cache["fe.relu"])
    dx, grads["frontend.bn.gamma"], grads["frontend.bn.beta"] = ops.bn_conv_backward(
        dx, cache["fe.bn"]
    )
    _, grads["frontend.conv.w"] = ops.conv3d_backward(dx, cache["fe.conv"])
    return grads


def _lstm_backend_backward(params, config, cache, dpooled, grads):
    streams = cache["lstm.streams"]
    dconcat = ops.temporal_pool_backward(dpooled, cache["pool"])
    h = config.lstm_hidden
    dstream = {"f": dconcat[:, :, :h], "b": dconcat[:, :, h:]}
    dfeats = None
    for direction in ("f", "b"):
        dseq = dstream[direction]
        for layer in range(config.lstm_layers, 0, -1):
            key = f"{direction}{layer}"
            dseq, dw, db = ops.lstm_sequence_backward(dseq, cache[f"lstm.{key}"])
            grads[f"lstm.{key}.w"] = dw
            grads[f"lstm.{key}.b"] = db
            dseq = ops.dropout_seq_backward(dseq, cache[f"lstm.{key}.drop"])
        dfeats = dseq if dfeats is None else dfeats + dseq
    del streams
    return dfeats


def _tempconv_backend_backward(params, config, cache, dpooled, grads):
    dseq = ops.temporal_pool_backward(dpooled, cache["pool"])
    dx = np.ascontiguousarray(dseq.transpose(0, 2, 1))[:, :, None, :]
    dx = ops.relu_backward(dx, cache["tback.relu2"])
    grads["tback.conv2.b"] = dx.sum(axis=(0, 2, 3))
    dx, grads["tback.conv2.w"] = ops.conv2d_backward(dx, cache["tback.conv2"])
    dx = ops.relu_backward(dx, cache["tback.relu1"])
    grads["tback.conv1.b"] = dx.sum(axis=(0, 2, 3))
    dx, grads["tback.conv1.w"] = ops.conv2d_backward(dx, cache["tback.conv1"])
    return dx[:, :, 0, :].transpose(0, 2, 1)


# ---------------------------------------------------------------------------
# convenience drivers


def loss_and_grads(params, config, frames, boundaries, labels, ctx):
    """Cross-entropy loss over a batch plus gradients for every learnable."""
    _, logits, cache = forward(params, config, frames, boundaries, ctx)
    loss, dlogits = ops.softmax_cross_entropy_batch(logits, labels)
    grads = backward(params, config, cache, dlogits)
    return loss, grads, logits


def batch_arrays(clips):
    """Stack clip objects (frames/boundary/label attributes) into arrays."""
    frames = np.stack([np.asarray(c.frames, dtype=float) for c in clips])
    boundaries = np.stack([np.asarray(c.boundary, dtype=float) for c in clips])
    labels = np.array([c.label for c in clips], dtype=int)
    return frames, boundaries, labels


def extract_embeddings(params, config, clips, batch_size=32):
    """Deterministic eval-mode embeddings, one per clip, labels and source
    ids preserved. Rejected when batch-norm running statistics were never
    populated by training."""
    if float(params["stats.bn_batches"][0]) < 1.0:
        raise ValueError(
            "batch-norm running statistics are unpopulated; "
            "train (or load a trained checkpoint) before extracting"
        )
    ctx = ops.OpContext(mode="eval")
    out = []
    for start in range(0, len(clips), batch_size):
        chunk = clips[start : start + batch_size]
        frames, boundaries, labels = batch_arrays(chunk)
        emb, _, _ = forward(params, config, frames, boundaries, ctx)
        for row, clip, label in zip(emb, chunk, labels):
            out.append(Embedding(values=row.copy(), label=int(label),
                                 source_id=getattr(clip, "source_id", "")))
    return out
