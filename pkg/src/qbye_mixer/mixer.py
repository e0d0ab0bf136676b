"""Feature/time-mixing MLP encoder with a hand-written backward pass.

The input X is an (f, t) matrix: rows are MFCC coefficients, columns frames.
Each block applies

    U = X + W2 act(W1 LN(X[:, j]) + b1) + b2        for every frame j
    Y = U + (W4 act(W3 LN(U[i, :]) + b3) + b4)       for every coefficient i

and the embedding is the time average of the last block's output.  Batches
are handled by a leading axis: (B, f, t).

Parameters live in a flat ``dict[str, ndarray]`` keyed by dotted names, in a
fixed order (see :func:`param_shapes`), which is also the checkpoint order.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import erf

Params = dict[str, np.ndarray]


class ActivationKind(str, enum.Enum):
    HARDSWISH = "hardswish"
    GELU = "gelu"
    RELU = "relu"
    SILU = "silu"


class InputMode(str, enum.Enum):
    DIRECT = "direct"
    PATCH_EMBED = "patch_embed"
    PATCH_RESHAPE = "patch_reshape"


@dataclass(frozen=True)
class MixerConfig:
    f: int = 81
    t: int = 81
    h: int = 64
    g: int = 64
    n_blocks: int = 12
    activation: ActivationKind = ActivationKind.HARDSWISH
    dropout: float = 0.0
    input_mode: InputMode = InputMode.DIRECT
    patch: int = 9
    num_classes: int = 0
    ln_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "activation", ActivationKind(self.activation))
        object.__setattr__(self, "input_mode", InputMode(self.input_mode))
        for name in ("f", "t", "h", "g"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_blocks < 0:
            raise ValueError("n_blocks must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.num_classes < 0:
            raise ValueError("num_classes must be >= 0")
        if self.input_mode is not InputMode.DIRECT:
            p = self.patch
            if p < 1 or self.f % p or self.t % p:
                raise ValueError(f"patch size {p} does not divide {self.f}x{self.t}")
            if p * p != self.f or (self.f // p) * (self.t // p) != self.t:
                raise ValueError("patched input must come out f x t; need f == t == patch**2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["activation"] = self.activation.value
        d["input_mode"] = self.input_mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MixerConfig":
        return cls(**d)

    def with_(self, **changes) -> "MixerConfig":
        d = self.to_dict()
        d.update(changes)
        return MixerConfig.from_dict(d)


REFERENCE_CONFIG = MixerConfig()


# ---------------------------------------------------------------- activations

def _hardswish(x):
    return x * np.clip(x + 3.0, 0.0, 6.0) / 6.0


def _hardswish_grad(x):
    # kinks: x == -3 -> 0, x == 3 -> 1
    return np.where(x <= -3.0, 0.0, np.where(x >= 3.0, 1.0, (2.0 * x + 3.0) / 6.0)).astype(x.dtype)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return (cdf + x * pdf).astype(x.dtype)


def _silu_grad(x):
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


_ACTIVATIONS = {
    ActivationKind.HARDSWISH: (_hardswish, _hardswish_grad),
    ActivationKind.GELU: (lambda x: _gelu(x).astype(x.dtype), _gelu_grad),
    ActivationKind.RELU: (lambda x: np.maximum(x, 0.0), lambda x: (x > 0).astype(x.dtype)),
    ActivationKind.SILU: (lambda x: x * _sigmoid(x), _silu_grad),
}


def activate(x, kind: ActivationKind | str = ActivationKind.HARDSWISH):
    """Apply the activation elementwise."""
    x = np.asarray(x, dtype=np.result_type(x, np.float32))
    return _ACTIVATIONS[ActivationKind(kind)][0](x)


def activate_grad(x, kind: ActivationKind | str = ActivationKind.HARDSWISH):
    """Elementwise derivative of :func:`activate`."""
    x = np.asarray(x, dtype=np.result_type(x, np.float32))
    return _ACTIVATIONS[ActivationKind(kind)][1](x)


# ------------------------------------------------------------------ params

def _block_shapes(prefix: str, d: int, k: int) -> list[tuple[str, tuple[int, ...]]]:
    return [
        (f"{prefix}.ln.gamma", (d,)),
        (f"{prefix}.ln.beta", (d,)),
        (f"{prefix}.fc1.weight", (k, d)),
        (f"{prefix}.fc1.bias", (k,)),
        (f"{prefix}.fc2.weight", (d, k)),
        (f"{prefix}.fc2.bias", (d,)),
    ]


def param_shapes(cfg: MixerConfig, include_decoder: bool = True) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) list of every tensor in the model."""
    shapes = []
    if cfg.input_mode is InputMode.PATCH_EMBED:
        pp = cfg.patch * cfg.patch
        shapes += [("patch_embed.weight", (cfg.f, pp)), ("patch_embed.bias", (cfg.f,))]
    for b in range(cfg.n_blocks):
        shapes += _block_shapes(f"blocks.{b}.feature", cfg.f, cfg.h)
        shapes += _block_shapes(f"blocks.{b}.time", cfg.t, cfg.g)
    if include_decoder and cfg.num_classes > 0:
        shapes += [("decoder.weight", (cfg.num_classes, cfg.f)), ("decoder.bias", (cfg.num_classes,))]
    return shapes


def init_params(cfg: MixerConfig, rng: np.random.Generator, include_decoder: bool = True,
                dtype=np.float32) -> Params:
    """Fan-in uniform weights, zero biases, unit LayerNorm gains."""
    params: Params = {}
    for name, shape in param_shapes(cfg, include_decoder):
        if name.endswith(".weight"):
            bound = np.sqrt(1.0 / shape[1])
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        elif name.endswith(".gamma"):
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return params


def block_params(params: Params, b: int, kind: str) -> dict[str, np.ndarray]:
    """View of one mixing block: keys gamma, beta, w1, b1, w2, b2."""
    p = f"blocks.{b}.{kind}"
    return {
        "gamma": params[f"{p}.ln.gamma"], "beta": params[f"{p}.ln.beta"],
        "w1": params[f"{p}.fc1.weight"], "b1": params[f"{p}.fc1.bias"],
        "w2": params[f"{p}.fc2.weight"], "b2": params[f"{p}.fc2.bias"],
    }


def count_params(cfg: MixerConfig, include_decoder: bool = False) -> int:
    """Trainable scalars in the encoder (and optionally the decoder)."""
    return sum(int(np.prod(s)) for _, s in param_shapes(cfg, include_decoder))


def count_macs(cfg: MixerConfig) -> int:
    """Multiply-accumulates of the linear layers for one f x t window.

    LayerNorm, activations, residual adds and pooling are not counted.
    """
    per_block = 2 * cfg.t * cfg.f * cfg.h + 2 * cfg.f * cfg.t * cfg.g
    macs = cfg.n_blocks * per_block
    if cfg.input_mode is InputMode.PATCH_EMBED:
        macs += cfg.t * cfg.f * cfg.patch * cfg.patch
    return macs


# ----------------------------------------------------------------- forward

def layer_norm(x, gamma, beta, eps: float = 1e-5):
    """LayerNorm over the last axis."""
    x = np.asarray(x)
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return gamma * (x - mu) / np.sqrt(var + eps) + beta


def _mlp_forward(x, bp, kind, eps, drop_mask=None):
    """Residual MLP over the last axis of x; returns (y, cache)."""
    mu = x.mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(x.var(axis=-1, keepdims=True) + eps)
    xhat = (x - mu) * rstd
    normed = bp["gamma"] * xhat + bp["beta"]
    pre = normed @ bp["w1"].T + bp["b1"]
    act = activate(pre, kind)
    if drop_mask is not None:
        act = act * drop_mask
    y = x + act @ bp["w2"].T + bp["b2"]
    return y, (xhat, rstd, normed, pre, act, drop_mask)


def _mlp_backward(dy, bp, kind, cache):
    """Backward of :func:`_mlp_forward`; returns (dx, grads keyed like bp)."""
    xhat, rstd, normed, pre, act, drop_mask = cache
    d = xhat.shape[-1]
    dy2 = dy.reshape(-1, dy.shape[-1])
    grads = {
        "w2": dy2.T @ act.reshape(-1, act.shape[-1]),
        "b2": dy2.sum(axis=0),
    }
    dact = dy @ bp["w2"]
    if drop_mask is not None:
        dact = dact * drop_mask
    dpre = dact * activate_grad(pre, kind)
    dpre2 = dpre.reshape(-1, dpre.shape[-1])
    grads["w1"] = dpre2.T @ normed.reshape(-1, d)
    grads["b1"] = dpre2.sum(axis=0)
    dnormed = dpre @ bp["w1"]
    grads["gamma"] = (dnormed * xhat).reshape(-1, d).sum(axis=0)
    grads["beta"] = dnormed.reshape(-1, d).sum(axis=0)
    dxhat = dnormed * bp["gamma"]
    dx_ln = rstd / d * (d * dxhat - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    return dy + dx_ln, grads


def _check_shape(x, cfg: MixerConfig):
    if x.shape[-2:] != (cfg.f, cfg.t):
        raise ValueError(f"expected trailing shape ({cfg.f}, {cfg.t}), got {x.shape}")


def feature_mixing_forward(x, bp: dict, cfg: MixerConfig):
    """Mix across the f features of each frame; x is (..., f, t)."""
    x = np.asarray(x)
    _check_shape(x, cfg)
    y, _ = _mlp_forward(np.swapaxes(x, -1, -2), bp, cfg.activation, cfg.ln_eps)
    return np.swapaxes(y, -1, -2)


def time_mixing_forward(u, bp: dict, cfg: MixerConfig):
    """Mix across the t frames of each feature row; u is (..., f, t)."""
    u = np.asarray(u)
    _check_shape(u, cfg)
    y, _ = _mlp_forward(u, bp, cfg.activation, cfg.ln_eps)
    return y


def patchify(x, mode: InputMode | str, params: Params | None = None, patch: int = 9):
    """Rearrange (..., F, T) input into (..., p*p, n_patches) patch columns.

    Patches are scanned row-major and each is flattened row-major into one
    column.  In ``patch_embed`` mode every column then goes through a shared
    learned linear layer.
    """
    mode = InputMode(mode)
    if mode is InputMode.DIRECT:
        raise ValueError("patchify needs a patched input mode")
    x = np.asarray(x)
    rows, cols = x.shape[-2:]
    if rows % patch or cols % patch:
        raise ValueError(f"patch size {patch} does not divide {rows}x{cols}")
    lead = x.shape[:-2]
    gr, gc = rows // patch, cols // patch
    blocks = x.reshape(*lead, gr, patch, gc, patch)
    blocks = np.moveaxis(blocks, -3, -2)  # (..., gr, gc, patch, patch)
    cols_ = blocks.reshape(*lead, gr * gc, patch * patch)
    if mode is InputMode.PATCH_EMBED:
        cols_ = cols_ @ params["patch_embed.weight"].T + params["patch_embed.bias"]
    return np.swapaxes(cols_, -1, -2)


def unpatchify(cols, rows: int, ncols: int, patch: int = 9):
    """Inverse of ``patchify`` in reshape mode."""
    cols = np.asarray(cols)
    lead = cols.shape[:-2]
    gr, gc = rows // patch, ncols // patch
    blocks = np.swapaxes(cols, -1, -2).reshape(*lead, gr, gc, patch, patch)
    return np.moveaxis(blocks, -2, -3).reshape(*lead, rows, ncols)


def _dropout_mask(shape, rate, rng, dtype):
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / (1.0 - rate)


def _encode(x, params: Params, cfg: MixerConfig, rng=None, keep_cache=False):
    dtype = next(iter(params.values())).dtype if params else np.result_type(np.asarray(x), np.float32)
    x = np.asarray(x, dtype=dtype)
    _check_shape(x, cfg)
    patch_in = None
    if cfg.input_mode is not InputMode.DIRECT:
        patch_in = patchify(x, InputMode.PATCH_RESHAPE, patch=cfg.patch)
        if cfg.input_mode is InputMode.PATCH_EMBED:
            s = patchify(x, cfg.input_mode, params, cfg.patch)
        else:
            s = patch_in
    else:
        s = x
    caches = []
    use_dropout = rng is not None and cfg.dropout > 0
    for b in range(cfg.n_blocks):
        fp, tp = block_params(params, b, "feature"), block_params(params, b, "time")
        xt = np.swapaxes(s, -1, -2)
        mask = _dropout_mask(xt.shape[:-1] + (cfg.h,), cfg.dropout, rng, dtype) if use_dropout else None
        ut, fcache = _mlp_forward(xt, fp, cfg.activation, cfg.ln_eps, mask)
        u = np.swapaxes(ut, -1, -2)
        mask = _dropout_mask(u.shape[:-1] + (cfg.g,), cfg.dropout, rng, dtype) if use_dropout else None
        s, tcache = _mlp_forward(u, tp, cfg.activation, cfg.ln_eps, mask)
        if not np.all(np.isfinite(s)):
            raise FloatingPointError(f"non-finite activations after block {b}")
        if keep_cache:
            caches.append((fcache, tcache))
    z = s.mean(axis=-1)
    return z, (patch_in, caches)


def encoder_forward(x, params: Params, cfg: MixerConfig):
    """Embedding z (length f) of an (f, t) matrix, or (B, f) for a batch."""
    z, _ = _encode(x, params, cfg)
    return z


def decoder_forward(z, params: Params):
    """Linear classification head used only during training."""
    if "decoder.weight" not in params:
        raise KeyError("parameters carry no decoder")
    return np.asarray(z) @ params["decoder.weight"].T + params["decoder.bias"]


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits, label: int) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise ValueError(f"label {label} out of range for {logits.shape[-1]} classes")
    return float(-_log_softmax(logits)[label])


def loss_and_gradients(batch, params: Params, cfg: MixerConfig, rng=None):
    """Mean cross-entropy over ``batch`` and its exact gradient.

    ``batch`` is a sequence of (feature matrix, label) pairs.  Dropout is only
    applied when ``rng`` is given and ``cfg.dropout > 0``.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    if "decoder.weight" not in params:
        raise KeyError("parameters carry no decoder")
    x = np.stack([np.asarray(item[0]) for item in batch])
    labels = np.array([int(item[1]) for item in batch])
    n_cls = params["decoder.bias"].shape[0]
    if labels.min() < 0 or labels.max() >= n_cls:
        raise ValueError(f"labels must be in [0, {n_cls})")
    z, (patch_in, caches) = _encode(x, params, cfg, rng=rng, keep_cache=True)
    logits = decoder_forward(z, params)
    logp = _log_softmax(logits)
    bsz = len(batch)
    loss = float(-logp[np.arange(bsz), labels].mean())
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss")

    grads: Params = {}
    dlogits = np.exp(logp)
    dlogits[np.arange(bsz), labels] -= 1.0
    dlogits /= bsz
    grads["decoder.weight"] = dlogits.T @ z
    grads["decoder.bias"] = dlogits.sum(axis=0)
    dz = dlogits @ params["decoder.weight"]
    ds = np.broadcast_to(dz[:, :, None] / cfg.t, (bsz, cfg.f, cfg.t)).astype(z.dtype)
    for b in reversed(range(cfg.n_blocks)):
        fcache, tcache = caches[b]
        tp, fp = block_params(params, b, "time"), block_params(params, b, "feature")
        du, tg = _mlp_backward(ds, tp, cfg.activation, tcache)
        dxt, fg = _mlp_backward(np.swapaxes(du, -1, -2), fp, cfg.activation, fcache)
        ds = np.swapaxes(dxt, -1, -2)
        for prefix, g in ((f"blocks.{b}.time", tg), (f"blocks.{b}.feature", fg)):
            grads[f"{prefix}.ln.gamma"] = g["gamma"]
            grads[f"{prefix}.ln.beta"] = g["beta"]
            grads[f"{prefix}.fc1.weight"] = g["w1"]
            grads[f"{prefix}.fc1.bias"] = g["b1"]
            grads[f"{prefix}.fc2.weight"] = g["w2"]
            grads[f"{prefix}.fc2.bias"] = g["b2"]
    if cfg.input_mode is InputMode.PATCH_EMBED:
        dcols = np.swapaxes(ds, -1, -2).reshape(-1, cfg.f)
        grads["patch_embed.weight"] = dcols.T @ np.swapaxes(patch_in, -1, -2).reshape(-1, cfg.patch ** 2)
        grads["patch_embed.bias"] = dcols.sum(axis=0)
    ordered = {name: grads[name].astype(params[name].dtype) for name in params}
    return loss, ordered
