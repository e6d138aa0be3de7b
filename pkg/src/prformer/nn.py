"""Neural-net kernels composed from the tensor primitives.

Parameters live in small dataclasses of Tensors; the ops are pure functions.
`conv1d` and `upsample_repeat` are registered as primitives of their own so
the op tape names them directly instead of a blur of reshapes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, _node, register_primitive


@dataclass
class LinearParams:
    w: Tensor  # (in, out)
    b: Tensor  # (out,)


@dataclass
class GRUParams:
    wz: Tensor
    uz: Tensor
    bz: Tensor
    wr: Tensor
    ur: Tensor
    br: Tensor
    wh: Tensor
    uh: Tensor
    bh: Tensor

    @property
    def hidden_size(self):
        return self.uz.shape[0]


@dataclass
class MHAParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor


def _uniform(rng, bound, shape):
    return T.tensor(rng.uniform(-bound, bound, size=shape).astype(np.float32),
                    requires_grad=True)


def init_linear(rng, in_dim, out_dim):
    bound = 1.0 / np.sqrt(in_dim)
    return LinearParams(w=_uniform(rng, bound, (in_dim, out_dim)),
                        b=_uniform(rng, bound, (out_dim,)))


def init_gru(rng, in_dim, hidden):
    bound = 1.0 / np.sqrt(hidden)
    fields = {}
    for gate in ("z", "r", "h"):
        fields["w" + gate] = _uniform(rng, bound, (in_dim, hidden))
        fields["u" + gate] = _uniform(rng, bound, (hidden, hidden))
        fields["b" + gate] = _uniform(rng, bound, (hidden,))
    return GRUParams(**fields)


def init_mha(rng, d_model):
    bound = 1.0 / np.sqrt(d_model)
    fields = {}
    for name in ("q", "k", "v", "o"):
        fields["w" + name] = _uniform(rng, bound, (d_model, d_model))
        fields["b" + name] = _uniform(rng, bound, (d_model,))
    return MHAParams(**fields)


def init_conv1d(rng, in_channels, out_channels, kernel):
    bound = 1.0 / np.sqrt(in_channels * kernel)
    weight = _uniform(rng, bound, (out_channels, in_channels, kernel))
    bias = _uniform(rng, bound, (out_channels,))
    return weight, bias


def iter_params(obj, prefix=""):
    """Yield (name, Tensor) pairs in deterministic field order.

    Walks dataclasses, lists/tuples and dicts; the traversal order fixes the
    checkpoint layout, so keep it stable.
    """
    if isinstance(obj, Tensor):
        if obj.requires_grad:
            yield prefix, obj
        return
    if dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from iter_params(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
        return
    if isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from iter_params(item, f"{prefix}.{i}" if prefix else str(i))
        return
    if isinstance(obj, dict):
        for key in obj:
            yield from iter_params(obj[key], f"{prefix}.{key}" if prefix else str(key))


# ---------------------------------------------------------------------------
# affine / conv / upsample


def linear(x, params):
    """x (..., in) @ w (in, out) + b."""
    if x.ndim == 1:
        x = T.reshape(x, (1, x.shape[0]))
        return T.reshape(T.add(T.matmul(x, params.w), params.b), (params.w.shape[1],))
    return T.add(T.matmul(x, params.w), params.b)


def conv1d(x, weight, bias=None, stride=1):
    """Valid 1-d convolution over the last axis.

    x (B, C_in, L), weight (C_out, C_in, K) -> (B, C_out, L_out) with
    L_out = (L - K) // stride + 1. Registered on the tape as one op.
    """
    if x.ndim != 3 or weight.ndim != 3:
        raise T.ShapeMismatchError("conv1d", x.shape, weight.shape, "expects 3-d input and weight")
    if x.shape[1] != weight.shape[1]:
        raise T.ShapeMismatchError("conv1d", x.shape, weight.shape, "channel dims differ")
    k = weight.shape[2]
    if stride < 1 or k > x.shape[2]:
        raise T.ShapeMismatchError("conv1d", x.shape, weight.shape,
                                   f"kernel {k} / stride {stride} invalid for length {x.shape[2]}")
    l_out = (x.shape[2] - k) // stride + 1
    patches = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=2)[:, :, ::stride, :]
    out = np.einsum("bcok,dck->bdo", patches, weight.data)
    if bias is not None:
        out = out + bias.data[None, :, None]
    b_sz, c_out = x.shape[0], weight.shape[0]
    flops = 2 * b_sz * c_out * x.shape[1] * k * l_out

    def bwd(g):
        gw = np.einsum("bdo,bcok->dck", g, patches)
        gx = np.zeros_like(x.data)
        # per kernel offset the output positions map to a clean strided slice
        for kk in range(k):
            end = kk + (l_out - 1) * stride + 1
            gx[:, :, kk:end:stride] += np.einsum("bdo,dc->bco", g, weight.data[:, :, kk])
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        parents_g = (gx, gw) if bias is None else (gx, gw, gb)
        return parents_g

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node("conv1d", out.astype(x.data.dtype, copy=False), parents, bwd, flops=flops)


def upsample_repeat(x, target_len):
    """Zero-order-hold upsampling of (B, C, L) along time to `target_len`."""
    if x.ndim != 3:
        raise T.ShapeMismatchError("upsample", x.shape, (target_len,), "expects 3-d input")
    l_in = x.shape[2]
    if target_len < l_in:
        raise T.ShapeMismatchError("upsample", x.shape, (target_len,),
                                   "target shorter than input")
    idx = (np.arange(target_len) * l_in) // target_len

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None), slice(None), idx), g)
        return (gx,)

    return _node("upsample", x.data[:, :, idx], (x,), bwd)


register_primitive("conv1d", conv1d)
register_primitive("upsample", upsample_repeat)


# ---------------------------------------------------------------------------
# recurrence


def gru_step(x_t, h_prev, params):
    """One GRU update; x_t (B, in), h_prev (B, H) -> h_t (B, H)."""
    z = T.sigmoid(T.add(linear(x_t, LinearParams(params.wz, params.bz)),
                        T.matmul(h_prev, params.uz)))
    r = T.sigmoid(T.add(linear(x_t, LinearParams(params.wr, params.br)),
                        T.matmul(h_prev, params.ur)))
    cand = T.tanh(T.add(linear(x_t, LinearParams(params.wh, params.bh)),
                        T.matmul(T.mul(r, h_prev), params.uh)))
    # h_t = (1 - z) * h_prev + z * cand, rewritten to three ops
    return T.add(h_prev, T.mul(z, T.sub(cand, h_prev)))


def gru_forward(x, params, h0=None):
    """Run a GRU over x (T, B, in) and return the last hidden state (B, H).

    The input-to-gate projections for all steps are batched into single
    matmuls up front; only the hidden recurrence loops over time.
    """
    if x.ndim == 2:
        x = T.reshape(x, (x.shape[0], 1, x.shape[1]))
        return T.reshape(gru_forward(x, params, h0), (params.hidden_size,))
    t_len, batch, in_dim = x.shape
    hidden = params.hidden_size
    flat = T.reshape(x, (t_len * batch, in_dim))
    gates = {}
    for gate, w, b in (("z", params.wz, params.bz), ("r", params.wr, params.br),
                       ("h", params.wh, params.bh)):
        gates[gate] = T.reshape(T.add(T.matmul(flat, w), b), (t_len, batch, hidden))
    h = T.zeros((batch, hidden), dtype=x.data.dtype)

    def step_input(gate, t):
        return T.reshape(T.narrow(gates[gate], 0, t, 1), (batch, hidden))

    for t in range(t_len):
        z = T.sigmoid(T.add(step_input("z", t), T.matmul(h, params.uz)))
        r = T.sigmoid(T.add(step_input("r", t), T.matmul(h, params.ur)))
        cand = T.tanh(T.add(step_input("h", t), T.matmul(T.mul(r, h), params.uh)))
        h = T.add(h, T.mul(z, T.sub(cand, h)))
    return h


# ---------------------------------------------------------------------------
# normalization / attention


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean, unit variance, then affine."""
    mu = T.mean(x, axis=x.ndim - 1, keepdims=True)
    centered = T.sub(x, mu)
    var = T.mean(T.mul(centered, centered), axis=x.ndim - 1, keepdims=True)
    normed = T.div(centered, T.sqrt(T.add(var, T.tensor(np.asarray(eps, dtype=x.data.dtype)))))
    return T.add(T.mul(normed, gamma), beta)


def softmax(x, axis=-1):
    """Numerically stable softmax along `axis`."""
    axis = axis % x.ndim
    shift = T.tensor(x.data.max(axis=axis, keepdims=True))  # constant: derivative unaffected
    e = T.exp(T.sub(x, shift))
    return T.div(e, T.sum_(e, axis=axis, keepdims=True))


def softmax_temp(logits, temperature):
    """Softmax of logits / temperature; low temperature sharpens toward argmax."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return softmax(T.scale(logits, 1.0 / temperature), axis=logits.ndim - 1)


def multi_head_attention(x, params, heads):
    """Bidirectional self-attention over tokens; x (B, N, D) -> (out, probs).

    Scores are scaled by 1/sqrt(D/heads); `probs` (B, heads, N, N) is the
    row-stochastic attention matrix, returned for inspection.
    """
    b, n, d = x.shape
    if d % heads != 0:
        raise ValueError(f"d_model {d} not divisible by heads {heads}")
    dh = d // heads

    def split_heads(t):
        return T.permute(T.reshape(t, (b, n, heads, dh)), (0, 2, 1, 3))

    q = split_heads(linear(x, LinearParams(params.wq, params.bq)))
    k = split_heads(linear(x, LinearParams(params.wk, params.bk)))
    v = split_heads(linear(x, LinearParams(params.wv, params.bv)))
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(dh))
    probs = softmax(scores, axis=-1)
    ctx = T.matmul(probs, v)  # (b, heads, n, dh)
    merged = T.reshape(T.permute(ctx, (0, 2, 1, 3)), (b, n, d))
    return linear(merged, LinearParams(params.wo, params.bo)), probs
