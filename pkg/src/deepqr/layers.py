"""Trainable building blocks shared by the SCQC, SF and QDQE encoders."""
from __future__ import annotations

import math

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    dropout,
    layer_norm,
    parameter,
    relu,
    softmax_rows,
)


def uniform_init(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Minimal parameter container.

    Parameters are the ``Tensor`` attributes with ``requires_grad`` set,
    plus those of child modules (attributes or lists of modules). Names
    are dotted attribute paths and are stable, so they double as
    checkpoint keys.
    """

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.copy()


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True):
        self.weight = parameter(uniform_init(rng, n_in, (n_in, n_out)))
        self.bias = parameter(uniform_init(rng, n_in, (n_out,))) if bias else None

    def __call__(self, x):
        if x.ndim == 1:
            return self(x.reshape(1, -1)).reshape(-1)
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


class LayerNorm(Module):
    def __init__(self, width):
        self.gain = parameter(np.ones(width))
        self.bias = parameter(np.zeros(width))

    def __call__(self, x):
        return layer_norm(x, self.gain, self.bias)


def scaled_attention(q, k, v, scale_width):
    """``softmax(q k^T / sqrt(scale_width)) v`` over the trailing two axes.

    Returns the output and the attention weights.
    """
    weights = softmax_rows((q @ k.swap_last()) * (1.0 / math.sqrt(scale_width)))
    return weights @ v, weights


class TransformerLayer(Module):
    """Post-norm encoder layer: attention and feed-forward sub-layers.

    Each sub-layer computes ``LayerNorm(x + dropout(sublayer(x)))``.
    Query/key/value projections are stored as ``width x width`` matrices
    whose column blocks are the per-head projections. With ``heads=1`` and
    ``out_proj=False`` the attention sub-layer is plain single-head
    self-attention with no output projection.

    Attention logits are scaled by ``sqrt(width)`` (the full model width),
    not the per-head width.
    """

    def __init__(self, width, heads, d_ff, rng, out_proj=True, dropout=0.5):
        if width % heads:
            raise ValueError(f"model width {width} is not divisible by {heads} heads")
        self.width, self.heads, self.p = width, heads, dropout
        self.w_q = parameter(uniform_init(rng, width, (width, width)))
        self.w_k = parameter(uniform_init(rng, width, (width, width)))
        self.w_v = parameter(uniform_init(rng, width, (width, width)))
        self.w_o = parameter(uniform_init(rng, width, (width, width))) if out_proj else None
        self.ff1 = Linear(width, d_ff, rng)
        self.ff2 = Linear(d_ff, width, rng)
        self.norm1 = LayerNorm(width)
        self.norm2 = LayerNorm(width)

    def head_weights(self, j):
        """Per-head ``(W^Q_j, W^K_j, W^V_j)`` as arrays of shape ``(width, width/heads)``."""
        dk = self.width // self.heads
        cols = slice(j * dk, (j + 1) * dk)
        return self.w_q.data[:, cols], self.w_k.data[:, cols], self.w_v.data[:, cols]

    def _split(self, x):
        # (..., n, width) -> (..., heads, n, dk)
        *lead, n, _ = x.shape
        dk = self.width // self.heads
        x = x.reshape(*lead, n, self.heads, dk)
        axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
        return x.transpose(axes)

    def _merge(self, x):
        *lead, h, n, dk = x.shape
        axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
        return x.transpose(axes).reshape(*lead, n, h * dk)

    def attention(self, x, return_weights=False):
        q, k, v = x @ self.w_q, x @ self.w_k, x @ self.w_v
        if self.heads == 1:
            out, weights = scaled_attention(q, k, v, self.width)
        else:
            out, weights = scaled_attention(self._split(q), self._split(k), self._split(v), self.width)
            out = self._merge(out)
        if self.w_o is not None:
            out = out @ self.w_o
        return (out, weights) if return_weights else out

    def feed_forward(self, x):
        return self.ff2(relu(self.ff1(x)))

    def __call__(self, x, training=False, rng=None):
        if x.shape[-1] != self.width:
            raise ShapeError(f"layer expects width {self.width}, got input shape {x.shape}")
        y = self.norm1(x + dropout(self.attention(x), self.p, training, rng))
        return self.norm2(y + dropout(self.feed_forward(y), self.p, training, rng))


def pad_width(x, width):
    """Zero-pad the last axis of an array up to ``width``."""
    extra = width - x.shape[-1]
    if extra < 0:
        raise ShapeError(f"cannot pad width {x.shape[-1]} down to {width}")
    if extra == 0:
        return x
    pad = [(0, 0)] * (x.ndim - 1) + [(0, extra)]
    return np.pad(x, pad)

