"""Straight-line numpy re-implementations used as oracles.

Written independently of the autodiff engine: loops over heads and rows
where that is clearer, no shared helpers with the package.
"""
import numpy as np


def ref_softmax(z):
    out = np.empty_like(z)
    for i, row in enumerate(z):
        e = np.exp(row - row.max())
        out[i] = e / e.sum()
    return out


def ref_layer_norm(x, gain, bias, eps=1e-5):
    out = np.empty_like(x)
    for i, row in enumerate(x):
        mu = row.sum() / len(row)
        var = ((row - mu) ** 2).sum() / len(row)
        out[i] = gain * (row - mu) / np.sqrt(var + eps) + bias
    return out


def ref_attention(x, wq, wk, wv, wo, heads):
    """Multi-head self-attention for one 2-d input, scaled by sqrt(width)."""
    width = x.shape[1]
    dk = width // heads
    outs = []
    for j in range(heads):
        cols = slice(j * dk, (j + 1) * dk)
        q, k, v = x @ wq[:, cols], x @ wk[:, cols], x @ wv[:, cols]
        outs.append(ref_softmax(q @ k.T / np.sqrt(width)) @ v)
    out = np.concatenate(outs, axis=1)
    return out if wo is None else out @ wo


def ref_layer(x, p, heads):
    """Eval-mode post-norm encoder layer; ``p`` is a layer state_dict."""
    a = ref_attention(x, p["w_q"], p["w_k"], p["w_v"], p.get("w_o"), heads)
    y = ref_layer_norm(x + a, p["norm1.gain"], p["norm1.bias"])
    h = np.maximum(y @ p["ff1.weight"] + p["ff1.bias"], 0.0)
    f = h @ p["ff2.weight"] + p["ff2.bias"]
    return ref_layer_norm(y + f, p["norm2.gain"], p["norm2.bias"])
