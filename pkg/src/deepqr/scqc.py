"""Semantic correlation of question components (SCQC).

A bilinear attention between the 7 component embeddings yields a 7x7
correlation matrix. Two single-head transformer layers of width 7 encode
it, the encoded scores are averaged per component, and a linear layer
maps the 7 averages to the SCQC feature.

Averaging runs down each column by default (the mean score a component
receives). Row averaging is available as ``pool="row"``, but the rows of
a LayerNorm output with unit gain all have mean equal to the mean bias,
so that feature starts out identical for every question.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Linear, Module, TransformerLayer, uniform_init
from .tensor import ShapeError, as_tensor, mean_cols, mean_rows, parameter, softmax_rows

N_COMPONENTS = 7


def correlation_attention(re, W):
    """Row-wise ``softmax(Re W Re^T)`` for ``Re`` of shape ``(..., 7, d)``."""
    re, W = as_tensor(re), as_tensor(W)
    if re.shape[-1] != W.shape[0] or W.shape[0] != W.shape[1]:
        raise ShapeError(f"embeddings {re.shape} incompatible with W {W.shape}")
    return softmax_rows(re @ W @ re.swap_last())


@dataclass
class ScqcOutput:
    co_matrix: np.ndarray
    feature: object  # Tensor (..., d_scqc)


class ScqcEncoder(Module):
    def __init__(self, d_em, rng, d_scqc=7, d_ff=28, n_layers=2, dropout=0.5, pool="column"):
        if pool not in ("column", "row"):
            raise ValueError(f"pool must be 'column' or 'row', got {pool!r}")
        self.d_em = d_em
        self.pool = pool
        self.W = parameter(uniform_init(rng, d_em, (d_em, d_em)))
        self.layers = [
            TransformerLayer(N_COMPONENTS, 1, d_ff, rng, out_proj=False, dropout=dropout)
            for _ in range(n_layers)
        ]
        self.proj = Linear(N_COMPONENTS, d_scqc, rng)

    def __call__(self, re, training=False, rng=None):
        re = as_tensor(re)
        if re.shape[-2] != N_COMPONENTS:
            raise ShapeError(f"expected {N_COMPONENTS} component rows, got shape {re.shape}")
        co = correlation_attention(re, self.W)
        x = co
        for layer in self.layers:
            x = layer(x, training, rng)
        pooled = mean_rows(x) if self.pool == "column" else mean_cols(x)
        return ScqcOutput(co.data, self.proj(pooled))
