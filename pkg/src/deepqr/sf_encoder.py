"""Semantic-feature (SF) encoder: multi-head transformer over the 7 component embeddings."""
from __future__ import annotations

from .layers import Linear, Module, TransformerLayer
from .tensor import ShapeError, as_tensor, mean_rows

HEADS = 4


def multi_head_attention(x, layer: TransformerLayer, return_weights=False):
    """Concatenated per-head attention projected by the layer's ``W^O``."""
    return layer.attention(as_tensor(x), return_weights=return_weights)


class SfEncoder(Module):
    def __init__(self, width, rng, d_sf=16, heads=HEADS, n_layers=2, d_ff=None, dropout=0.5):
        if width % heads:
            raise ValueError(f"SF width {width} must be divisible by {heads} heads")
        self.width = width
        self.layers = [
            TransformerLayer(width, heads, d_ff or 4 * width, rng, out_proj=True, dropout=dropout)
            for _ in range(n_layers)
        ]
        self.proj = Linear(width, d_sf, rng)

    def encode(self, re, training=False, rng=None):
        x = as_tensor(re)
        if x.shape[-1] != self.width:
            raise ShapeError(f"SF encoder expects width {self.width}, got {x.shape}")
        for layer in self.layers:
            x = layer(x, training, rng)
        return x

    def __call__(self, re, training=False, rng=None):
        return self.proj(mean_rows(self.encode(re, training, rng)))
