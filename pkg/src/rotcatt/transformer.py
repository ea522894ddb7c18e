"""Pre-norm transformer encoder used independently at each scale."""

from __future__ import annotations

import math
from typing import List, Tuple

import torch
import torch.nn as nn

__all__ = ["scaled_attention", "MultiHeadSelfAttention", "TransformerLayer", "TransformerEncoder"]


def scaled_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """``softmax(Q K^T / sqrt(d)) V`` over the last two axes.

    ``d`` is the feature size of ``q``. Returns ``(output, weights)`` where the
    weights have shape ``(..., n, n)`` and every row sums to one.
    """
    if not (torch.isfinite(q).all() and torch.isfinite(k).all() and torch.isfinite(v).all()):
        raise FloatingPointError("scaled_attention received non-finite inputs")
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    weights = scores.softmax(dim=-1)
    return weights @ v, weights


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.query = nn.Linear(dim, dim)
        # a key bias only shifts each score row by a constant, which softmax cancels
        self.key = nn.Linear(dim, dim, bias=False)
        self.value = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        B, n, _ = x.shape
        return x.view(B, n, self.num_heads, self.head_dim).transpose(1, 2)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        B, n, d = x.shape
        q, k, v = self._split(self.query(x)), self._split(self.key(x)), self._split(self.value(x))
        ctx, weights = scaled_attention(q, k, v)
        ctx = ctx.transpose(1, 2).reshape(B, n, d)
        return self.out(ctx), weights


class TransformerLayer(nn.Module):
    """One layer of::

        Z' = MSA(LN(Z)) + Z
        Z_next = MLP(LN(Z')) + Z'
    """

    def __init__(self, dim: int, num_heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.attn_norm = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, num_heads)
        self.mlp_norm = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim * mlp_ratio),
            nn.GELU(),
            nn.Linear(dim * mlp_ratio, dim),
        )
        self.last_weights: torch.Tensor | None = None

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        attended, weights = self.attn(self.attn_norm(z))
        self.last_weights = weights.detach()
        z = attended + z
        return self.mlp(self.mlp_norm(z)) + z


class TransformerEncoder(nn.Module):
    def __init__(self, dim: int, num_layers: int, num_heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.layers = nn.ModuleList(TransformerLayer(dim, num_heads, mlp_ratio) for _ in range(num_layers))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            z = layer(z)
        return z

    def attention_weights(self) -> List[torch.Tensor]:
        """Attention maps recorded by the most recent forward pass, one per layer."""
        return [layer.last_weights for layer in self.layers if layer.last_weights is not None]
