"""Patch tokenization of the multiscale feature maps plus learned positions."""

from __future__ import annotations

import torch
import torch.nn as nn

from .config import ShapeError, validate_tensor

__all__ = ["PatchEmbedding", "add_positional", "patch_embed"]


def patch_embed(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None, patch: int) -> torch.Tensor:
    """Project non-overlapping ``patch x patch`` tiles of ``x`` to tokens.

    ``weight`` has the strided-convolution layout ``(d, C, p, p)``. Tokens
    come out in row-major order over the patch grid: ``(B, n, d)``.
    """
    if x.shape[-1] % patch or x.shape[-2] % patch:
        raise ShapeError(
            f"spatial size {tuple(x.shape[-2:])} is not divisible by patch size {patch}"
        )
    out = nn.functional.conv2d(x, weight, bias, stride=patch)
    return out.flatten(2).transpose(1, 2)


def add_positional(tokens: torch.Tensor, table: torch.Tensor) -> torch.Tensor:
    """``Z = Z_hat + E_pos`` with the table broadcast over the batch axis."""
    if tokens.shape[-2:] != table.shape[-2:]:
        raise ShapeError(
            f"positional table {tuple(table.shape)} does not align with tokens {tuple(tokens.shape)}",
            expected=tuple(table.shape[-2:]), actual=tuple(tokens.shape[-2:]),
        )
    return tokens + table


class PatchEmbedding(nn.Module):
    def __init__(self, in_channels: int, embed_dim: int, patch: int, seq_len: int, dropout: float = 0.0):
        super().__init__()
        self.patch = patch
        self.seq_len = seq_len
        self.embed_dim = embed_dim
        self.proj = nn.Conv2d(in_channels, embed_dim, kernel_size=patch, stride=patch)
        self.position = nn.Parameter(torch.zeros(1, seq_len, embed_dim))
        nn.init.trunc_normal_(self.position, std=0.02)
        self.dropout = nn.Dropout(dropout)

    def tokens(self, x: torch.Tensor) -> torch.Tensor:
        """Raw patch tokens before positions are added."""
        return patch_embed(x, self.proj.weight, self.proj.bias, self.patch)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = add_positional(self.tokens(x), self.position)
        validate_tensor(z, (x.shape[0], self.seq_len, self.embed_dim), "embedded tokens")
        return self.dropout(z)
