"""Rotatory inter-slice attention.

The batch axis of an encoded token tensor ``(B, n, d)`` is read as ``B``
consecutive slices. Every interior slice ``k`` (``1 < k < B``, 1-based) is a
target with slice ``k-1`` as left context and ``k+1`` as right context::

    r_t  = mean_j z_t[j]
    r_l  = SA(Z_l, r_t)        r_r  = SA(Z_r, r_t)
    r_lt = SA(Z_t, r_l)        r_rt = SA(Z_t, r_r)
    r_k  = [r_l, r_r, r_lt, r_rt]
    R    = W_r(mean_k r_k)

and ``R`` is added to every token of every slice.
"""

from __future__ import annotations

from typing import NamedTuple, Tuple

import torch
import torch.nn as nn

from .config import ShapeError

__all__ = [
    "WindowTooSmallError",
    "pool_target",
    "single_attention",
    "SingleAttention",
    "RotatoryAttention",
    "rotatory_step",
    "fuse",
    "rotatory_disabled_path",
    "SliceWindow",
]


class WindowTooSmallError(ValueError):
    pass


class SliceWindow(NamedTuple):
    left: torch.Tensor
    target: torch.Tensor
    right: torch.Tensor


def pool_target(z: torch.Tensor) -> torch.Tensor:
    """Mean over the token axis: ``(..., n, d) -> (..., d)``."""
    if z.shape[-2] == 0:
        raise ValueError("cannot pool an empty token set")
    return z.mean(dim=-2)


def single_attention(
    z: torch.Tensor, r: torch.Tensor, w_k: torch.Tensor, w_v: torch.Tensor, b: torch.Tensor
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Single-query attention with a tanh-activated general score.

    ``z``: ``(..., n, d)`` tokens, ``r``: ``(..., d)`` query. ``w_k`` and
    ``w_v`` are ``(d, d)`` matrices applied as ``z @ w.T``; ``b`` a scalar.
    Returns ``(r_new, a)`` with ``a`` of shape ``(..., n)``.
    """
    keys = z @ w_k.T
    values = z @ w_v.T
    scores = torch.tanh((keys @ r.unsqueeze(-1)).squeeze(-1) + b)
    if not torch.isfinite(scores).all():
        raise FloatingPointError("single attention produced non-finite scores")
    a = scores.softmax(dim=-1)
    return (a.unsqueeze(-1) * values).sum(dim=-2), a


class SingleAttention(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.key = nn.Linear(dim, dim, bias=False)
        self.value = nn.Linear(dim, dim, bias=False)
        self.bias = nn.Parameter(torch.zeros(()))

    def forward(self, z: torch.Tensor, r: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        return single_attention(z, r, self.key.weight, self.value.weight, self.bias)


def rotatory_step(window: SliceWindow, block: "RotatoryAttention") -> torch.Tensor:
    """Concatenated context vector ``r_k`` of length ``4d`` for one window.

    Accepts either single windows ``(n, d)`` or stacked windows ``(W, n, d)``.
    """
    return block.step(window)[0]


def fuse(encoded: torch.Tensor, r: torch.Tensor) -> torch.Tensor:
    """Add the inter-slice vector to every token of every slice."""
    if r.shape[-1] != encoded.shape[-1]:
        raise ShapeError(
            f"rotatory vector has dim {r.shape[-1]}, tokens have {encoded.shape[-1]}",
            expected=encoded.shape[-1], actual=r.shape[-1],
        )
    return encoded + r


def rotatory_disabled_path(encoded: torch.Tensor) -> torch.Tensor:
    return encoded


class RotatoryAttention(nn.Module):
    """One scale's rotatory block: ``(B, n, d) -> R`` of shape ``(d,)``."""

    ROLES = ("left", "right", "left_target", "right_target")

    def __init__(self, dim: int, tied: bool = False):
        super().__init__()
        self.dim = dim
        self.tied = tied
        if tied:
            self.shared = SingleAttention(dim)
        else:
            self.left = SingleAttention(dim)
            self.right = SingleAttention(dim)
            self.left_target = SingleAttention(dim)
            self.right_target = SingleAttention(dim)
        self.aggregate = nn.Linear(4 * dim, dim)
        self.last_weights: dict = {}

    def attention(self, role: str) -> SingleAttention:
        return self.shared if self.tied else getattr(self, role)

    def step(self, window: SliceWindow):
        zl, zt, zr = window
        if not (zl.shape == zt.shape == zr.shape):
            raise ShapeError(f"window slices disagree: {zl.shape}, {zt.shape}, {zr.shape}")
        r_t = pool_target(zt)
        r_l, a_l = self.attention("left")(zl, r_t)
        r_r, a_r = self.attention("right")(zr, r_t)
        r_lt, a_lt = self.attention("left_target")(zt, r_l)
        r_rt, a_rt = self.attention("right_target")(zt, r_r)
        weights = {"left": a_l, "right": a_r, "left_target": a_lt, "right_target": a_rt}
        return torch.cat([r_l, r_r, r_lt, r_rt], dim=-1), weights

    def windows(self, encoded: torch.Tensor) -> SliceWindow:
        """All ``B - 2`` interior windows stacked along a leading axis."""
        return SliceWindow(encoded[:-2], encoded[1:-1], encoded[2:])

    def forward(self, encoded: torch.Tensor) -> torch.Tensor:
        if encoded.dim() != 3:
            raise ShapeError(f"rotatory block expects (B, n, d), got {tuple(encoded.shape)}")
        if encoded.shape[0] < 3:
            raise WindowTooSmallError(
                f"rotatory attention needs at least 3 consecutive slices, got B={encoded.shape[0]}"
            )
        r_k, weights = self.step(self.windows(encoded))
        self.last_weights = {k: v.detach() for k, v in weights.items()}
        return self.aggregate(r_k.mean(dim=0))
