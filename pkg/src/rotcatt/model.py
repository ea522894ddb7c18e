"""Token reconstruction, channel-wise cross-attention gating, decoder and the
assembled end-to-end network."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig, ShapeError, derive_shapes, validate_tensor
from .embedding import PatchEmbedding
from .encoder import ConvBlock, FeatureGrid, NestedEncoder, init_weights
from .rotatory import RotatoryAttention, fuse, rotatory_disabled_path
from .transformer import TransformerEncoder

__all__ = [
    "gap",
    "channel_gate",
    "ChannelGate",
    "Reconstruction",
    "Decoder",
    "RotCAttTransUNetPP",
    "ForwardTrace",
    "count_parameters",
]


def gap(x: torch.Tensor) -> torch.Tensor:
    """Global average pooling ``(B, C, H, W) -> (B, C)``."""
    if x.dim() != 4:
        raise ShapeError(f"gap expects 4 axes, got {tuple(x.shape)}")
    if x.shape[-1] == 0 or x.shape[-2] == 0:
        raise ShapeError("gap over zero-sized spatial dims")
    return x.mean(dim=(2, 3))


def channel_gate(o: torch.Tensor, d: torch.Tensor, l1: nn.Linear, l2: nn.Linear) -> torch.Tensor:
    """``O_hat = sigmoid(L1 gap(O) + L2 gap(D)) * O``, mask broadcast over space."""
    if o.shape != d.shape:
        raise ShapeError(
            f"gate inputs disagree: O {tuple(o.shape)} vs D {tuple(d.shape)}",
            expected=tuple(o.shape), actual=tuple(d.shape),
        )
    # Literal form of the mask. The ReLU symbol mentioned next to L1/L2 is not
    # applied; an excitation-style variant would be l2(relu(l1(...))).
    m = l1(gap(o)) + l2(gap(d))
    return torch.sigmoid(m)[:, :, None, None] * o


class ChannelGate(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.l1 = nn.Linear(channels, channels)
        self.l2 = nn.Linear(channels, channels)

    def mask(self, o: torch.Tensor, d: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.l1(gap(o)) + self.l2(gap(d)))

    def forward(self, o: torch.Tensor, d: torch.Tensor) -> torch.Tensor:
        return channel_gate(o, d, self.l1, self.l2)


class Reconstruction(nn.Module):
    """Tokens ``(B, n, d)`` back to a feature map ``(B, C_i, H_i, W_i)``.

    Tokens are laid onto the patch grid, projected to ``C_i`` channels with a
    1x1 conv + BN + ReLU and bilinearly upsampled by the patch size.
    """

    def __init__(self, embed_dim: int, channels: int, patch: int, grid: tuple):
        super().__init__()
        self.patch = patch
        self.grid = grid
        self.project = nn.Sequential(
            nn.Conv2d(embed_dim, channels, kernel_size=1),
            nn.BatchNorm2d(channels),
            nn.ReLU(inplace=True),
        )
        init_weights(self)

    def to_grid(self, tokens: torch.Tensor) -> torch.Tensor:
        B, n, d = tokens.shape
        gh, gw = self.grid
        if gh * gw != n:
            raise ShapeError(f"{n} tokens do not fill a {gh}x{gw} patch grid")
        return tokens.transpose(1, 2).reshape(B, d, gh, gw)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        x = self.project(self.to_grid(tokens))
        return F.interpolate(x, scale_factor=self.patch, mode="bilinear", align_corners=False)


def square_grid(n: int) -> tuple:
    side = int(round(n ** 0.5))
    if side * side != n:
        raise ShapeError(f"sequence length {n} is not a perfect square")
    return side, side


class Decoder(nn.Module):
    """Upsampling path from the bottleneck, fusing gated maps level by level."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        D = config.depth
        self.depth = D
        self.up = nn.ModuleDict()
        self.gates = nn.ModuleDict()
        self.blocks = nn.ModuleDict()
        for i in range(D - 1, 0, -1):
            c = config.channels(i)
            self.up[str(i)] = nn.ConvTranspose2d(config.channels(i + 1), c, kernel_size=2, stride=2)
            self.gates[str(i)] = ChannelGate(c)
            self.blocks[str(i)] = ConvBlock(2 * c, c)
        self.head = nn.Conv2d(config.channels(1), config.num_classes, kernel_size=1)
        init_weights(self.up)
        init_weights(self.head)

    def forward(self, bottleneck: torch.Tensor, reconstructed: List[torch.Tensor]) -> torch.Tensor:
        """``reconstructed[i-1]`` is ``O_i`` for levels ``1..D-1``."""
        y = bottleneck
        for i in range(self.depth - 1, 0, -1):
            d = self.up[str(i)](y)
            gated = self.gates[str(i)](reconstructed[i - 1], d)
            y = self.blocks[str(i)](torch.cat([gated, d], dim=1))
        return self.head(y)


@dataclass
class ForwardTrace:
    """Intermediate tensors of one forward pass, for inspection and tests."""

    grid: Optional[FeatureGrid] = None
    tokens: List[torch.Tensor] = field(default_factory=list)
    encoded: List[torch.Tensor] = field(default_factory=list)
    rotatory: List[Optional[torch.Tensor]] = field(default_factory=list)
    fused: List[torch.Tensor] = field(default_factory=list)
    reconstructed: List[torch.Tensor] = field(default_factory=list)
    logits: Optional[torch.Tensor] = None


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


class RotCAttTransUNetPP(nn.Module):
    """Nested encoder -> multiscale embedding -> transformer -> rotatory
    attention -> reconstruction -> gated decoder -> per-class logits."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.plan = derive_shapes(config)
        plan = self.plan
        self.encoder = NestedEncoder(config)
        levels = range(1, config.depth)
        self.embeddings = nn.ModuleList(
            PatchEmbedding(config.channels(i), config.embed_dims[i - 1], plan.patch_sizes[i - 1],
                           plan.seq_len, config.embed_dropout)
            for i in levels
        )
        self.transformers = nn.ModuleList(
            TransformerEncoder(config.embed_dims[i - 1], config.transformer_layers,
                               config.num_heads, config.mlp_ratio)
            for i in levels
        )
        if config.rotatory_enabled:
            self.rotatory = nn.ModuleList(
                RotatoryAttention(config.embed_dims[i - 1], tied=config.tie_rotatory) for i in levels
            )
        else:
            self.rotatory = None
        self.reconstruct = nn.ModuleList(
            Reconstruction(config.embed_dims[i - 1], config.channels(i), plan.patch_sizes[i - 1], plan.patch_grid)
            for i in levels
        )
        self.decoder = Decoder(config)

    def num_parameters(self) -> int:
        return count_parameters(self)

    def _stage(self, stage: str, level: int, fn, *args):
        try:
            return fn(*args)
        except (ShapeError, ValueError) as exc:
            raise type(exc)(f"[{stage}, level {level}] {exc}") from exc

    def forward(self, x: torch.Tensor, trace: Optional[ForwardTrace] = None) -> torch.Tensor:
        B = x.shape[0]
        try:
            validate_tensor(x, (B, 1, self.config.input_height, self.config.input_width), "input slices")
        except ShapeError as exc:
            raise ShapeError(f"[input] {exc}", exc.expected, exc.actual, exc.axis) from exc
        grid = self.encoder(x)
        outputs = []
        for i in range(1, self.config.depth):
            k = i - 1
            z = self._stage("embedding", i, self.embeddings[k], grid.output(i))
            e = self._stage("transformer", i, self.transformers[k], z)
            if self.rotatory is not None:
                r = self._stage("rotatory", i, self.rotatory[k], e)
                f = fuse(e, r)
            else:
                r = None
                f = rotatory_disabled_path(e)
            o = self._stage("reconstruction", i, self.reconstruct[k], f)
            expected = (B,) + self.plan.level_shapes[k][1:]
            self._stage("reconstruction", i, validate_tensor, o, expected, f"O_{i}")
            outputs.append(o)
            if trace is not None:
                trace.tokens.append(z)
                trace.encoded.append(e)
                trace.rotatory.append(r)
                trace.fused.append(f)
        logits = self.decoder(grid.bottleneck, outputs)
        validate_tensor(logits, (B,) + self.plan.logits_shape[1:], "logits")
        if trace is not None:
            trace.grid = grid
            trace.reconstructed = outputs
            trace.logits = logits
        return logits
