"""Dense-downsampling encoder with UNet++ style nested skip connections."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig, ShapePlan, derive_shapes, validate_tensor

__all__ = ["ConvBlock", "FeatureGrid", "NestedEncoder", "init_weights", "upsample2x"]


def init_weights(module: nn.Module) -> None:
    """Kaiming-uniform convolutions, unit/zero normalization layers."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.BatchNorm2d, nn.LayerNorm)):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class ConvBlock(nn.Module):
    """Two successive 3x3 conv -> batch norm -> ReLU stages."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, 3, padding=1),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_channels, out_channels, 3, padding=1),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )
        init_weights(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4:
            raise ValueError(f"ConvBlock expects a 4-axis tensor, got shape {tuple(x.shape)}")
        if x.shape[1] != self.in_channels:
            raise ValueError(
                f"ConvBlock expects {self.in_channels} input channels, got {x.shape[1]}"
            )
        return self.body(x)


def upsample2x(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


@dataclass
class FeatureGrid:
    """All encoder nodes ``X_i^j`` keyed by ``(i, j)``, 1-based."""

    nodes: Dict[Tuple[int, int], torch.Tensor]
    depth: int

    def output(self, level: int) -> torch.Tensor:
        """Row output ``X_i``: the last nested node of row ``level``."""
        if level == self.depth:
            return self.bottleneck
        return self.nodes[(level, self.depth - level)]

    @property
    def outputs(self) -> Tuple[torch.Tensor, ...]:
        return tuple(self.output(i) for i in range(1, self.depth))

    @property
    def bottleneck(self) -> torch.Tensor:
        return self.nodes[(self.depth, 1)]

    def __len__(self) -> int:
        return len(self.nodes)


class NestedEncoder(nn.Module):
    """Produces the grid ``X_i^j`` from a ``(B, 1, H, W)`` slice stack.

    ``X_i^1`` comes from conv + 2x2 max-pool down the first column. Node
    ``X_i^j`` (``j > 1``) convolves the concatenation of every earlier node
    in row ``i`` with the bilinearly upsampled ``X_{i+1}^{j-1}``, so ``X_1^2``
    sees ``C + 2C = 3C`` channels.
    """

    def __init__(self, config: ModelConfig, in_channels: int = 1):
        super().__init__()
        self.config = config
        self.plan: ShapePlan = derive_shapes(config)
        D = config.depth
        ch = config.channels
        self.down = nn.ModuleDict()
        self.down["1"] = ConvBlock(in_channels, ch(1))
        for i in range(2, D + 1):
            self.down[str(i)] = ConvBlock(ch(i - 1), ch(i))
        self.nested = nn.ModuleDict()
        for i in range(1, D):
            for j in range(2, D - i + 1):
                in_ch = (j - 1) * ch(i) + ch(i + 1)
                self.nested[f"{i}_{j}"] = ConvBlock(in_ch, ch(i))

    def nested_in_channels(self, i: int, j: int) -> int:
        return self.nested[f"{i}_{j}"].in_channels

    def forward(self, x: torch.Tensor) -> FeatureGrid:
        D = self.config.depth
        B = x.shape[0]
        validate_tensor(x, (B, None, self.config.input_height, self.config.input_width), "encoder input")
        nodes: Dict[Tuple[int, int], torch.Tensor] = {}
        h = self.down["1"](x)
        nodes[(1, 1)] = h
        for i in range(2, D + 1):
            h = self.down[str(i)](F.max_pool2d(h, 2))
            nodes[(i, 1)] = h
        # fill diagonals so X_{i+1}^{j-1} exists before X_i^j
        for j in range(2, D):
            for i in range(1, D - j + 1):
                row = [nodes[(i, k)] for k in range(1, j)]
                row.append(upsample2x(nodes[(i + 1, j - 1)]))
                nodes[(i, j)] = self.nested[f"{i}_{j}"](torch.cat(row, dim=1))
        for (i, j), t in nodes.items():
            expected = list(self.plan.grid_nodes[(i, j)])
            expected[0] = B
            validate_tensor(t, expected, f"X_{i}^{j}")
        return FeatureGrid(nodes=nodes, depth=D)
