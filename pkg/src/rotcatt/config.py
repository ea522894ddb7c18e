"""Model hyperparameters and the tensor-shape plan derived from them.

Every other module checks its outputs against a :class:`ShapePlan`, so a
bad configuration is rejected here before any tensor is allocated.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

__all__ = [
    "ConfigError",
    "ShapeError",
    "ModelConfig",
    "ShapePlan",
    "derive_shapes",
    "validate_tensor",
    "parse_config_text",
    "load_config_file",
    "REFERENCE_CONFIG",
    "DESK_CONFIG",
]


class ConfigError(ValueError):
    """Raised when a configuration violates a structural constraint."""


class ShapeError(ValueError):
    """Raised when a tensor does not have the shape the plan expects."""

    def __init__(self, message: str, expected=None, actual=None, axis=None):
        super().__init__(message)
        self.expected = expected
        self.actual = actual
        self.axis = axis


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 4
    base_channels: int = 16
    input_height: int = 64
    input_width: int = 64
    window: int = 8
    num_classes: int = 4
    transformer_layers: int = 4
    embed_dims: Optional[tuple] = None
    mlp_ratio: int = 4
    num_heads: int = 4
    alpha: float = 0.6
    epsilon: float = 1e-5
    rotatory_enabled: bool = True
    # share one single-attention parameter set across all four applications
    tie_rotatory: bool = False
    embed_dropout: float = 0.0

    def __post_init__(self):
        if self.embed_dims is None:
            dims = tuple(self.base_channels * 2 ** (i + 1) for i in range(1, self.depth))
        else:
            dims = tuple(int(d) for d in self.embed_dims)
        object.__setattr__(self, "embed_dims", dims)

    def channels(self, level: int) -> int:
        """Channel count of encoder level ``level`` (1-based, bottleneck is ``depth``)."""
        return self.base_channels * 2 ** (level - 1)

    def patch_size(self, level: int) -> int:
        return 2 ** (self.depth - level + 1)

    def validate(self) -> None:
        D, H, W = self.depth, self.input_height, self.input_width
        if D < 2:
            raise ConfigError(f"depth must be >= 2, got {D}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.transformer_layers < 0:
            raise ConfigError(f"transformer_layers must be >= 0, got {self.transformer_layers}")
        step = 2 ** (D - 1)
        if H % step or W % step:
            raise ConfigError(
                f"input_height/input_width ({H}x{W}) must be divisible by 2^(depth-1) = {step}"
            )
        # every level's spatial size must split into whole patches, i.e. H, W divisible by 2^D
        p1 = 2**D
        if (H * W) % (p1 * p1) or H % p1 or W % p1:
            raise ConfigError(
                f"input size {H}x{W} must be divisible by the level-1 patch size p_1 = 2^depth = {p1}"
            )
        if self.rotatory_enabled and self.window < 3:
            raise ConfigError(
                f"window must be >= 3 when rotatory_enabled (got {self.window}); "
                "rotatory attention needs three consecutive slices"
            )
        if len(self.embed_dims) != D - 1:
            raise ConfigError(
                f"embed_dims needs depth-1 = {D - 1} entries, got {len(self.embed_dims)}"
            )
        if self.num_heads < 1:
            raise ConfigError(f"num_heads must be >= 1, got {self.num_heads}")
        for i, d in enumerate(self.embed_dims, start=1):
            if d < 1 or d % self.num_heads:
                raise ConfigError(
                    f"embed_dims[{i - 1}] = {d} must be a positive multiple of num_heads = {self.num_heads}"
                )
        if self.mlp_ratio < 1:
            raise ConfigError(f"mlp_ratio must be >= 1, got {self.mlp_ratio}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if not 0.0 <= self.embed_dropout < 1.0:
            raise ConfigError(f"embed_dropout must lie in [0, 1), got {self.embed_dropout}")

    def replace(self, **changes) -> "ModelConfig":
        if "depth" in changes or "base_channels" in changes:
            changes.setdefault("embed_dims", None)
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["embed_dims"] = list(self.embed_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if d.get("embed_dims") is not None:
            d["embed_dims"] = tuple(d["embed_dims"])
        return cls(**d)


@dataclass(frozen=True)
class ShapePlan:
    """Exact shapes of every tensor the architecture produces for one config.

    Level tuples are indexed from 0 for level 1.
    """

    config: ModelConfig
    level_shapes: tuple  # (B, C_i, H_i, W_i) for i in 1..D-1
    bottleneck_shape: tuple  # (B, C*2^(D-1), H/2^(D-1), W/2^(D-1))
    patch_sizes: tuple
    patch_grid: tuple  # (rows, cols) of the patch grid, same at every level
    seq_len: int
    token_shapes: tuple  # (B, n, d_f^i)
    logits_shape: tuple
    grid_nodes: dict = field(default_factory=dict)  # (i, j) -> shape

    @property
    def depth(self) -> int:
        return self.config.depth

    def node_count(self) -> int:
        return len(self.grid_nodes)


def derive_shapes(config: ModelConfig) -> ShapePlan:
    config.validate()
    D, C, B = config.depth, config.base_channels, config.window
    H, W = config.input_height, config.input_width

    level_shapes, patch_sizes, token_shapes = [], [], []
    seq_lens, grids = [], []
    for i in range(1, D):
        Hi, Wi = H // 2 ** (i - 1), W // 2 ** (i - 1)
        p = config.patch_size(i)
        level_shapes.append((B, C * 2 ** (i - 1), Hi, Wi))
        patch_sizes.append(p)
        grids.append((Hi // p, Wi // p))
        seq_lens.append(Hi * Wi // (p * p))
        token_shapes.append((B, Hi * Wi // (p * p), config.embed_dims[i - 1]))
    if len(set(seq_lens)) != 1 or len(set(grids)) != 1:
        raise ConfigError(f"sequence length differs across levels: {seq_lens}")

    bottleneck = (B, C * 2 ** (D - 1), H // 2 ** (D - 1), W // 2 ** (D - 1))
    nodes = {}
    for i in range(1, D):
        for j in range(1, D - i + 1):
            nodes[(i, j)] = level_shapes[i - 1]
    nodes[(D, 1)] = bottleneck

    return ShapePlan(
        config=config,
        level_shapes=tuple(level_shapes),
        bottleneck_shape=bottleneck,
        patch_sizes=tuple(patch_sizes),
        patch_grid=grids[0],
        seq_len=seq_lens[0],
        token_shapes=tuple(token_shapes),
        logits_shape=(B, config.num_classes, H, W),
        grid_nodes=nodes,
    )


def validate_tensor(tensor: Any, expected_shape: Sequence[Optional[int]], name: str = "tensor") -> None:
    """Raise :class:`ShapeError` unless ``tensor.shape`` equals ``expected_shape``.

    ``None`` entries in ``expected_shape`` match any size.
    """
    actual = tuple(tensor.shape)
    expected = tuple(expected_shape)
    if len(actual) != len(expected):
        raise ShapeError(
            f"{name}: expected {len(expected)} axes {expected}, got {len(actual)} axes {actual}",
            expected, actual, None,
        )
    for axis, (e, a) in enumerate(zip(expected, actual)):
        if e is not None and e != a:
            raise ShapeError(
                f"{name}: shape mismatch on axis {axis}: expected {expected}, got {actual}",
                expected, actual, axis,
            )


_BOOL_WORDS = {"true": True, "yes": True, "1": True, "on": True,
               "false": False, "no": False, "0": False, "off": False}


def _coerce(raw: str, kind: str, key: str):
    try:
        if kind == "bool":
            return _BOOL_WORDS[raw.lower()]
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "ints":
            return tuple(int(x) for x in raw.replace("[", "").replace("]", "").split(",") if x.strip())
        if kind == "floats":
            return tuple(float(x) for x in raw.replace("[", "").replace("]", "").split(",") if x.strip())
        return raw
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r} (expected {kind})") from exc


MODEL_KEYS = {
    "depth": "int",
    "base_channels": "int",
    "input_height": "int",
    "input_width": "int",
    "window": "int",
    "num_classes": "int",
    "transformer_layers": "int",
    "embed_dims": "ints",
    "mlp_ratio": "int",
    "num_heads": "int",
    "alpha": "float",
    "epsilon": "float",
    "rotatory_enabled": "bool",
    "tie_rotatory": "bool",
    "embed_dropout": "float",
}


def parse_config_text(text: str, extra_keys: Optional[dict] = None) -> dict:
    """Parse ``key = value`` lines (``#`` starts a comment) into typed values.

    ``extra_keys`` maps additional accepted keys to their kind
    (``int``, ``float``, ``bool``, ``str``, ``ints``, ``floats``).
    """
    kinds = dict(MODEL_KEYS)
    kinds.update(extra_keys or {})
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _coerce(raw, kinds[key], key)
    return values


def load_config_file(path, extra_keys: Optional[dict] = None) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), extra_keys)


def model_config_from(values: dict, base: Optional[ModelConfig] = None) -> ModelConfig:
    picked = {k: v for k, v in values.items() if k in MODEL_KEYS}
    return (base or ModelConfig()).replace(**picked)


# The layout described for 256x256 inputs.
REFERENCE_CONFIG = ModelConfig(
    depth=4, base_channels=64, input_height=256, input_width=256, window=8,
    num_classes=4, transformer_layers=4,
)

# CPU-sized default used by the CLI and the acceptance runs.
DESK_CONFIG = ModelConfig()
