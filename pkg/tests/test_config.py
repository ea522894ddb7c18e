import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from rotcatt.config import (
    DESK_CONFIG,
    REFERENCE_CONFIG,
    ConfigError,
    ModelConfig,
    ShapeError,
    derive_shapes,
    parse_config_text,
    validate_tensor,
)


def test_reference_patch_sizes_and_sequence_length():
    plan = derive_shapes(REFERENCE_CONFIG.replace(base_channels=64))
    assert plan.patch_sizes == (16, 8, 4)
    assert plan.seq_len == 256
    # 256*256/16^2 = 128*128/8^2 = 64*64/4^2
    for (B, C, H, W), p in zip(plan.level_shapes, plan.patch_sizes):
        assert H * W // p**2 == 256


def test_minimal_config():
    cfg = ModelConfig(depth=2, base_channels=1, input_height=8, input_width=8, window=3, num_heads=1)
    plan = derive_shapes(cfg)
    assert plan.patch_sizes == (4,)
    assert plan.seq_len == 4
    assert plan.level_shapes[0] == (3, 1, 8, 8)


def test_desk_level_three():
    cfg = ModelConfig(depth=4, base_channels=16, input_height=64, input_width=64, window=3)
    plan = derive_shapes(cfg)
    assert plan.patch_sizes == (16, 8, 4)
    assert plan.seq_len == 16
    assert plan.level_shapes[2] == (3, 64, 16, 16)


def test_bottleneck_continues_doubling():
    plan = derive_shapes(REFERENCE_CONFIG.replace(window=3))
    assert plan.bottleneck_shape == (3, 512, 32, 32)
    validate_tensor(torch.empty(3, 512, 32, 32), plan.bottleneck_shape)


def test_default_embed_dims():
    assert REFERENCE_CONFIG.embed_dims == (256, 512, 1024)
    assert DESK_CONFIG.embed_dims == (64, 128, 256)
    assert DESK_CONFIG.transformer_layers == 4
    assert DESK_CONFIG.num_heads == 4 and DESK_CONFIG.mlp_ratio == 4
    assert DESK_CONFIG.alpha == 0.6


def test_validate_tensor():
    plan = derive_shapes(REFERENCE_CONFIG.replace(window=3))
    validate_tensor(torch.empty(3, 64, 256, 256), plan.level_shapes[0])
    with pytest.raises(ShapeError, match="axis 2") as exc:
        validate_tensor(torch.empty(3, 64, 128, 256), plan.level_shapes[0])
    assert exc.value.axis == 2
    assert exc.value.expected == (3, 64, 256, 256)
    assert exc.value.actual == (3, 64, 128, 256)
    with pytest.raises(ShapeError, match="axes"):
        validate_tensor(torch.empty(3, 64), plan.level_shapes[0])


@pytest.mark.parametrize(
    "changes, fragment",
    [
        ({"depth": 1}, "depth"),
        ({"input_height": 60}, "divisible"),
        ({"input_height": 72}, "patch size"),
        ({"window": 2}, "three consecutive"),
        ({"num_heads": 3}, "num_heads"),
        ({"alpha": 1.5}, "alpha"),
        ({"embed_dims": (64, 128)}, "embed_dims"),
    ],
)
def test_invalid_configs_name_the_constraint(changes, fragment):
    with pytest.raises(ConfigError, match=fragment):
        derive_shapes(DESK_CONFIG.replace(**changes))


def test_small_window_allowed_without_rotatory():
    plan = derive_shapes(DESK_CONFIG.replace(window=2, rotatory_enabled=False))
    assert plan.level_shapes[0][0] == 2


configs = st.builds(
    lambda D, k, C, B, heads: ModelConfig(
        depth=D, base_channels=C, input_height=2**D * k, input_width=2**D * k,
        window=B, num_heads=heads,
    ),
    D=st.integers(2, 5), k=st.integers(1, 4), C=st.sampled_from([1, 2, 4, 8]),
    B=st.integers(3, 9), heads=st.sampled_from([1, 2, 4]),
)


@given(configs)
@settings(max_examples=60, deadline=None)
def test_plan_is_pure_and_sequence_length_uniform(cfg):
    a, b = derive_shapes(cfg), derive_shapes(cfg)
    assert a == b
    lengths = [H * W // p**2 for (_, _, H, W), p in zip(a.level_shapes, a.patch_sizes)]
    assert len(set(lengths)) == 1 and lengths[0] == a.seq_len
    for i, p in enumerate(a.patch_sizes, start=1):
        assert p == 2 ** (cfg.depth - i + 1)
    assert a.node_count() == cfg.depth * (cfg.depth + 1) // 2 - (cfg.depth - 1)


def test_config_file_parsing():
    text = """
    # desk run
    depth = 3
    base_channels = 8
    input_height = 32   # pixels
    input_width = 32
    embed_dims = 32, 64
    rotatory_enabled = false
    alpha = 0.5
    """
    values = parse_config_text(text)
    assert values == {"depth": 3, "base_channels": 8, "input_height": 32, "input_width": 32,
                      "embed_dims": (32, 64), "rotatory_enabled": False, "alpha": 0.5}
    cfg = ModelConfig().replace(**values)
    assert derive_shapes(cfg).patch_sizes == (8, 4)


@pytest.mark.parametrize("text", ["nonsense", "unknown_key = 3", "depth = four", "rotatory_enabled = maybe"])
def test_config_file_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)
