import pytest
import torch

from rotcatt.config import ModelConfig, derive_shapes
from rotcatt.encoder import ConvBlock, NestedEncoder, upsample2x


def test_conv_block_shapes():
    torch.manual_seed(0)
    assert ConvBlock(1, 16)(torch.randn(3, 1, 64, 64)).shape == (3, 16, 64, 64)
    assert ConvBlock(48, 16)(torch.randn(3, 48, 64, 64)).shape == (3, 16, 64, 64)
    assert any(p.requires_grad for p in ConvBlock(1, 4).parameters())


def test_conv_block_zero_input_is_batch_constant():
    torch.manual_seed(0)
    block = ConvBlock(2, 4)
    with torch.no_grad():
        for m in block.modules():
            if isinstance(m, torch.nn.Conv2d):
                m.bias.uniform_(-1, 1)
    out = block(torch.zeros(3, 2, 8, 8))
    assert torch.equal(out, out[:1].expand_as(out))


def test_conv_block_rejects_wrong_channels():
    with pytest.raises(ValueError, match="input channels"):
        ConvBlock(3, 4)(torch.zeros(1, 2, 8, 8))
    with pytest.raises(ValueError, match="4-axis"):
        ConvBlock(3, 4)(torch.zeros(2, 8, 8))


def test_encode_desk_shapes():
    torch.manual_seed(0)
    cfg = ModelConfig(depth=4, base_channels=16, input_height=64, input_width=64, window=3)
    grid = NestedEncoder(cfg)(torch.randn(3, 1, 64, 64))
    assert [tuple(x.shape) for x in grid.outputs] == [(3, 16, 64, 64), (3, 32, 32, 32), (3, 64, 16, 16)]
    assert grid.bottleneck.shape == (3, 128, 8, 8)
    assert grid.output(1) is grid.nodes[(1, 3)]
    assert grid.output(2) is grid.nodes[(2, 2)]
    assert grid.output(3) is grid.nodes[(3, 1)]


def test_smallest_grid():
    cfg = ModelConfig(depth=2, base_channels=2, input_height=8, input_width=8, window=3, num_heads=1)
    grid = NestedEncoder(cfg)(torch.randn(3, 1, 8, 8))
    assert set(grid.nodes) == {(1, 1), (2, 1)}


def test_first_nested_node_sees_three_c_channels():
    cfg = ModelConfig(depth=4, base_channels=16, input_height=64, input_width=64, window=3)
    enc = NestedEncoder(cfg)
    assert enc.nested_in_channels(1, 2) == 3 * 16
    # full density: X_1^3 concatenates X_1^1, X_1^2 and up(X_2^2)
    assert enc.nested_in_channels(1, 3) == 16 + 16 + 32


@pytest.mark.parametrize("depth, expected", [(2, 2), (3, 4), (4, 7)])
def test_node_count(depth, expected):
    cfg = ModelConfig(depth=depth, base_channels=2, input_height=2**depth * 2, input_width=2**depth * 2,
                      window=3, num_heads=1)
    grid = NestedEncoder(cfg)(torch.randn(3, 1, cfg.input_height, cfg.input_width))
    assert len(grid) == expected == depth * (depth + 1) // 2 - (depth - 1)
    plan = derive_shapes(cfg)
    for key, t in grid.nodes.items():
        assert tuple(t.shape) == plan.grid_nodes[key]


def test_resampling_is_exact():
    x = torch.randn(2, 3, 16, 12)
    down = torch.nn.functional.max_pool2d(x, 2)
    assert down.shape == (2, 3, 8, 6)
    assert upsample2x(down).shape == x.shape


def test_gradient_reaches_every_encoder_parameter():
    torch.manual_seed(0)
    cfg = ModelConfig(depth=4, base_channels=4, input_height=32, input_width=32, window=3, num_heads=1)
    enc = NestedEncoder(cfg)
    grid = enc(torch.randn(3, 1, 32, 32))
    loss = sum(x.square().mean() for x in grid.outputs) + grid.bottleneck.square().mean()
    loss.backward()
    for name, p in enc.named_parameters():
        assert p.grad is not None, name
        assert torch.isfinite(p.grad).all(), name
