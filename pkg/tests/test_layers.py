import pytest
import torch

from layers import DTYPE, BatchNorm2d, Conv2d, GlobalAvgPool, Linear, ReLU, ResidualBlock, Sequential


def _autograd_check(layer, x, train_mode=True, seed=0):
    """Compare a layer's hand-written backward with torch autograd on the same forward."""
    gen = torch.Generator().manual_seed(seed)
    params, buffers = layer.init_params(gen)
    params = {k: v.clone().requires_grad_(True) for k, v in params.items()}
    x = x.clone().requires_grad_(True)
    tensors = {**params, **buffers}
    y, cache = layer.forward(tensors, x, train_mode)
    dy = torch.randn(y.shape, generator=gen, dtype=DTYPE)
    (y * dy).sum().backward()

    with torch.no_grad():
        detached = {k: v.detach() for k, v in tensors.items()}
        y2, cache2 = layer.forward(detached, x.detach(), train_mode)
        dx, grads = layer.backward(detached, cache2, dy)
    torch.testing.assert_close(dx, x.grad, rtol=1e-10, atol=1e-12)
    assert set(grads) == set(params)
    for name, g in grads.items():
        torch.testing.assert_close(g, params[name].grad, rtol=1e-10, atol=1e-12)


def _images(*shape, seed=1):
    return torch.randn(shape, generator=torch.Generator().manual_seed(seed), dtype=DTYPE)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_backward(stride):
    _autograd_check(Conv2d("c", 3, 4, stride=stride), _images(2, 3, 6, 6))


@pytest.mark.parametrize("train_mode", [True, False])
def test_norm_backward(train_mode):
    _autograd_check(BatchNorm2d("n", 3), _images(4, 3, 5, 5), train_mode=train_mode)


def test_linear_backward():
    _autograd_check(Linear("fc", 5, 3), _images(4, 5))


def test_relu_and_pool_backward():
    _autograd_check(Sequential("s", [ReLU("r"), GlobalAvgPool("p")]), _images(3, 2, 4, 4))


def test_residual_block_backward():
    _autograd_check(ResidualBlock("b", 3), _images(2, 3, 5, 5))


def test_parameter_names_are_prefixed():
    block = ResidualBlock("block0", 2)
    params, buffers = block.init_params(torch.Generator().manual_seed(0))
    assert "block0.conv1.weight" in params
    assert "block0.norm2.bias" in params
    assert set(buffers) == {"block0.norm1.running_mean", "block0.norm1.running_var",
                            "block0.norm2.running_mean", "block0.norm2.running_var"}


def test_norm_reports_batch_statistics():
    layer = BatchNorm2d("n", 2)
    params, buffers = layer.init_params(torch.Generator())
    x = _images(3, 2, 4, 4)
    _, cache = layer.forward({**params, **buffers}, x, train_mode=True)
    stats = {}
    layer.collect_batch_stats(cache, stats)
    mean, var, count = stats["n"]
    torch.testing.assert_close(mean, x.mean(dim=(0, 2, 3)))
    torch.testing.assert_close(var, x.var(dim=(0, 2, 3), unbiased=False))
    assert count == 48


def test_norm_eval_mode_uses_running_statistics():
    layer = BatchNorm2d("n", 1)
    params, buffers = layer.init_params(torch.Generator())
    buffers["n.running_mean"] = torch.tensor([2.0], dtype=DTYPE)
    buffers["n.running_var"] = torch.tensor([4.0], dtype=DTYPE)
    x = torch.full((1, 1, 2, 2), 4.0, dtype=DTYPE)
    y, _ = layer.forward({**params, **buffers}, x, train_mode=False)
    torch.testing.assert_close(y, torch.full_like(x, 2.0 / (4.0 + 1e-5) ** 0.5))
