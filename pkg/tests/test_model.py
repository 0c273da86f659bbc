import pytest
import torch

from errors import ConfigInvalid, NonFiniteGradient, ShapeMismatch
from layers import DTYPE
from model import (
    Checkpoint,
    ModelConfig,
    OutputGrads,
    ParamSet,
    backward,
    ema_update,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
    update_running_stats,
)


def _inputs(config, batch, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand((batch,) + config.input_dims, generator=gen, dtype=DTYPE)


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        ModelConfig(num_classes=10)
    with pytest.raises(ConfigInvalid):
        ModelConfig(blocks=0)


def test_init_is_deterministic(tiny_model):
    assert init_params(tiny_model, 4).fingerprint() == init_params(tiny_model, 4).fingerprint()
    assert init_params(tiny_model, 4).fingerprint() != init_params(tiny_model, 5).fingerprint()


def test_init_statistics():
    params = init_params(ModelConfig(), seed=0)
    weight = params["block0.conv1.weight"]
    assert weight.numel() >= 1000
    fan_in = weight.shape[1] * weight.shape[2] * weight.shape[3]
    assert abs(float(weight.var()) - 2.0 / fan_in) < 0.2 * 2.0 / fan_in
    for name, tensor in params.params.items():
        if name.endswith(".bias"):
            assert (tensor == 0).all(), name


def test_forward_shapes(tiny_model):
    params = init_params(tiny_model, 0)
    out, cache = forward(params, _inputs(tiny_model, 5), train_mode=True)
    assert out.embeddings.shape == (5, 8)
    assert out.projections.shape == (5, 4)
    assert out.logits.shape == (5, 9)
    assert cache.batch_size == 5
    assert set(cache.batch_stats) == {"stem.norm", "block0.norm1", "block0.norm2"}


def test_forward_rejects_wrong_input(tiny_model):
    params = init_params(tiny_model, 0)
    with pytest.raises(ShapeMismatch):
        forward(params, torch.zeros(2, 3, 9, 8, dtype=DTYPE), train_mode=False)


def test_eval_mode_is_row_equivariant(tiny_model):
    params = init_params(tiny_model, 1)
    x = _inputs(tiny_model, 4)
    single, _ = forward(params, x[:1], train_mode=False)
    doubled, _ = forward(params, torch.cat([x[:1], x[:1]]), train_mode=False)
    torch.testing.assert_close(doubled.logits[0], doubled.logits[1], rtol=1e-12, atol=1e-12)
    torch.testing.assert_close(doubled.logits[:1], single.logits, rtol=1e-12, atol=1e-12)

    perm = torch.tensor([2, 0, 3, 1])
    out, _ = forward(params, x, train_mode=False)
    permuted, _ = forward(params, x[perm], train_mode=False)
    torch.testing.assert_close(permuted.logits, out.logits[perm], rtol=1e-12, atol=1e-12)


def test_zero_classifier_gives_zero_logits(tiny_model):
    params = init_params(tiny_model, 0)
    params.params["classifier.weight"].zero_()
    out, _ = forward(params, torch.zeros((2,) + tiny_model.input_dims, dtype=DTYPE), train_mode=False)
    assert (out.logits == 0).all()


def test_backward_is_linear(tiny_model):
    params = init_params(tiny_model, 2)
    out, cache = forward(params, _inputs(tiny_model, 3), train_mode=True)
    zero = backward(params, cache, OutputGrads())
    assert all((g == 0).all() for g in zero.values())

    gen = torch.Generator().manual_seed(3)
    grads = OutputGrads(
        embeddings=torch.randn(3, 8, generator=gen, dtype=DTYPE),
        projections=torch.randn(3, 4, generator=gen, dtype=DTYPE),
        logits=torch.randn(3, 9, generator=gen, dtype=DTYPE),
    )
    single = backward(params, cache, grads)
    double = backward(params, cache, OutputGrads(*(2 * g for g in
                                                   (grads.embeddings, grads.projections, grads.logits))))
    assert list(single) == list(params.params)
    for name in single:
        torch.testing.assert_close(double[name], 2 * single[name], rtol=1e-12, atol=1e-15)


def test_backward_matches_autograd(tiny_model):
    params = init_params(tiny_model, 6)
    x = _inputs(tiny_model, 4, seed=9)
    out, cache = forward(params, x, train_mode=True)
    g_logits = torch.randn(out.logits.shape, generator=torch.Generator().manual_seed(1), dtype=DTYPE)
    analytic = backward(params, cache, OutputGrads(logits=g_logits))

    leaves = {k: v.clone().requires_grad_(True) for k, v in params.params.items()}
    traced, _ = forward(ParamSet(leaves, params.buffers, tiny_model), x, train_mode=True)
    (traced.logits * g_logits).sum().backward()
    for name, leaf in leaves.items():
        torch.testing.assert_close(analytic[name], leaf.grad, rtol=1e-9, atol=1e-12)


def test_backward_rejects_bad_output_grad(tiny_model):
    params = init_params(tiny_model, 0)
    _, cache = forward(params, _inputs(tiny_model, 2), train_mode=True)
    with pytest.raises(ShapeMismatch):
        backward(params, cache, OutputGrads(logits=torch.zeros(3, 9, dtype=DTYPE)))


def _scalar_params(value):
    return ParamSet({"w": torch.tensor([value], dtype=DTYPE)})


def test_sgd_step_substitution():
    params, velocity = sgd_step(_scalar_params(1.0), {"w": torch.tensor([0.5], dtype=DTYPE)},
                                lr=0.1, momentum=0.0)
    assert float(params["w"]) == pytest.approx(0.95, abs=1e-15)
    assert float(velocity["w"]) == 0.5


def test_sgd_step_with_zero_lr_and_momentum():
    start = _scalar_params(1.0)
    g = {"w": torch.tensor([0.5], dtype=DTYPE)}
    unchanged, _ = sgd_step(start, g, lr=0.0, momentum=0.9)
    assert torch.equal(unchanged["w"], start["w"])
    _, v1 = sgd_step(start, g, lr=0.1, momentum=0.9)
    _, v2 = sgd_step(start, g, lr=0.1, momentum=0.9, velocity=v1)
    assert float(v2["w"]) == pytest.approx(0.9 * 0.5 + 0.5)


def test_sgd_step_rejects_nan_and_layout_changes():
    with pytest.raises(NonFiniteGradient):
        sgd_step(_scalar_params(1.0), {"w": torch.tensor([float("nan")], dtype=DTYPE)}, 0.1, 0.0)
    with pytest.raises(ShapeMismatch):
        sgd_step(_scalar_params(1.0), {"v": torch.tensor([0.0], dtype=DTYPE)}, 0.1, 0.0)


def test_ema_update_cases(tiny_model):
    teacher = init_params(tiny_model, 0)
    student = init_params(tiny_model, 1)
    assert ema_update(teacher, student, 0.0).fingerprint() == student.fingerprint()
    assert ema_update(teacher, student, 1.0).fingerprint() == teacher.fingerprint()
    scalar = ema_update(_scalar_params(2.0), _scalar_params(1.0), 0.99)
    assert float(scalar["w"]) == pytest.approx(1.99, abs=1e-15)
    with pytest.raises(ShapeMismatch):
        ema_update(_scalar_params(2.0), ParamSet({"u": torch.zeros(1, dtype=DTYPE)}), 0.5)


def test_ema_update_averages_running_statistics(tiny_model):
    teacher = init_params(tiny_model, 0)
    student = init_params(tiny_model, 0)
    student.buffers["stem.norm.running_mean"] = torch.full((4,), 2.0, dtype=DTYPE)
    averaged = ema_update(teacher, student, 0.75)
    assert torch.equal(averaged["stem.norm.running_mean"], torch.full((4,), 0.5, dtype=DTYPE))


def test_update_running_stats_uses_unbiased_variance(tiny_model):
    params = init_params(tiny_model, 0)
    x = _inputs(tiny_model, 2)
    _, cache = forward(params, x, train_mode=True)
    updated = update_running_stats(params, cache)
    mean, var, count = cache.batch_stats["stem.norm"]
    expected_var = 0.9 * 1.0 + 0.1 * var * count / (count - 1)
    torch.testing.assert_close(updated["stem.norm.running_var"], expected_var)
    torch.testing.assert_close(updated["stem.norm.running_mean"], 0.1 * mean)
    assert torch.equal(updated["stem.conv.weight"], params["stem.conv.weight"])


def test_checkpoint_round_trip(tmp_path, tiny_model):
    student = init_params(tiny_model, 0)
    teacher = init_params(tiny_model, 1)
    velocity = {name: torch.ones_like(p) for name, p in student.params.items()}
    path = tmp_path / "ckpt.pt"
    save_checkpoint(Checkpoint(tiny_model, student, teacher, velocity, 12, 3, (16, 16)), path)
    loaded = load_checkpoint(path)
    assert loaded.model_config == tiny_model
    assert loaded.student.fingerprint() == student.fingerprint()
    assert loaded.teacher.fingerprint() == teacher.fingerprint()
    assert (loaded.step, loaded.epoch, loaded.wafer_dims) == (12, 3, (16, 16))
    assert torch.equal(loaded.velocity["stem.conv.weight"], velocity["stem.conv.weight"])
