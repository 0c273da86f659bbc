import pytest

from verify import (
    EMA_TOL,
    FAULT_SIGN_FLIP,
    MODEL_GRAD_TOL,
    SUITES,
    check_ema_law,
    check_loss_gradients,
    check_model_gradients,
    check_smote_properties,
    check_supcon_oracle,
    naive_supcon_loss,
    run_suite,
)


def test_model_gradients_train_and_eval_mode():
    for train_mode in (True, False):
        errors = check_model_gradients(train_mode=train_mode)
        assert "stem.conv.weight" in errors
        assert max(errors.values()) < MODEL_GRAD_TOL


def test_loss_gradients():
    errors = check_loss_gradients()
    assert set(errors) == {"softmax_cross_entropy", "consistency_loss",
                           "supcon_loss", "supcon_loss[anchor_in_denominator]"}
    assert max(errors.values()) < 1e-6


def test_naive_oracle_edge_cases():
    assert naive_supcon_loss([[1.0, 0.0], [0.0, 1.0]], [4, 4], 0.1) == 0.0
    assert naive_supcon_loss([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], [0, 1, 2], 0.1) == 0.0


def test_supcon_oracle_agreement():
    assert check_supcon_oracle(trials=40) < 1e-9


def test_ema_law():
    assert check_ema_law() < EMA_TOL


def test_smote_properties():
    results = check_smote_properties()
    assert results["convexity_violation"] <= 1e-12
    assert results["knn_mismatches"] == 0
    assert results["balance_spread"] == 0


@pytest.mark.parametrize("name", SUITES)
def test_every_suite_passes(name):
    result = run_suite(name)
    assert result.passed, result.detail


@pytest.mark.parametrize("name", SUITES)
def test_sign_flip_fault_is_caught(name):
    assert not run_suite(name, fault=FAULT_SIGN_FLIP).passed


def test_unknown_suite():
    with pytest.raises(ValueError):
        run_suite("speed")
