import numpy as np
import pytest

from dataset import ClassLabel, Dataset, WaferMap, generate_synthetic_dataset
from errors import BadK, TargetTooLarge, TooFewSamples, UnlabeledInput
from resample import ResamplePlan, balance_dataset, nearest_neighbors, smote_oversample, undersample


def test_smote_zero_requested():
    out = smote_oversample([[0.0, 0.0], [1.0, 1.0]], 0, 1, seed=0)
    assert out.shape == (0, 2)


def test_smote_identical_pair_is_reproduced():
    out = smote_oversample([[2.5, -1.0], [2.5, -1.0]], 20, 1, seed=3)
    assert (out == np.array([2.5, -1.0])).all()


def test_smote_stays_on_the_segment():
    out = smote_oversample([[0.0, 0.0], [1.0, 0.0]], 100, 1, seed=0)
    assert out.shape == (100, 2)
    assert (out[:, 1] == 0.0).all()
    assert (out[:, 0] >= 0.0).all() and (out[:, 0] <= 1.0).all()


def test_smote_is_seeded():
    X = np.random.default_rng(0).normal(size=(10, 3))
    assert np.array_equal(smote_oversample(X, 15, 3, seed=4), smote_oversample(X, 15, 3, seed=4))


def test_smote_preconditions():
    with pytest.raises(TooFewSamples):
        smote_oversample([[1.0, 2.0]], 5, 1, seed=0)
    with pytest.raises(BadK):
        smote_oversample([[0.0], [1.0], [2.0]], 5, 3, seed=0)


def test_nearest_neighbors_excludes_self():
    X = np.array([[0.0], [1.0], [3.0], [7.0]])
    neighbors = nearest_neighbors(X, 1)
    assert neighbors[:, 0].tolist() == [1, 0, 1, 2]


def test_undersample_cases():
    items = list(range(10))
    assert undersample(items, 10, seed=0) == items
    one = undersample(items, 1, seed=0)
    assert len(one) == 1 and one[0] in items
    assert undersample(items, 4, seed=8) == undersample(items, 4, seed=8)
    kept = undersample(items, 6, seed=2)
    assert kept == sorted(kept)
    with pytest.raises(TargetTooLarge):
        undersample(items, 11, seed=0)


def test_balance_at_target_keeps_records(small_pool):
    balanced = balance_dataset(small_pool, ResamplePlan(target_per_class=4, seed=1))
    assert sorted(map(hash, balanced.records)) == sorted(map(hash, small_pool.records))


def test_balance_skewed_to_target():
    skewed = generate_synthetic_dataset({ClassLabel.NONE: 300, ClassLabel.DONUT: 10}, 16, 16, seed=0)
    balanced = balance_dataset(skewed, ResamplePlan(target_per_class=100, smote_k=5, seed=0))
    counts = balanced.counts_per_class
    assert counts[ClassLabel.NONE] == 100
    assert counts[ClassLabel.DONUT] == 100
    assert sum(counts.values()) == 200
    assert balanced.height == 16 and balanced.width == 16


def test_balance_synthetic_wafers_are_valid_grids():
    skewed = generate_synthetic_dataset({ClassLabel.CENTER: 4}, 16, 16, seed=2)
    balanced = balance_dataset(skewed, ResamplePlan(target_per_class=12, smote_k=3, seed=0))
    assert len(balanced) == 12
    for wafer in balanced:
        assert wafer.label is ClassLabel.CENTER
        assert set(np.unique(wafer.grid)) <= {0, 1, 2}


def test_balance_single_record_class_is_named():
    skewed = generate_synthetic_dataset({ClassLabel.NONE: 20, ClassLabel.NEAR_FULL: 1}, 16, 16, seed=0)
    with pytest.raises(TooFewSamples, match="Near-full"):
        balance_dataset(skewed, ResamplePlan(target_per_class=10, smote_k=1))


def test_balance_k_clamp():
    skewed = generate_synthetic_dataset({ClassLabel.DONUT: 3}, 16, 16, seed=0)
    with pytest.raises(BadK):
        balance_dataset(skewed, ResamplePlan(target_per_class=10, smote_k=5))
    clamped = balance_dataset(skewed, ResamplePlan(target_per_class=10, smote_k=5, allow_k_clamp=True))
    assert clamped.counts_per_class[ClassLabel.DONUT] == 10


def test_balance_requires_labels():
    with pytest.raises(UnlabeledInput):
        balance_dataset(Dataset([WaferMap(1, 1, [1])]), ResamplePlan(target_per_class=1))


def test_plan_validation():
    with pytest.raises(ValueError):
        ResamplePlan(target_per_class=0)
    with pytest.raises(BadK):
        ResamplePlan(target_per_class=5, smote_k=0)
