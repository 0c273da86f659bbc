import pytest

from augment import IDENTITY_POLICY
from dataset import ClassLabel, generate_synthetic_dataset, split_labeled_fraction
from losses import LossConfig
from model import ModelConfig
from trainer import TrainConfig

GRID = 16


@pytest.fixture(autouse=True)
def quiet_progress(monkeypatch):
    monkeypatch.setenv("WAFERSSL_NO_PROGRESS", "1")
    for key in ("WAFERSSL_SEED", "WAFERSSL_EPOCHS", "WAFERSSL_VARIANT", "WAFERSSL_OUT_DIR"):
        monkeypatch.delenv(key, raising=False)


@pytest.fixture
def tiny_model():
    return ModelConfig(input_height=8, input_width=8, stem_channels=4, blocks=1, embed_dim=8, proj_dim=4)


@pytest.fixture
def small_pool():
    """Four labeled wafers per class on a 16x16 grid."""
    return generate_synthetic_dataset({label: 4 for label in ClassLabel}, GRID, GRID, seed=11)


@pytest.fixture
def split_sets(small_pool):
    """(labeled, unlabeled, val) built from small_pool plus a separate held-out set."""
    labeled, unlabeled = split_labeled_fraction(small_pool, 0.5, seed=0)
    val = generate_synthetic_dataset({label: 2 for label in ClassLabel}, GRID, GRID, seed=12)
    return labeled, unlabeled, val


@pytest.fixture
def fast_train_config():
    return TrainConfig(epochs=2, batch_labeled=8, batch_unlabeled=8, lr=0.05, momentum=0.9,
                       ema_alpha=0.9, seed=3, loss=LossConfig(), prefetch=False)


@pytest.fixture
def plain_train_config():
    """No augmentation, no consistency, teacher copies the student."""
    return TrainConfig(epochs=1, batch_labeled=6, batch_unlabeled=6, ema_alpha=0.0, seed=5,
                       loss=LossConfig(consistency_weight_max=0.0), augment=IDENTITY_POLICY,
                       prefetch=False)
