import pytest

from config import RunConfig, env_overrides, load_run_config, parse_config_text
from errors import ConfigInvalid, DatasetIOError
from presets.variants import VARIANTS


def test_defaults():
    config = load_run_config(environ={})
    assert config == RunConfig()
    assert config.variant == "mean_teacher_supcon"
    assert config.resample_plan() is None


def test_parse_values_and_comments():
    values = parse_config_text(
        "# a run\n"
        "variant = supcon\n"
        "\n"
        "epochs = 5   # short\n"
        "lr = 0.01\n"
        "flip = no\n"
        "resample_target = none\n"
        "labeled_path = data/l.txt\n"
    )
    assert values == {"variant": "supcon", "epochs": 5, "lr": 0.01, "flip": False,
                      "resample_target": None, "labeled_path": "data/l.txt"}


@pytest.mark.parametrize("text, message", [
    ("epoch = 3\n", "unknown key"),
    ("seed = 1\nseed = 2\n", "duplicate key"),
    ("epochs: 3\n", "key = value"),
    ("epochs = three\n", "epochs"),
    ("flip = maybe\n", "boolean"),
])
def test_parse_errors(text, message):
    with pytest.raises(ConfigInvalid, match=message):
        parse_config_text(text)


def test_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 1\nepochs = 4\nlr = 0.2\n")
    environ = {"WAFERSSL_SEED": "2", "WAFERSSL_EPOCHS": "6", "WAFERSSL_LOG_LEVEL": "DEBUG"}
    config = load_run_config(path, overrides={"seed": 3, "out_dir": None}, environ=environ)
    assert config.seed == 3
    assert config.epochs == 6
    assert config.lr == 0.2
    assert config.out_dir == "output"


def test_env_overrides_only_known_keys():
    assert env_overrides({"WAFERSSL_NO_PROGRESS": "1", "WAFERSSL_FLIP": "false"}) == {"flip": False}


def test_invalid_values_fail_before_compute():
    with pytest.raises(ConfigInvalid, match="variant"):
        load_run_config(overrides={"variant": "fancy"}, environ={})
    with pytest.raises(ConfigInvalid):
        load_run_config(overrides={"ema_alpha": 2.0}, environ={})
    with pytest.raises(ConfigInvalid):
        load_run_config(overrides={"die_noise_rate": 0.9}, environ={})
    with pytest.raises(ConfigInvalid):
        load_run_config(overrides={"resample_target": 0}, environ={})
    with pytest.raises(ConfigInvalid):
        load_run_config(overrides={"temperature": 0.0}, environ={})


def test_missing_config_file(tmp_path):
    with pytest.raises(DatasetIOError):
        load_run_config(tmp_path / "missing.cfg", environ={})


@pytest.mark.parametrize("variant", sorted(VARIANTS))
def test_variant_masking(variant):
    config = RunConfig(variant=variant, consistency_weight_max=2.0, supcon_weight=0.5)
    loss = config.loss_config()
    flags = VARIANTS[variant]
    assert loss.consistency_weight_max == (2.0 if flags["consistency"] else 0.0)
    assert loss.supcon_weight == (0.5 if flags["supcon"] else 0.0)
    assert loss.classification_weight == 1.0
    assert config.uses_unlabeled == (variant in ("mean_teacher", "mean_teacher_supcon"))


def test_derived_configs():
    config = RunConfig(input_size=16, blocks=1, epochs=3, seed=9, rotate_90s=False,
                       resample_target=20, smote_k=2, allow_k_clamp=True)
    model = config.model_config()
    assert (model.input_height, model.input_width, model.blocks) == (16, 16, 1)
    train = config.train_config()
    assert (train.epochs, train.seed) == (3, 9)
    assert train.augment.rotate_90s is False
    plan = config.resample_plan()
    assert (plan.target_per_class, plan.smote_k, plan.seed, plan.allow_k_clamp) == (20, 2, 9, True)


def test_check_paths(tmp_path):
    labeled = tmp_path / "l.txt"
    labeled.write_text("waferssl-v1 0 0\n")
    with pytest.raises(ConfigInvalid):
        RunConfig().check_paths()
    with pytest.raises(ConfigInvalid):
        RunConfig(labeled_path=str(labeled)).check_paths()
    with pytest.raises(DatasetIOError):
        RunConfig(labeled_path=str(labeled), val_path=str(tmp_path / "v.txt")).check_paths()
    # unlabeled files are only required by variants that read them
    RunConfig(variant="baseline", labeled_path=str(labeled), val_path=str(labeled),
              unlabeled_path=str(tmp_path / "u.txt")).check_paths()
    with pytest.raises(DatasetIOError):
        RunConfig(variant="mean_teacher", labeled_path=str(labeled), val_path=str(labeled),
                  unlabeled_path=str(tmp_path / "u.txt")).check_paths()
