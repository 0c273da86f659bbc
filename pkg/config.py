"""
Run configuration: a flat `key = value` file, environment overrides and the
variant masking that turns one training code path into the four ablation methods.
"""
import logging
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, Mapping, Optional

from augment import AugmentPolicy
from errors import ConfigInvalid, DatasetIOError, WaferSSLError
from losses import LossConfig
from model import ModelConfig
from presets.variants import DEFAULT_VARIANT, VARIANTS
from resample import ResamplePlan
from trainer import TrainConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "WAFERSSL_"

_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


@dataclass(frozen=True)
class RunConfig:
    variant: str = DEFAULT_VARIANT
    labeled_path: Optional[str] = None
    unlabeled_path: Optional[str] = None
    val_path: Optional[str] = None
    out_dir: str = "output"
    seed: int = 0

    # model
    input_size: int = 32
    stem_channels: int = 16
    blocks: int = 2
    embed_dim: int = 64
    proj_dim: int = 32

    # training
    epochs: int = 30
    batch_labeled: int = 32
    batch_unlabeled: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    ema_alpha: float = 0.99
    eval_every: int = 1
    consistency_on_labeled: bool = True
    augment_teacher: bool = True
    prefetch: bool = True

    # losses
    temperature: float = 0.1
    consistency_weight_max: float = 1.0
    supcon_weight: float = 1.0
    classification_weight: float = 1.0
    include_anchor_in_denominator: bool = False
    rampup_steps: int = 0

    # augmentation
    rotate_90s: bool = True
    flip: bool = True
    die_noise_rate: float = 0.02

    # resampling of the labeled training set
    resample_target: Optional[int] = None
    smote_k: int = 5
    allow_k_clamp: bool = False

    @property
    def variant_flags(self) -> dict:
        return VARIANTS[self.variant]

    @property
    def uses_unlabeled(self) -> bool:
        return self.variant_flags["use_unlabeled"]

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            input_height=self.input_size,
            input_width=self.input_size,
            stem_channels=self.stem_channels,
            blocks=self.blocks,
            embed_dim=self.embed_dim,
            proj_dim=self.proj_dim,
        )

    def loss_config(self) -> LossConfig:
        """Loss weights with the variant's disabled terms forced to zero."""
        flags = self.variant_flags
        return LossConfig(
            temperature=self.temperature,
            consistency_weight_max=self.consistency_weight_max if flags["consistency"] else 0.0,
            supcon_weight=self.supcon_weight if flags["supcon"] else 0.0,
            classification_weight=self.classification_weight,
            include_anchor_in_denominator=self.include_anchor_in_denominator,
            rampup_steps=self.rampup_steps,
        )

    def augment_policy(self) -> AugmentPolicy:
        return AugmentPolicy(rotate_90s=self.rotate_90s, flip=self.flip, die_noise_rate=self.die_noise_rate)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_labeled=self.batch_labeled,
            batch_unlabeled=self.batch_unlabeled,
            lr=self.lr,
            momentum=self.momentum,
            ema_alpha=self.ema_alpha,
            seed=self.seed,
            loss=self.loss_config(),
            augment=self.augment_policy(),
            eval_every=self.eval_every,
            consistency_on_labeled=self.consistency_on_labeled,
            augment_teacher=self.augment_teacher,
            prefetch=self.prefetch,
        )

    def resample_plan(self) -> Optional[ResamplePlan]:
        if self.resample_target is None:
            return None
        return ResamplePlan(self.resample_target, self.smote_k, self.seed, self.allow_k_clamp)

    def validate(self) -> "RunConfig":
        """Build every derived config once so bad values fail before any compute."""
        if self.variant not in VARIANTS:
            raise ConfigInvalid(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        try:
            self.model_config()
            self.train_config().validate()
            self.resample_plan()
        except ConfigInvalid:
            raise
        except (WaferSSLError, ValueError) as e:
            raise ConfigInvalid(str(e)) from e
        return self

    def check_paths(self):
        """Every dataset path the variant will read must exist."""
        if self.labeled_path is None:
            raise ConfigInvalid("labeled_path is required")
        if self.val_path is None:
            raise ConfigInvalid("val_path is required")
        required = [self.labeled_path, self.val_path]
        if self.uses_unlabeled and self.unlabeled_path is not None:
            required.append(self.unlabeled_path)
        for path in required:
            if not Path(path).is_file():
                raise DatasetIOError(f"dataset file not found: {path}")


CONFIG_KEYS = {f.name: f for f in fields(RunConfig)}
_OPTIONAL_TYPES = {
    "labeled_path": str,
    "unlabeled_path": str,
    "val_path": str,
    "resample_target": int,
}


def _convert(key: str, raw: str):
    raw = raw.strip()
    if key in _OPTIONAL_TYPES:
        if raw.lower() in ("", "none"):
            return None
        kind = _OPTIONAL_TYPES[key]
    else:
        kind = type(CONFIG_KEYS[key].default)
    if kind is bool:
        if raw.lower() in _TRUE:
            return True
        if raw.lower() in _FALSE:
            return False
        raise ConfigInvalid(f"{key}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError as e:
        raise ConfigInvalid(f"{key}: cannot parse {raw!r} as {kind.__name__}") from e


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, object]:
    """Parse `key = value` lines; `#` starts a comment, blank lines are skipped."""
    values = {}
    for line_number, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigInvalid(f"{source} line {line_number}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigInvalid(f"{source} line {line_number}: unknown key {key!r}")
        if key in values:
            raise ConfigInvalid(f"{source} line {line_number}: duplicate key {key!r}")
        values[key] = _convert(key, raw)
    return values


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, object]:
    environ = os.environ if environ is None else environ
    values = {}
    for key in CONFIG_KEYS:
        name = ENV_PREFIX + key.upper()
        if name in environ:
            values[key] = _convert(key, environ[name])
    return values


def load_run_config(path=None, overrides: Optional[Mapping[str, object]] = None,
                    environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """
    Resolve a RunConfig with precedence overrides > environment > file > defaults.

    Args:
        path: optional config file
        overrides: values from command-line flags; None entries are ignored
        environ: mapping searched for WAFERSSL_<KEY> variables (os.environ by default)

    Returns:
        RunConfig: validated configuration
    """
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise DatasetIOError(f"cannot read config {path}: {e}") from e
        values.update(parse_config_text(text, str(path)))
    values.update(env_overrides(environ))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})

    unknown = set(values) - set(CONFIG_KEYS)
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {', '.join(sorted(unknown))}")
    config = replace(RunConfig(), **values).validate()
    logger.info(f"Run config: variant={config.variant} seed={config.seed} epochs={config.epochs}")
    return config
