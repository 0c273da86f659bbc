"""
Compact residual classifier with manual forward/backward, SGD and EMA updates.

Checkpoint layout (``torch.save`` of a plain dict, loadable with
``weights_only=True``)::

    format        "waferssl-checkpoint-v1"
    model_config  dict of ModelConfig fields
    student       {"params": {name: tensor}, "buffers": {name: tensor}}
    teacher       same layout as student
    velocity      {name: tensor} SGD momentum buffers of the student
    step          global optimisation step counter
    epoch         completed epochs
    wafer_dims    [height, width] of the wafer grids used in training
"""
import hashlib
import logging
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterator, Optional, Tuple

import numpy as np
import torch

from dataset import NUM_CLASSES, NUM_STATES
from errors import ConfigInvalid, DatasetIOError, FormatError, NonFiniteGradient, ShapeMismatch
from layers import (
    DTYPE,
    BatchNorm2d,
    Conv2d,
    GlobalAvgPool,
    Linear,
    ReLU,
    ResidualBlock,
    Sequential,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "waferssl-checkpoint-v1"

ParamGrads = Dict[str, torch.Tensor]


@dataclass(frozen=True)
class ModelConfig:
    input_height: int = 32
    input_width: int = 32
    stem_channels: int = 16
    blocks: int = 2
    embed_dim: int = 64
    proj_dim: int = 32
    num_classes: int = NUM_CLASSES
    norm_momentum: float = 0.1
    norm_eps: float = 1e-5

    def __post_init__(self):
        if self.num_classes != NUM_CLASSES:
            raise ConfigInvalid(f"num_classes must be {NUM_CLASSES}, got {self.num_classes}")
        for name in ("input_height", "input_width", "stem_channels", "blocks", "embed_dim", "proj_dim"):
            if getattr(self, name) < 1:
                raise ConfigInvalid(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.norm_momentum <= 1.0:
            raise ConfigInvalid(f"norm_momentum must be in [0, 1], got {self.norm_momentum}")

    @property
    def input_dims(self) -> Tuple[int, int, int]:
        return (NUM_STATES, self.input_height, self.input_width)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})


@dataclass
class ParamSet:
    """Named float64 tensors of one network: trainable params plus running-statistic buffers."""

    params: Dict[str, torch.Tensor]
    buffers: Dict[str, torch.Tensor] = field(default_factory=dict)
    config: Optional[ModelConfig] = None

    def __getitem__(self, name: str) -> torch.Tensor:
        if name in self.params:
            return self.params[name]
        return self.buffers[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params or name in self.buffers

    def items(self) -> Iterator[Tuple[str, torch.Tensor]]:
        yield from self.params.items()
        yield from self.buffers.items()

    def copy(self) -> "ParamSet":
        return ParamSet(
            {k: v.clone() for k, v in self.params.items()},
            {k: v.clone() for k, v in self.buffers.items()},
            self.config,
        )

    def fingerprint(self) -> str:
        """sha256 over names and raw tensor bytes, in iteration order."""
        digest = hashlib.sha256()
        for name, tensor in self.items():
            digest.update(name.encode())
            digest.update(tensor.detach().contiguous().numpy().tobytes())
        return digest.hexdigest()

    def all_finite(self) -> bool:
        return all(bool(torch.isfinite(t).all()) for _, t in self.items())

    def to_state(self) -> dict:
        return {"params": dict(self.params), "buffers": dict(self.buffers)}

    @classmethod
    def from_state(cls, state: dict, config: Optional[ModelConfig] = None) -> "ParamSet":
        return cls(dict(state["params"]), dict(state.get("buffers", {})), config)


@dataclass
class BatchOutput:
    embeddings: torch.Tensor
    projections: torch.Tensor
    logits: torch.Tensor


@dataclass
class OutputGrads:
    """Gradients of a scalar loss w.r.t. BatchOutput fields; None means zero."""

    embeddings: Optional[torch.Tensor] = None
    projections: Optional[torch.Tensor] = None
    logits: Optional[torch.Tensor] = None


@dataclass
class ForwardCache:
    encoder: list
    projection: list
    classifier: object
    batch_size: int
    train_mode: bool
    batch_stats: Dict[str, Tuple[torch.Tensor, torch.Tensor, int]] = field(default_factory=dict)


class ResidualClassifier:
    """Encoder (stem, residual blocks, pooling, embedding) with projection and classification heads."""

    def __init__(self, config: ModelConfig):
        self.config = config
        channels = config.stem_channels
        eps = config.norm_eps
        encoder = [
            Conv2d("stem.conv", NUM_STATES, channels),
            BatchNorm2d("stem.norm", channels, eps),
            ReLU("stem.relu"),
            ResidualBlock("block0", channels, eps),
        ]
        for b in range(1, config.blocks):
            encoder += [
                Conv2d(f"down{b}.conv", channels, channels * 2, stride=2),
                BatchNorm2d(f"down{b}.norm", channels * 2, eps),
                ReLU(f"down{b}.relu"),
            ]
            channels *= 2
            encoder.append(ResidualBlock(f"block{b}", channels, eps))
        encoder += [
            GlobalAvgPool("pool"),
            Linear("embed.fc", channels, config.embed_dim),
            ReLU("embed.relu"),
        ]
        self.encoder = Sequential("encoder", encoder)
        self.projection = Sequential("projection", [
            Linear("projection.fc1", config.embed_dim, config.embed_dim),
            ReLU("projection.relu"),
            Linear("projection.fc2", config.embed_dim, config.proj_dim),
        ])
        self.classifier = Linear("classifier", config.embed_dim, config.num_classes)
        self.parts = (self.encoder, self.projection, self.classifier)


@lru_cache(maxsize=None)
def build_network(config: ModelConfig) -> ResidualClassifier:
    return ResidualClassifier(config)


def init_params(config: ModelConfig, seed: int) -> ParamSet:
    """Fan-in-scaled uniform weights, zero biases, unit/zero normalisation scale/shift."""
    network = build_network(config)
    generator = torch.Generator().manual_seed(int(seed))
    params, buffers = {}, {}
    for part in network.parts:
        p, b = part.init_params(generator)
        params.update(p)
        buffers.update(b)
    return ParamSet(params, buffers, config)


def _require_config(params: ParamSet) -> ModelConfig:
    if params.config is None:
        raise ShapeMismatch("ParamSet carries no ModelConfig")
    return params.config


def forward(params: ParamSet, inputs, train_mode: bool) -> Tuple[BatchOutput, ForwardCache]:
    """Run the network; train_mode selects batch statistics instead of running statistics."""
    config = _require_config(params)
    x = torch.as_tensor(np.asarray(inputs) if not torch.is_tensor(inputs) else inputs, dtype=DTYPE)
    if x.dim() != 4 or tuple(x.shape[1:]) != config.input_dims:
        raise ShapeMismatch(f"expected input B x {config.input_dims}, got {tuple(x.shape)}")

    network = build_network(config)
    tensors = {**params.params, **params.buffers}
    embeddings, enc_cache = network.encoder.forward(tensors, x, train_mode)
    projections, proj_cache = network.projection.forward(tensors, embeddings, train_mode)
    logits, cls_cache = network.classifier.forward(tensors, embeddings, train_mode)

    cache = ForwardCache(enc_cache, proj_cache, cls_cache, x.shape[0], train_mode)
    if train_mode:
        network.encoder.collect_batch_stats(enc_cache, cache.batch_stats)
    return BatchOutput(embeddings, projections, logits), cache


def backward(params: ParamSet, cache: ForwardCache, output_grads: OutputGrads) -> ParamGrads:
    """Exact gradients of sum(<output_grads, outputs>) w.r.t. every trainable parameter."""
    config = _require_config(params)
    network = build_network(config)
    tensors = {**params.params, **params.buffers}
    batch = cache.batch_size

    def _grad(value, width):
        if value is None:
            return torch.zeros(batch, width, dtype=DTYPE)
        value = torch.as_tensor(value, dtype=DTYPE)
        if tuple(value.shape) != (batch, width):
            raise ShapeMismatch(f"expected output gradient {batch} x {width}, got {tuple(value.shape)}")
        return value

    d_embed = _grad(output_grads.embeddings, config.embed_dim)
    d_proj = _grad(output_grads.projections, config.proj_dim)
    d_logits = _grad(output_grads.logits, config.num_classes)

    grads = {}
    d_from_proj, proj_grads = network.projection.backward(tensors, cache.projection, d_proj)
    d_from_cls, cls_grads = network.classifier.backward(tensors, cache.classifier, d_logits)
    _, enc_grads = network.encoder.backward(tensors, cache.encoder, d_embed + d_from_proj + d_from_cls)
    grads.update(enc_grads)
    grads.update(proj_grads)
    grads.update(cls_grads)
    return {name: grads[name] for name in params.params}


def update_running_stats(params: ParamSet, cache: ForwardCache) -> ParamSet:
    """Fold a train-mode forward's batch statistics into the running buffers."""
    config = _require_config(params)
    momentum = config.norm_momentum
    buffers = dict(params.buffers)
    for layer_name, (mean, var, count) in cache.batch_stats.items():
        unbiased = var * count / (count - 1) if count > 1 else var
        mean_key, var_key = f"{layer_name}.running_mean", f"{layer_name}.running_var"
        buffers[mean_key] = (1.0 - momentum) * buffers[mean_key] + momentum * mean
        buffers[var_key] = (1.0 - momentum) * buffers[var_key] + momentum * unbiased
    return ParamSet(params.params, buffers, params.config)


def _check_same_layout(a: Dict[str, torch.Tensor], b: Dict[str, torch.Tensor], what: str):
    if list(a) != list(b):
        missing = set(a) ^ set(b)
        raise ShapeMismatch(f"{what}: parameter names differ ({sorted(missing)[:3]} ...)")
    for name in a:
        if a[name].shape != b[name].shape:
            raise ShapeMismatch(f"{what}: {name} has shape {tuple(a[name].shape)} vs {tuple(b[name].shape)}")


def sgd_step(params: ParamSet, grads: ParamGrads, lr: float, momentum: float,
             velocity: Optional[Dict[str, torch.Tensor]] = None) -> Tuple[ParamSet, Dict[str, torch.Tensor]]:
    """v ← momentum·v + g; θ ← θ − lr·v. Buffers are carried over untouched."""
    if lr < 0:
        raise ValueError(f"lr must be nonnegative, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must be in [0, 1), got {momentum}")
    _check_same_layout(params.params, grads, "sgd_step grads")
    for name, g in grads.items():
        if not bool(torch.isfinite(g).all()):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
    if velocity is None:
        velocity = {name: torch.zeros_like(p) for name, p in params.params.items()}
    else:
        _check_same_layout(params.params, velocity, "sgd_step velocity")

    new_velocity = {name: momentum * velocity[name] + grads[name] for name in params.params}
    new_params = {name: p - lr * new_velocity[name] for name, p in params.params.items()}
    return ParamSet(new_params, params.buffers, params.config), new_velocity


def ema_update(teacher: ParamSet, student: ParamSet, alpha: float) -> ParamSet:
    """θ_teacher ← α·θ_teacher + (1 − α)·θ_student for every parameter and running statistic."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    _check_same_layout(teacher.params, student.params, "ema_update params")
    _check_same_layout(teacher.buffers, student.buffers, "ema_update buffers")

    def _average(t, s):
        return {name: alpha * t[name] + (1.0 - alpha) * s[name] for name in t}

    return ParamSet(_average(teacher.params, student.params),
                    _average(teacher.buffers, student.buffers),
                    teacher.config)


@dataclass
class Checkpoint:
    model_config: ModelConfig
    student: ParamSet
    teacher: ParamSet
    velocity: Dict[str, torch.Tensor]
    step: int
    epoch: int
    wafer_dims: Tuple[int, int]


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    path = Path(path)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "model_config": asdict(checkpoint.model_config),
        "student": checkpoint.student.to_state(),
        "teacher": checkpoint.teacher.to_state(),
        "velocity": dict(checkpoint.velocity or {}),
        "step": int(checkpoint.step),
        "epoch": int(checkpoint.epoch),
        "wafer_dims": [int(d) for d in checkpoint.wafer_dims],
    }
    try:
        torch.save(payload, path)
    except OSError as e:
        raise DatasetIOError(f"cannot write checkpoint {path}: {e}") from e
    logger.info(f"Saved checkpoint (epoch {checkpoint.epoch}, step {checkpoint.step}) to {path}")


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except OSError as e:
        raise DatasetIOError(f"cannot read checkpoint {path}: {e}") from e
    except Exception as e:
        raise FormatError(f"{path} is not a readable checkpoint: {e}") from e
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    config = ModelConfig.from_dict(payload["model_config"])
    return Checkpoint(
        model_config=config,
        student=ParamSet.from_state(payload["student"], config),
        teacher=ParamSet.from_state(payload["teacher"], config),
        velocity=dict(payload["velocity"]),
        step=payload["step"],
        epoch=payload["epoch"],
        wafer_dims=tuple(payload["wafer_dims"]),
    )
