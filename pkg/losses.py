"""Classification, consistency and supervised contrastive losses with exact gradients."""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import torch

from dataset import NUM_CLASSES
from errors import BadLabel, BatchTooSmall, NonFinite, ShapeMismatch, ZeroNorm
from layers import DTYPE

logger = logging.getLogger(__name__)

ZERO_NORM_EPS = 1e-12
RAMPUP_SHARPNESS = 5.0


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.1
    consistency_weight_max: float = 1.0
    supcon_weight: float = 1.0
    classification_weight: float = 1.0
    include_anchor_in_denominator: bool = False
    rampup_steps: int = 0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        for name in ("consistency_weight_max", "supcon_weight", "classification_weight", "rampup_steps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")


@dataclass(frozen=True)
class LossParts:
    classification: float
    consistency: float
    supcontrast: float


@dataclass(frozen=True)
class LossBreakdown:
    classification: float
    consistency: float
    supcontrast: float
    total: float
    consistency_weight: float = 1.0


def _as_tensor(values) -> torch.Tensor:
    return torch.as_tensor(values, dtype=DTYPE)


def _as_labels(labels, batch: int) -> torch.Tensor:
    labels = torch.as_tensor([int(v) for v in labels], dtype=torch.long)
    if labels.shape != (batch,):
        raise ShapeMismatch(f"expected {batch} labels, got {tuple(labels.shape)}")
    if batch and (labels.min() < 0 or labels.max() >= NUM_CLASSES):
        raise BadLabel(f"labels must be in 0..{NUM_CLASSES - 1}")
    return labels


def softmax_cross_entropy(logits, labels) -> Tuple[float, torch.Tensor]:
    """Batch-mean −log softmax(logits)[label]; gradient (softmax − onehot) / B."""
    logits = _as_tensor(logits)
    batch = logits.shape[0]
    labels = _as_labels(labels, batch)
    if batch == 0:
        return 0.0, torch.zeros_like(logits)
    log_probs = torch.log_softmax(logits, dim=1)
    loss = -log_probs[torch.arange(batch), labels].mean()
    grad = torch.exp(log_probs)
    grad[torch.arange(batch), labels] -= 1.0
    return float(loss), grad / batch


def consistency_loss(student_logits, teacher_logits) -> Tuple[float, torch.Tensor]:
    """
    Mean squared difference of the two softmax outputs over batch and classes.

    The teacher side is a constant; only the student logits receive a gradient.
    """
    student_logits = _as_tensor(student_logits)
    teacher_logits = _as_tensor(teacher_logits)
    if student_logits.shape != teacher_logits.shape:
        raise ShapeMismatch(
            f"student {tuple(student_logits.shape)} vs teacher {tuple(teacher_logits.shape)}"
        )
    if student_logits.numel() == 0:
        return 0.0, torch.zeros_like(student_logits)
    p_student = torch.softmax(student_logits, dim=1)
    p_teacher = torch.softmax(teacher_logits, dim=1)
    diff = p_student - p_teacher
    loss = (diff ** 2).mean()
    d_prob = 2.0 * diff / diff.numel()
    # softmax Jacobian-vector product: p ⊙ (g − <g, p>)
    grad = p_student * (d_prob - (d_prob * p_student).sum(dim=1, keepdim=True))
    return float(loss), grad


def l2_normalize(vectors) -> torch.Tensor:
    vectors = _as_tensor(vectors)
    norms = torch.linalg.vector_norm(vectors, dim=1, keepdim=True)
    if bool((norms < ZERO_NORM_EPS).any()):
        raise ZeroNorm("cannot normalise a row with (near) zero norm")
    return vectors / norms


def build_mask(labels: Optional[Sequence[int]] = None, batch_size: Optional[int] = None) -> torch.Tensor:
    """Label-equality matrix, or the identity when no labels are given."""
    if labels is None:
        if batch_size is None:
            raise ValueError("batch_size is required when labels are absent")
        return torch.eye(batch_size, dtype=DTYPE)
    labels = torch.as_tensor([int(v) for v in labels], dtype=torch.long)
    return (labels[:, None] == labels[None, :]).to(DTYPE)


def supcon_loss(projections, labels, config: LossConfig) -> Tuple[float, torch.Tensor]:
    """
    Supervised contrastive loss over l2-normalised projections.

    For anchor i with positives P(i) (same label, j ≠ i) the term is
    −1/|P(i)| Σ_p log softmax_{A(i)}(f̂_i·f̂_a / τ)[p]. A(i) excludes i unless
    config.include_anchor_in_denominator. Anchors without positives
    contribute nothing and are left out of the mean over anchors.

    Returns:
        (loss, gradient w.r.t. the raw projections)
    """
    raw = _as_tensor(projections)
    batch = raw.shape[0]
    if batch < 2:
        raise BatchTooSmall(f"supcon_loss needs at least 2 samples, got {batch}")
    labels = _as_labels(labels, batch)

    z = l2_normalize(raw)
    eye = torch.eye(batch, dtype=torch.bool)
    positives = build_mask(labels).bool() & ~eye
    n_pos = positives.sum(dim=1)
    valid = n_pos > 0
    n_valid = int(valid.sum())
    if n_valid == 0:
        return 0.0, torch.zeros_like(raw)

    sim = (z @ z.T) / config.temperature
    denominator_mask = torch.ones_like(eye) if config.include_anchor_in_denominator else ~eye
    masked = sim.masked_fill(~denominator_mask, -math.inf)
    log_prob = sim - torch.logsumexp(masked, dim=1, keepdim=True)

    pos_weight = positives.to(DTYPE) / n_pos.clamp(min=1)[:, None].to(DTYPE)
    per_anchor = -(pos_weight * log_prob).sum(dim=1)
    loss = per_anchor[valid].sum() / n_valid

    # dL/dsim_ij = (valid_i / V) · (softmax_{A(i)}(sim_i)_j − [j ∈ P(i)] / |P(i)|)
    anchor_scale = valid.to(DTYPE)[:, None] / n_valid
    d_sim = anchor_scale * (torch.softmax(masked, dim=1) - pos_weight)
    d_z = (d_sim + d_sim.T) @ z / config.temperature

    # chain through z = raw / ||raw||
    norms = torch.linalg.vector_norm(raw, dim=1, keepdim=True)
    d_raw = (d_z - z * (z * d_z).sum(dim=1, keepdim=True)) / norms
    return float(loss), d_raw


def consistency_ramp(step: int, rampup_steps: int) -> float:
    """exp(−5(1 − min(step / rampup_steps, 1))²), or 1 when ramp-up is off."""
    if rampup_steps <= 0:
        return 1.0
    progress = min(step / rampup_steps, 1.0)
    return math.exp(-RAMPUP_SHARPNESS * (1.0 - progress) ** 2)


def total_loss(parts: LossParts, config: LossConfig, step: int) -> LossBreakdown:
    values = (parts.classification, parts.consistency, parts.supcontrast)
    if not all(math.isfinite(v) for v in values):
        raise NonFinite(f"non-finite loss term in {values}")
    consistency_weight = config.consistency_weight_max * consistency_ramp(step, config.rampup_steps)
    total = (config.classification_weight * parts.classification
             + consistency_weight * parts.consistency
             + config.supcon_weight * parts.supcontrast)
    return LossBreakdown(parts.classification, parts.consistency, parts.supcontrast,
                         total, consistency_weight)
