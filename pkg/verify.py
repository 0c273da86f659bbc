"""Self-checks behind `main.py verify`: gradients, SupCon oracle, EMA law, SMOTE properties."""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch

from dataset import ClassLabel, generate_synthetic_dataset
from layers import DTYPE
from losses import LossConfig, consistency_loss, softmax_cross_entropy, supcon_loss
from model import ModelConfig, OutputGrads, ParamSet, backward, ema_update, forward, init_params
from resample import ResamplePlan, balance_dataset, nearest_neighbors, smote_draws, smote_oversample

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
MODEL_GRAD_TOL = 1e-4
LOSS_GRAD_TOL = 1e-6
SUPCON_ORACLE_TOL = 1e-9
EMA_TOL = 1e-12
CONVEXITY_TOL = 1e-12
MODEL_GRAD_FLOOR = 1e-4
LOSS_GRAD_FLOOR = 1e-8

FAULT_SIGN_FLIP = "sign-flip"

TINY_MODEL = ModelConfig(input_height=8, input_width=8, stem_channels=4, blocks=1,
                         embed_dim=8, proj_dim=4)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    worst_error: float
    tolerance: float
    detail: str = ""


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = LOSS_GRAD_FLOOR) -> float:
    """max |a − n| / max(max |a|, max |n|, floor)."""
    analytic = torch.as_tensor(analytic, dtype=DTYPE)
    numeric = torch.as_tensor(numeric, dtype=DTYPE)
    if analytic.numel() == 0:
        return 0.0
    scale = max(float(analytic.abs().max()), float(numeric.abs().max()), floor)
    return float((analytic - numeric).abs().max()) / scale


def numeric_gradient(fn: Callable[[torch.Tensor], float], x: torch.Tensor, step: float = FD_STEP) -> torch.Tensor:
    """Central differences of a scalar function of one tensor."""
    x = x.clone()
    grad = torch.zeros_like(x)
    flat, gflat = x.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        original = float(flat[i])
        flat[i] = original + step
        plus = fn(x)
        flat[i] = original - step
        minus = fn(x)
        flat[i] = original
        gflat[i] = (plus - minus) / (2 * step)
    return grad


def _relu_masks(cache) -> List[torch.Tensor]:
    """Every boolean tensor in a forward cache; these are the rectifier masks."""
    if torch.is_tensor(cache):
        return [cache] if cache.dtype == torch.bool else []
    if isinstance(cache, (list, tuple)):
        return [m for item in cache for m in _relu_masks(item)]
    if hasattr(cache, "__dict__"):
        return [m for item in vars(cache).values() for m in _relu_masks(item)]
    return []


def check_model_gradients(config: ModelConfig = TINY_MODEL, batch: int = 3, seed: int = 0,
                          train_mode: bool = True, fault: Optional[str] = None) -> Dict[str, float]:
    """
    Compare analytic parameter gradients against central differences.

    The scalar checked is Σ <g, output> over embeddings, projections and
    logits with fixed random g. Coordinates whose perturbation flips a
    rectifier mask are skipped, since the difference quotient straddles a kink.

    Returns:
        {parameter name: relative error}
    """
    gen = torch.Generator().manual_seed(seed)
    params = init_params(config, seed)
    x = torch.randn((batch,) + config.input_dims, generator=gen, dtype=DTYPE)
    g_embed = torch.randn(batch, config.embed_dim, generator=gen, dtype=DTYPE)
    g_proj = torch.randn(batch, config.proj_dim, generator=gen, dtype=DTYPE)
    g_logits = torch.randn(batch, config.num_classes, generator=gen, dtype=DTYPE)

    def objective(p: ParamSet):
        out, cache = forward(p, x, train_mode)
        value = float((g_embed * out.embeddings).sum() + (g_proj * out.projections).sum()
                      + (g_logits * out.logits).sum())
        return value, _relu_masks(cache)

    _, base_cache = forward(params, x, train_mode)
    base_masks = _relu_masks(base_cache)
    analytic = backward(params, base_cache, OutputGrads(g_embed, g_proj, g_logits))

    errors = {}
    for name in params.params:
        nudged = params.copy()
        flat = nudged.params[name].view(-1)
        numeric = torch.zeros(flat.numel(), dtype=DTYPE)
        keep = torch.ones(flat.numel(), dtype=torch.bool)
        for i in range(flat.numel()):
            original = float(flat[i])
            flat[i] = original + FD_STEP
            plus, plus_masks = objective(nudged)
            flat[i] = original - FD_STEP
            minus, minus_masks = objective(nudged)
            flat[i] = original
            straddles = any(not torch.equal(a, b) or not torch.equal(a, c)
                            for a, b, c in zip(base_masks, plus_masks, minus_masks))
            keep[i] = not straddles
            numeric[i] = (plus - minus) / (2 * FD_STEP)
        grad = analytic[name].reshape(-1)
        if fault == FAULT_SIGN_FLIP:
            grad = -grad
        errors[name] = relative_error(grad[keep], numeric[keep], MODEL_GRAD_FLOOR)
    return errors


def check_loss_gradients(seed: int = 0, fault: Optional[str] = None) -> Dict[str, float]:
    """Finite-difference checks of each loss gradient in isolation."""
    gen = torch.Generator().manual_seed(seed)
    sign = -1.0 if fault == FAULT_SIGN_FLIP else 1.0
    logits = torch.randn(4, 9, generator=gen, dtype=DTYPE)
    other = torch.randn(4, 9, generator=gen, dtype=DTYPE)
    labels = [0, 3, 3, 8]
    errors = {}

    _, grad = softmax_cross_entropy(logits, labels)
    numeric = numeric_gradient(lambda z: softmax_cross_entropy(z, labels)[0], logits)
    errors["softmax_cross_entropy"] = relative_error(sign * grad, numeric)

    _, grad = consistency_loss(logits, other)
    numeric = numeric_gradient(lambda z: consistency_loss(z, other)[0], logits)
    errors["consistency_loss"] = relative_error(sign * grad, numeric)

    projections = torch.randn(6, 5, generator=gen, dtype=DTYPE)
    sup_labels = [0, 0, 0, 1, 1, 2]
    for include_anchor in (False, True):
        config = LossConfig(temperature=0.1, include_anchor_in_denominator=include_anchor)
        _, grad = supcon_loss(projections, sup_labels, config)
        numeric = numeric_gradient(lambda f: supcon_loss(f, sup_labels, config)[0], projections)
        key = "supcon_loss[anchor_in_denominator]" if include_anchor else "supcon_loss"
        errors[key] = relative_error(sign * grad, numeric)
    return errors


def naive_supcon_loss(projections, labels: Sequence[int], temperature: float,
                      include_anchor_in_denominator: bool = False) -> float:
    """Literal double-loop transcription of the supervised contrastive loss."""
    rows = [[float(v) for v in row] for row in np.asarray(projections, dtype=np.float64)]
    normed = []
    for row in rows:
        norm = math.sqrt(sum(v * v for v in row))
        normed.append([v / norm for v in row])

    def dot(a, b):
        return sum(x * y for x, y in zip(a, b))

    total, anchors = 0.0, 0
    n = len(normed)
    for i in range(n):
        positives = [p for p in range(n) if p != i and labels[p] == labels[i]]
        if not positives:
            continue
        contrast = [a for a in range(n) if include_anchor_in_denominator or a != i]
        denominator = sum(math.exp(dot(normed[i], normed[a]) / temperature) for a in contrast)
        inner = 0.0
        for p in positives:
            inner += math.log(math.exp(dot(normed[i], normed[p]) / temperature) / denominator)
        total += -inner / len(positives)
        anchors += 1
    return total / anchors if anchors else 0.0


def check_supcon_oracle(trials: int = 100, seed: int = 0, fault: Optional[str] = None) -> float:
    """Worst absolute gap between supcon_loss and the naive transcription over random batches."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    cases = []
    for t in range(trials):
        batch = int(rng.integers(2, 17))
        dim = int(rng.integers(1, 9))
        pattern = t % 4
        if pattern == 0:
            labels = list(range(batch)) if batch <= 9 else list(rng.integers(9, size=batch))
        elif pattern == 1:
            labels = list(rng.integers(2, size=batch))
        else:
            labels = list(rng.integers(9, size=batch))
        cases.append((rng.normal(size=(batch, dim)), labels, float(rng.uniform(0.05, 1.0)), bool(t % 2)))
    # edge cases: all labels distinct, and a same-label pair
    cases.append((rng.normal(size=(5, 3)), [0, 1, 2, 3, 4], 0.1, False))
    cases.append((rng.normal(size=(2, 4)), [6, 6], 0.1, False))

    for projections, labels, temperature, include_anchor in cases:
        config = LossConfig(temperature=temperature, include_anchor_in_denominator=include_anchor)
        value, _ = supcon_loss(projections, labels, config)
        if fault == FAULT_SIGN_FLIP:
            value = -value + 1.0
        reference = naive_supcon_loss(projections, labels, temperature, include_anchor)
        worst = max(worst, abs(value - reference))
    return worst


def check_ema_law(alpha: float = 0.99, steps=(1, 10, 100), seed: int = 0,
                  fault: Optional[str] = None) -> float:
    """|θ_t − (θ_s + α^t(θ_0 − θ_s))| with a frozen student, worst over all elements and t."""
    teacher0 = init_params(TINY_MODEL, seed)
    student = init_params(TINY_MODEL, seed + 1)
    effective_alpha = 1.0 - alpha if fault == FAULT_SIGN_FLIP else alpha
    worst = 0.0
    for t in steps:
        teacher = teacher0
        for _ in range(t):
            teacher = ema_update(teacher, student, effective_alpha)
        for name, theta in teacher.items():
            expected = student[name] + alpha ** t * (teacher0[name] - student[name])
            worst = max(worst, float((theta - expected).abs().max()))
    return worst


def check_smote_properties(seed: int = 0, fault: Optional[str] = None) -> Dict[str, float]:
    """Convexity of synthetic points, k-NN agreement with brute force, uniform balancing."""
    rng = np.random.default_rng(seed)
    results = {}

    # convexity: 1000 points from 2-D clusters
    worst_violation = 0.0
    for cluster in range(10):
        X = rng.normal(loc=rng.uniform(-10, 10, size=2), scale=rng.uniform(0.5, 2.0), size=(20, 2))
        cluster_seed = seed * 100 + cluster
        points = smote_oversample(X, 100, 5, cluster_seed)
        base, partner, _ = smote_draws(nearest_neighbors(X, 5), 100, cluster_seed)
        lo = np.minimum(X[base], X[partner])
        hi = np.maximum(X[base], X[partner])
        if fault == FAULT_SIGN_FLIP:
            points = 2 * X[base] - points
        violation = np.maximum(lo - points, points - hi).max()
        worst_violation = max(worst_violation, float(violation))
    results["convexity_violation"] = worst_violation

    # k-NN agreement on 50 random inputs
    mismatches = 0
    for _ in range(50):
        n = int(rng.integers(2, 65))
        k = int(rng.integers(1, min(5, n - 1) + 1))
        X = rng.normal(size=(n, int(rng.integers(1, 9))))
        fast = nearest_neighbors(X, k)
        d = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
        np.fill_diagonal(d, np.inf)
        brute = np.argsort(d, axis=1, kind="stable")[:, :k]
        mismatches += sum(set(fast[i]) != set(brute[i]) for i in range(n))
    results["knn_mismatches"] = float(mismatches)

    # balancing to a uniform target
    skewed = generate_synthetic_dataset(
        {ClassLabel.NONE: 30, ClassLabel.DONUT: 6, ClassLabel.LOC: 3}, 16, 16, seed)
    balanced = balance_dataset(skewed, ResamplePlan(target_per_class=10, smote_k=2, seed=seed))
    present = [c for c in balanced.counts_per_class.values() if c]
    results["balance_spread"] = float(max(present) - min(present)) + abs(present[0] - 10)
    return results


SUITES = ("gradients", "supcon", "ema", "smote")


def run_suite(name: str, fault: Optional[str] = None) -> SuiteResult:
    if name == "gradients":
        model_errors = check_model_gradients(train_mode=True, fault=fault)
        model_errors.update({f"{k}[eval]": v for k, v in
                             check_model_gradients(train_mode=False, fault=fault).items()})
        loss_errors = check_loss_gradients(fault=fault)
        worst_model = max(model_errors.values())
        worst_loss = max(loss_errors.values())
        passed = worst_model < MODEL_GRAD_TOL and worst_loss < LOSS_GRAD_TOL
        return SuiteResult(name, passed, worst_model, MODEL_GRAD_TOL,
                           f"model {worst_model:.3e} (< {MODEL_GRAD_TOL:g}), "
                           f"losses {worst_loss:.3e} (< {LOSS_GRAD_TOL:g})")
    if name == "supcon":
        worst = check_supcon_oracle(fault=fault)
        return SuiteResult(name, worst < SUPCON_ORACLE_TOL, worst, SUPCON_ORACLE_TOL,
                           "vectorised vs double-loop oracle, 102 batches")
    if name == "ema":
        worst = check_ema_law(fault=fault)
        return SuiteResult(name, worst < EMA_TOL, worst, EMA_TOL, "frozen student, t in {1, 10, 100}")
    if name == "smote":
        r = check_smote_properties(fault=fault)
        passed = (r["convexity_violation"] <= CONVEXITY_TOL and r["knn_mismatches"] == 0
                  and r["balance_spread"] == 0)
        return SuiteResult(name, passed, r["convexity_violation"], CONVEXITY_TOL,
                           f"knn mismatches {int(r['knn_mismatches'])}, balance spread {r['balance_spread']:g}")
    raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
