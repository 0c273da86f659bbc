"""SMOTE over-sampling and random under-sampling to even out class counts."""
import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from sklearn.neighbors import NearestNeighbors

from dataset import ClassLabel, Dataset, WaferMap, decode_one_hot, encode_input
from errors import BadK, TargetTooLarge, TooFewSamples, UnlabeledInput
from utils import derive_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ResamplePlan:
    """
    Parameters
    ----------
    target_per_class : int
        Every present class ends with exactly this many records.
    smote_k : int, default=5
        Number of same-class nearest neighbours SMOTE interpolates towards.
    seed : int
    allow_k_clamp : bool, default=False
        Clamp smote_k to class_count - 1 (with a warning) instead of raising BadK.
    """

    target_per_class: int
    smote_k: int = 5
    seed: int = 0
    allow_k_clamp: bool = False

    def __post_init__(self):
        if self.target_per_class < 1:
            raise ValueError(f"target_per_class must be >= 1, got {self.target_per_class}")
        if self.smote_k < 1:
            raise BadK(f"smote_k must be >= 1, got {self.smote_k}")


def nearest_neighbors(samples: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k Euclidean nearest neighbours of every sample, excluding itself."""
    knn = NearestNeighbors(n_neighbors=k, algorithm="brute", metric="euclidean")
    knn.fit(samples)
    # no query argument: sklearn leaves each indexed point out of its own neighbourhood
    return knn.kneighbors(return_distance=False)


def smote_oversample(class_samples, n_synthetic: int, k: int, seed: int) -> np.ndarray:
    """
    Generate n_synthetic points x_i + λ(x_nn − x_i), λ ~ U[0, 1), with x_nn
    drawn from the k nearest neighbours of a uniformly chosen x_i.

    Returns:
        array of shape (n_synthetic, n_features)
    """
    X = np.asarray(class_samples, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("class_samples must be a sequence of equal-length vectors")
    n = X.shape[0]
    if n < 2:
        raise TooFewSamples(f"SMOTE needs at least 2 samples, got {n}")
    if not 1 <= k <= n - 1:
        raise BadK(f"k must be in [1, {n - 1}] for {n} samples, got {k}")
    if n_synthetic < 0:
        raise ValueError(f"n_synthetic must be nonnegative, got {n_synthetic}")
    if n_synthetic == 0:
        return np.zeros((0, X.shape[1]), dtype=np.float64)

    neighbors = nearest_neighbors(X, k)
    base, partner, gap = smote_draws(neighbors, n_synthetic, seed)
    return X[base] + gap[:, None] * (X[partner] - X[base])


def smote_draws(neighbors: np.ndarray, n_synthetic: int, seed: int):
    """Random (base index, partner index, interpolation gap) triples for SMOTE."""
    n, k = neighbors.shape
    rng = np.random.default_rng(seed)
    base = rng.integers(n, size=n_synthetic)
    partner = neighbors[base, rng.integers(k, size=n_synthetic)]
    gap = rng.random(n_synthetic)
    return base, partner, gap


def undersample(class_samples: Sequence, target: int, seed: int) -> List:
    """Uniform subset of size `target` without replacement, keeping input order."""
    n = len(class_samples)
    if target > n:
        raise TargetTooLarge(f"cannot keep {target} of {n} samples")
    if target < 0:
        raise ValueError(f"target must be nonnegative, got {target}")
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(n, size=target, replace=False))
    return [class_samples[i] for i in keep]


def balance_dataset(dataset: Dataset, plan: ResamplePlan) -> Dataset:
    """
    Bring every present class to plan.target_per_class records.

    Minority classes get SMOTE samples drawn in the flattened one-hot space and
    snapped back to die states by per-die argmax; majority classes are
    under-sampled. Classes absent from the input stay absent.
    """
    if not dataset.is_fully_labeled():
        raise UnlabeledInput("balance_dataset requires every record to be labeled")

    height, width = dataset.height, dataset.width
    records = []
    for label, members in dataset.by_class().items():
        count = len(members)
        class_seed = derive_seed(plan.seed, int(label))
        if count == 0:
            logger.warning(f"Class {label.display_name} has no records; leaving it empty")
            continue
        if count == plan.target_per_class:
            records.extend(members)
        elif count > plan.target_per_class:
            records.extend(undersample(members, plan.target_per_class, class_seed))
        else:
            records.extend(members)
            records.extend(_synthesize(label, members, plan, height, width, class_seed))

    balanced = Dataset(records, height, width)
    logger.info(f"Balanced {len(dataset)} records into {len(balanced)} "
                f"({plan.target_per_class} per present class)")
    return balanced


def _synthesize(label: ClassLabel, members: List[WaferMap], plan: ResamplePlan,
                height: int, width: int, seed: int) -> List[WaferMap]:
    count = len(members)
    if count < 2:
        raise TooFewSamples(
            f"class {label.display_name} has {count} record(s); SMOTE needs at least 2"
        )
    k = plan.smote_k
    if k > count - 1:
        if not plan.allow_k_clamp:
            raise BadK(
                f"class {label.display_name} has {count} records; smote_k={k} needs at least {k + 1}"
            )
        logger.warning(f"Clamping smote_k from {k} to {count - 1} for class {label.display_name}")
        k = count - 1

    vectors = np.stack([encode_input(w, height, width).ravel() for w in members])
    synthetic = smote_oversample(vectors, plan.target_per_class - count, k, seed)
    logger.info(f"SMOTE: {count} -> {plan.target_per_class} for class {label.display_name}")
    return [
        WaferMap(height, width, decode_one_hot(v.reshape(3, height, width)), label)
        for v in synthetic
    ]
