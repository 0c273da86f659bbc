"""Stochastic wafer perturbations applied independently to the student and teacher inputs."""
import logging
from dataclasses import dataclass

import numpy as np

from dataset import BACKGROUND, FAIL, PASS, WaferMap

logger = logging.getLogger(__name__)

MAX_DIE_NOISE_RATE = 0.3


@dataclass(frozen=True)
class AugmentPolicy:
    rotate_90s: bool = True
    flip: bool = True
    die_noise_rate: float = 0.02

    def __post_init__(self):
        if not 0.0 <= self.die_noise_rate <= MAX_DIE_NOISE_RATE:
            raise ValueError(
                f"die_noise_rate must be in [0, {MAX_DIE_NOISE_RATE}], got {self.die_noise_rate}"
            )

    @property
    def is_identity(self) -> bool:
        return not self.rotate_90s and not self.flip and self.die_noise_rate == 0.0


IDENTITY_POLICY = AugmentPolicy(rotate_90s=False, flip=False, die_noise_rate=0.0)


def augment(wafer: WaferMap, policy: AugmentPolicy, seed: int) -> WaferMap:
    """
    Rotate, then flip, then flip pass/fail dies inside the disc.

    Non-square grids only rotate by 0 or 180 degrees so the output keeps the
    input dimensions. Background dies are never rewritten.
    """
    if policy.is_identity:
        return wafer

    rng = np.random.default_rng(seed)
    grid = wafer.grid
    if policy.rotate_90s:
        if wafer.height == wafer.width:
            quarter_turns = int(rng.integers(4))
        else:
            quarter_turns = 2 * int(rng.integers(2))
        grid = np.rot90(grid, quarter_turns)
    if policy.flip:
        if rng.random() < 0.5:
            grid = grid[:, ::-1]
        if rng.random() < 0.5:
            grid = grid[::-1, :]
    grid = np.ascontiguousarray(grid)
    if policy.die_noise_rate > 0.0:
        grid = grid.copy()
        flips = (grid != BACKGROUND) & (rng.random(grid.shape) < policy.die_noise_rate)
        grid[flips] = PASS + FAIL - grid[flips]
    return wafer.with_grid(grid)
