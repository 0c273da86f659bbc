from abc import ABC, abstractmethod
import logging
import math
from typing import Any, Dict, Mapping, Tuple

import torch

logger = logging.getLogger(__name__)

DTYPE = torch.float64

Tensors = Dict[str, torch.Tensor]


class BaseLayer(ABC):
    def __init__(self, name: str):
        """A named layer; parameter keys are '<name>.<suffix>'."""
        self.name = name

    def key(self, suffix: str) -> str:
        return f"{self.name}.{suffix}"

    def init_params(self, generator: torch.Generator) -> Tuple[Tensors, Tensors]:
        """Return freshly initialised (trainable params, buffers); parameter-free by default."""
        return {}, {}

    @abstractmethod
    def forward(self, params: Mapping[str, torch.Tensor], x: torch.Tensor,
                train_mode: bool) -> Tuple[torch.Tensor, Any]:
        """Compute the layer output and the cache its backward needs."""
        pass

    @abstractmethod
    def backward(self, params: Mapping[str, torch.Tensor], cache: Any,
                 dy: torch.Tensor) -> Tuple[torch.Tensor, Tensors]:
        """Return (gradient w.r.t. input, gradients w.r.t. this layer's params)."""
        pass

    def collect_batch_stats(self, cache: Any, out: Dict[str, Tuple[torch.Tensor, torch.Tensor, int]]):
        """Record (mean, biased var, element count) for layers that keep running statistics."""
        pass


def fan_in_uniform(shape, fan_in: int, generator: torch.Generator) -> torch.Tensor:
    """He-uniform draw: U(-b, b) with b = sqrt(6 / fan_in), so the variance is 2 / fan_in."""
    bound = math.sqrt(6.0 / fan_in)
    return (torch.rand(shape, generator=generator, dtype=DTYPE) * 2.0 - 1.0) * bound
