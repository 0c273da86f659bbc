from .activation_layer import ReLU
from .base_layer import DTYPE, BaseLayer
from .conv_layer import Conv2d
from .linear_layer import Linear
from .norm_layer import BatchNorm2d
from .pooling_layer import GlobalAvgPool
from .residual_block import ResidualBlock
from .sequential import Sequential

__all__ = [
    "DTYPE",
    "BaseLayer",
    "BatchNorm2d",
    "Conv2d",
    "GlobalAvgPool",
    "Linear",
    "ReLU",
    "ResidualBlock",
    "Sequential",
]
