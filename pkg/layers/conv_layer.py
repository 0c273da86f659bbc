import logging

import torch
import torch.nn.functional as F
from torch.nn import grad as conv_grad

from .base_layer import DTYPE, BaseLayer, fan_in_uniform

logger = logging.getLogger(__name__)


class Conv2d(BaseLayer):
    """3×3 (by default) convolution with 'same'-style padding and optional stride."""

    def __init__(self, name: str, in_channels: int, out_channels: int,
                 kernel_size: int = 3, stride: int = 1):
        super().__init__(name)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = kernel_size // 2

    def init_params(self, generator):
        shape = (self.out_channels, self.in_channels, self.kernel_size, self.kernel_size)
        fan_in = self.in_channels * self.kernel_size * self.kernel_size
        return {
            self.key("weight"): fan_in_uniform(shape, fan_in, generator),
            self.key("bias"): torch.zeros(self.out_channels, dtype=DTYPE),
        }, {}

    def forward(self, params, x, train_mode):
        y = F.conv2d(x, params[self.key("weight")], params[self.key("bias")],
                     stride=self.stride, padding=self.padding)
        return y, x

    def backward(self, params, cache, dy):
        x = cache
        weight = params[self.key("weight")]
        dx = conv_grad.conv2d_input(x.shape, weight, dy, stride=self.stride, padding=self.padding)
        dw = conv_grad.conv2d_weight(x, weight.shape, dy, stride=self.stride, padding=self.padding)
        return dx, {self.key("weight"): dw, self.key("bias"): dy.sum(dim=(0, 2, 3))}
