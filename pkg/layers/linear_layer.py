import logging

import torch

from .base_layer import DTYPE, BaseLayer, fan_in_uniform

logger = logging.getLogger(__name__)


class Linear(BaseLayer):
    def __init__(self, name: str, in_features: int, out_features: int):
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features

    def init_params(self, generator):
        return {
            self.key("weight"): fan_in_uniform((self.out_features, self.in_features),
                                               self.in_features, generator),
            self.key("bias"): torch.zeros(self.out_features, dtype=DTYPE),
        }, {}

    def forward(self, params, x, train_mode):
        return x @ params[self.key("weight")].T + params[self.key("bias")], x

    def backward(self, params, cache, dy):
        x = cache
        dx = dy @ params[self.key("weight")]
        return dx, {self.key("weight"): dy.T @ x, self.key("bias"): dy.sum(dim=0)}
