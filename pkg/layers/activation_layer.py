from .base_layer import BaseLayer


class ReLU(BaseLayer):
    def forward(self, params, x, train_mode):
        mask = x > 0
        return x * mask, mask

    def backward(self, params, cache, dy):
        return dy * cache, {}
