from typing import List

from .base_layer import BaseLayer


class Sequential(BaseLayer):
    """Chain of layers; caches and gradients are collected in order."""

    def __init__(self, name: str, layers: List[BaseLayer]):
        super().__init__(name)
        self.layers = list(layers)

    def init_params(self, generator):
        params, buffers = {}, {}
        for layer in self.layers:
            p, b = layer.init_params(generator)
            params.update(p)
            buffers.update(b)
        return params, buffers

    def forward(self, params, x, train_mode):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(params, x, train_mode)
            caches.append(cache)
        return x, caches

    def backward(self, params, cache, dy):
        grads = {}
        for layer, layer_cache in zip(reversed(self.layers), reversed(cache)):
            dy, layer_grads = layer.backward(params, layer_cache, dy)
            grads.update(layer_grads)
        return dy, grads

    def collect_batch_stats(self, cache, out):
        for layer, layer_cache in zip(self.layers, cache):
            layer.collect_batch_stats(layer_cache, out)
