from .activation_layer import ReLU
from .base_layer import BaseLayer
from .conv_layer import Conv2d
from .norm_layer import BatchNorm2d
from .sequential import Sequential


class ResidualBlock(BaseLayer):
    """conv → norm → relu → conv → norm, plus identity skip, then relu."""

    def __init__(self, name: str, channels: int, eps: float = 1e-5):
        super().__init__(name)
        self.body = Sequential(name, [
            Conv2d(self.key("conv1"), channels, channels),
            BatchNorm2d(self.key("norm1"), channels, eps),
            ReLU(self.key("relu1")),
            Conv2d(self.key("conv2"), channels, channels),
            BatchNorm2d(self.key("norm2"), channels, eps),
        ])
        self.out_relu = ReLU(self.key("relu_out"))

    def init_params(self, generator):
        return self.body.init_params(generator)

    def forward(self, params, x, train_mode):
        h, body_cache = self.body.forward(params, x, train_mode)
        y, relu_cache = self.out_relu.forward(params, h + x, train_mode)
        return y, (body_cache, relu_cache)

    def backward(self, params, cache, dy):
        body_cache, relu_cache = cache
        dsum, _ = self.out_relu.backward(params, relu_cache, dy)
        dx_body, grads = self.body.backward(params, body_cache, dsum)
        return dx_body + dsum, grads

    def collect_batch_stats(self, cache, out):
        self.body.collect_batch_stats(cache[0], out)
