from .base_layer import BaseLayer


class GlobalAvgPool(BaseLayer):
    """B × C × H × W → B × C spatial mean."""

    def forward(self, params, x, train_mode):
        return x.mean(dim=(2, 3)), x.shape

    def backward(self, params, cache, dy):
        batch, channels, height, width = cache
        dx = (dy / (height * width))[:, :, None, None].expand(batch, channels, height, width)
        return dx.contiguous(), {}
