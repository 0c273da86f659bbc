import logging
from dataclasses import dataclass

import torch

from .base_layer import DTYPE, BaseLayer

logger = logging.getLogger(__name__)


@dataclass
class _NormCache:
    xhat: torch.Tensor
    inv_std: torch.Tensor
    train_mode: bool
    batch_mean: torch.Tensor = None
    batch_var: torch.Tensor = None
    count: int = 0


def _per_channel(v: torch.Tensor) -> torch.Tensor:
    return v[None, :, None, None]


class BatchNorm2d(BaseLayer):
    """
    Per-channel normalisation.

    Train mode normalises with the batch's own mean and biased variance and
    reports them through collect_batch_stats; eval mode uses the running
    statistics stored as buffers.
    """

    AXES = (0, 2, 3)

    def __init__(self, name: str, channels: int, eps: float = 1e-5):
        super().__init__(name)
        self.channels = channels
        self.eps = eps

    def init_params(self, generator):
        params = {
            self.key("weight"): torch.ones(self.channels, dtype=DTYPE),
            self.key("bias"): torch.zeros(self.channels, dtype=DTYPE),
        }
        buffers = {
            self.key("running_mean"): torch.zeros(self.channels, dtype=DTYPE),
            self.key("running_var"): torch.ones(self.channels, dtype=DTYPE),
        }
        return params, buffers

    def forward(self, params, x, train_mode):
        if train_mode:
            mean = x.mean(dim=self.AXES)
            var = x.var(dim=self.AXES, unbiased=False)
        else:
            mean = params[self.key("running_mean")]
            var = params[self.key("running_var")]
        inv_std = 1.0 / torch.sqrt(var + self.eps)
        xhat = (x - _per_channel(mean)) * _per_channel(inv_std)
        y = _per_channel(params[self.key("weight")]) * xhat + _per_channel(params[self.key("bias")])
        count = x.shape[0] * x.shape[2] * x.shape[3]
        if train_mode:
            return y, _NormCache(xhat, inv_std, True, mean, var, count)
        return y, _NormCache(xhat, inv_std, False)

    def backward(self, params, cache, dy):
        gamma = params[self.key("weight")]
        grads = {
            self.key("weight"): (dy * cache.xhat).sum(dim=self.AXES),
            self.key("bias"): dy.sum(dim=self.AXES),
        }
        dxhat = dy * _per_channel(gamma)
        if not cache.train_mode:
            return dxhat * _per_channel(cache.inv_std), grads
        n = cache.count
        sum_dxhat = _per_channel(dxhat.sum(dim=self.AXES))
        sum_dxhat_xhat = _per_channel((dxhat * cache.xhat).sum(dim=self.AXES))
        dx = _per_channel(cache.inv_std / n) * (n * dxhat - sum_dxhat - cache.xhat * sum_dxhat_xhat)
        return dx, grads

    def collect_batch_stats(self, cache, out):
        if cache.train_mode:
            out[self.name] = (cache.batch_mean, cache.batch_var, cache.count)
