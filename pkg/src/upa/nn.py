"""Learnable parameter containers and their forward application."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError


def kaiming_uniform(rng, fan_in, fan_out, dtype=np.float64):
    """Fan-in Kaiming-uniform weight draw (ReLU gain)."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


class LinearParams:
    """A d_in x d_out weight with an optional d_out bias."""

    def __init__(self, weight: Tensor, bias: Tensor | None = None):
        if bias is not None and bias.data.shape != (weight.data.shape[1],):
            raise ShapeError(
                f"bias shape {bias.data.shape} does not match weight {weight.data.shape}"
            )
        self.weight = weight
        self.bias = bias

    @classmethod
    def create(cls, rng, d_in, d_out, bias=True, dtype=np.float64):
        w = Tensor(kaiming_uniform(rng, d_in, d_out, dtype), requires_grad=True)
        b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True) if bias else None
        return cls(w, b)

    @property
    def d_in(self):
        return self.weight.data.shape[0]

    @property
    def d_out(self):
        return self.weight.data.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.weight)
        if self.bias is not None:
            y = ad.add_rowvec(y, self.bias)
        return y

    def named_parameters(self, prefix=""):
        yield f"{prefix}weight", self.weight
        if self.bias is not None:
            yield f"{prefix}bias", self.bias


class MlpParams:
    """A chain of linear layers with ReLU between consecutive layers."""

    def __init__(self, layers: list[LinearParams]):
        for a, b in zip(layers, layers[1:]):
            if a.d_out != b.d_in:
                raise ShapeError(f"layer widths do not chain: {a.d_out} then {b.d_in}")
        self.layers = layers

    @classmethod
    def create(cls, rng, widths, bias=True, dtype=np.float64):
        if len(widths) < 2:
            raise ConfigError(f"an MLP needs at least two widths, got {widths}")
        return cls(
            [LinearParams.create(rng, a, b, bias=bias, dtype=dtype)
             for a, b in zip(widths, widths[1:])]
        )

    @property
    def d_in(self):
        return self.layers[0].d_in

    @property
    def d_out(self):
        return self.layers[-1].d_out

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i + 1 < len(self.layers):
                x = ad.relu(x)
        return x

    def named_parameters(self, prefix=""):
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}{i}.")


def collect_parameters(named):
    """Flatten a ``named_parameters()`` iterator into an ordered dict."""
    out = {}
    for name, tensor in named:
        if name in out:
            raise ConfigError(f"duplicate parameter name {name!r}")
        out[name] = tensor
    return out
