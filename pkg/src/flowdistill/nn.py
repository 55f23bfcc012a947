"""Small dense networks used as coupling conditioners and MADE bodies."""

import numpy as np

from . import tensor as T
from .tensor import Tensor


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear:
    """Affine map ``x @ W + b`` with an optional fixed connectivity mask on W."""

    def __init__(self, fan_in, fan_out, rng=None, zero=False, mask=None):
        if zero or rng is None:
            weight = np.zeros((fan_in, fan_out))
        else:
            weight = glorot(rng, fan_in, fan_out)
        self.mask = None if mask is None else Tensor(np.asarray(mask, dtype=np.float64))
        if self.mask is not None:
            if self.mask.shape != (fan_in, fan_out):
                raise ValueError(f"mask shape {self.mask.shape} != {(fan_in, fan_out)}")
            weight = weight * self.mask.data
        self.weight = Tensor(weight, requires_grad=True)
        self.bias = Tensor(np.zeros(fan_out), requires_grad=True)

    def __call__(self, x):
        w = self.weight if self.mask is None else self.weight * self.mask
        return x @ w + T.expand_rows(self.bias, x.shape[0])

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}


class MLP:
    """tanh hidden layers followed by one zero-initialised linear head per output.

    Zero heads make any flow layer built on this network an exact identity
    at construction time.
    """

    def __init__(self, fan_in, hidden, n_hidden, heads, rng, masks=None):
        sizes = [fan_in] + [hidden] * n_hidden
        masks = masks or {}
        self.hidden = [
            Linear(a, b, rng, mask=masks.get(("hidden", i)))
            for i, (a, b) in enumerate(zip(sizes, sizes[1:]))
        ]
        self.heads = [
            Linear(sizes[-1], size, zero=True, mask=masks.get(("head", j)))
            for j, size in enumerate(heads)
        ]

    def __call__(self, x):
        h = x
        for layer in self.hidden:
            h = T.tanh(layer(h))
        return [head(h) for head in self.heads]

    def parameters(self):
        params = {}
        for i, layer in enumerate(self.hidden):
            for name, p in layer.parameters().items():
                params[f"hidden{i}.{name}"] = p
        for j, layer in enumerate(self.heads):
            for name, p in layer.parameters().items():
                params[f"head{j}.{name}"] = p
        return params
