"""Parameter containers and the small set of layers the network is built from."""
from __future__ import annotations

import re

import numpy as np

from . import autodiff as ad
from .errors import ArgumentError

_NAME_RE = re.compile(r"^[A-Za-z0-9._]+$")


class Parameter(ad.Tensor):
    """A learnable leaf tensor. Its name is assigned by the owning module tree."""

    __slots__ = ("name",)

    def __init__(self, data, name=""):
        super().__init__(data, requires_grad=True)
        self.name = name


class Module:
    """Attribute-walking parameter registry, in the spirit of ``torch.nn.Module``.

    Parameters, sub-modules and lists of sub-modules stored as attributes are
    discovered in attribute insertion order, which keeps naming deterministic.
    """

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def assign_names(self):
        seen = set()
        for name, p in self.named_parameters():
            if not _NAME_RE.match(name):
                raise ArgumentError(f"invalid parameter name {name!r}")
            if name in seen:
                raise ArgumentError(f"duplicate parameter name {name!r}")
            seen.add(name)
            p.name = name
        return self

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        own = dict(self.named_parameters())
        if strict and set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise ArgumentError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, value in state.items():
            if name not in own:
                continue
            p = own[name]
            value = np.asarray(value)
            if value.shape != p.shape:
                raise ArgumentError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = np.ascontiguousarray(value, dtype=p.dtype)

    def num_parameters(self):
        return int(sum(p.data.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def to(self, dtype):
        dtype = ad._DTYPES.get(dtype, dtype)
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


def uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, bias=True, zero_init=False):
        w = np.zeros((in_dim, out_dim)) if zero_init else uniform_init(rng, in_dim, (in_dim, out_dim))
        self.weight = Parameter(w.astype(ad.get_default_dtype()))
        self.bias = None
        if bias:
            b = np.zeros(out_dim) if zero_init else uniform_init(rng, in_dim, (out_dim,))
            self.bias = Parameter(b.astype(ad.get_default_dtype()))

    @property
    def in_dim(self):
        return self.weight.shape[0]

    @property
    def out_dim(self):
        return self.weight.shape[1]

    def __call__(self, x):
        return ad.linear(x, self.weight, self.bias)


class MLP(Module):
    """Per-point MLP (equivalently a stack of kernel-size-1 convolutions).

    ``final_act`` controls whether the activation follows the last layer too.
    """

    def __init__(self, widths, rng, slope=0.1, final_act=True, bias=True):
        if len(widths) < 2:
            raise ArgumentError("MLP needs at least input and output width")
        self.layers = [Linear(a, b, rng, bias=bias) for a, b in zip(widths[:-1], widths[1:])]
        self.slope = slope
        self.final_act = final_act

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def __call__(self, x):
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.final_act:
                x = ad.leaky_relu(x, self.slope)
        return x


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        dtype = ad.get_default_dtype()
        self.gamma = Parameter(np.ones(dim, dtype=dtype))
        self.beta = Parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x):
        return ad.layer_norm(x, self.gamma, self.beta, self.eps)
