"""Parameter containers and the basic layers built on the tensor engine."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from .. import tensor as T
from ..tensor import Tensor


class Module:
    """Named tree of parameters (``Tensor`` with requires_grad) and buffers."""

    def __init__(self):
        self._children: "OrderedDict[str, Module]" = OrderedDict()
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()

    def add_module(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def add_param(self, name: str, data: np.ndarray) -> Tensor:
        p = Tensor(data, requires_grad=True)
        self._params[name] = p
        return p

    def add_buffer(self, name: str, data: np.ndarray) -> np.ndarray:
        self._buffers[name] = data
        return data

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((k, p.data) for k, p in self.named_parameters())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict):
        """Copy arrays into parameters and buffers in place, validating names and shapes."""
        from ..errors import DimensionError

        own = self.state_dict()
        missing = [k for k in own if k not in state]
        unexpected = [k for k in state if k not in own]
        mismatched = [(k, own[k].shape, np.shape(state[k])) for k in own
                      if k in state and own[k].shape != np.shape(state[k])]
        if missing or unexpected or mismatched:
            lines = [f"missing: {k}" for k in missing] + [f"unexpected: {k}" for k in unexpected]
            lines += [f"shape {k}: model {a} vs checkpoint {b}" for k, a, b in mismatched]
            raise DimensionError("state does not match model:\n  " + "\n  ".join(lines),
                                 axes=tuple(k for k, _, _ in mismatched))
        for k, arr in own.items():
            arr[...] = state[k]


def _he_normal(rng: np.random.Generator, shape, fan_in: int, dtype, gain: float = 2.0):
    return (rng.standard_normal(shape) * np.sqrt(gain / fan_in)).astype(dtype)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int = 1, pad: int = 0,
                 bias: bool = False, *, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.stride, self.pad = stride, pad
        self.weight = self.add_param("weight", _he_normal(rng, (cout, cin, k, k), cin * k * k, dtype))
        self.bias = self.add_param("bias", np.zeros(cout, dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class Linear(Module):
    def __init__(self, din: int, dout: int, bias: bool = True, *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.weight = self.add_param("weight", _he_normal(rng, (dout, din), din, dtype, gain=1.0))
        self.bias = self.add_param("bias", np.zeros(dout, dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float32):
        super().__init__()
        self.eps, self.momentum = eps, momentum
        self.gamma = self.add_param("gamma", np.ones(channels, dtype))
        self.beta = self.add_param("beta", np.zeros(channels, dtype))
        self.running_mean = self.add_buffer("running_mean", np.zeros(channels, dtype))
        self.running_var = self.add_buffer("running_var", np.ones(channels, dtype))

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            mode=mode, eps=self.eps, momentum=self.momentum)


class ConvBNReLU(Module):
    def __init__(self, cin, cout, k, stride=1, pad=0, relu=True, *, rng, dtype=np.float32):
        super().__init__()
        self.conv = self.add_module("conv", Conv2d(cin, cout, k, stride, pad, rng=rng, dtype=dtype))
        self.bn = self.add_module("bn", BatchNorm(cout, dtype=dtype))
        self.relu = relu

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        y = self.bn(self.conv(x), mode)
        return T.relu(y) if self.relu else y


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = [self.add_module(str(i), layer) for i, layer in enumerate(layers)]

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        for layer in self.layers:
            x = layer(x, mode)
        return x
