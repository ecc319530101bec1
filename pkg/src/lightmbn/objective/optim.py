"""Adam with bias-corrected moments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DimensionError


@dataclass
class OptimizerParams:
    eps: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if not 0 < self.beta1 < self.beta2 < 1:
            raise ConfigError("need 0 < beta1 < beta2 < 1", field="beta1/beta2")


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls(0, [np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params, grads, state: AdamState, lr: float, p: OptimizerParams = OptimizerParams()) -> AdamState:
    """Update ``params`` (tensors) in place; a ``None`` gradient counts as zero."""
    if len(params) != len(state.m):
        raise DimensionError(f"{len(params)} params but state holds {len(state.m)}", axes=("params",))
    state.step += 1
    bc1 = 1 - p.beta1 ** state.step
    bc2 = 1 - p.beta2 ** state.step
    for param, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != param.shape:
            raise DimensionError(f"moment shape {m.shape} != param shape {param.shape}", axes=("param",))
        if g is None:
            g = np.zeros_like(param.data)
        elif g.shape != param.shape:
            raise DimensionError(f"grad shape {g.shape} != param shape {param.shape}", axes=("grad",))
        m *= p.beta1
        m += (1 - p.beta1) * g
        v *= p.beta2
        v += (1 - p.beta2) * g * g
        param.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + p.eps)).astype(param.dtype, copy=False)
    return state


class Adam:
    def __init__(self, params, p: OptimizerParams = OptimizerParams()):
        self.params = list(params)
        self.p = p
        self.state = AdamState.for_params(self.params)

    def step(self, lr: float):
        adam_step(self.params, [q.grad for q in self.params], self.state, lr, self.p)

    def zero_grad(self):
        for q in self.params:
            q.grad = None
