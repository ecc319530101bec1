"""Desk-scale backbones satisfying the trunk/branch-tail contract.

A backbone exposes a ``trunk`` shared by every branch, mapping an
N x 3 x 384 x 128 image batch to an N x C_b x 24 x 8 feature map, and a
factory for independent tails that continue from that map to
N x 512 x 24 x 8.  Any real network (pretrained or not) can be plugged in by
implementing the same two pieces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..tensor import Tensor
from .layers import ConvBNReLU, Module, Sequential

FEATURE_HW = (24, 8)
TAIL_CHANNELS = 512


@dataclass
class BackboneConfig:
    name: str = "tiny"
    width: int = 64  # trunk output channels C_b


class Backbone(Module):
    """Base class: subclasses set ``self.trunk`` and implement ``make_tail``."""

    out_channels: int

    def forward_trunk(self, x: Tensor, mode: str) -> Tensor:
        return self.trunk(x, mode)

    def make_tail(self, rng: np.random.Generator, dtype) -> Module:
        raise NotImplementedError


class TinyBackbone(Backbone):
    """Plain conv/bn/relu stack; patchify stem then two stride-2 stages (total stride 16)."""

    def __init__(self, width: int = 64, *, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.out_channels = width
        c1, c2 = max(width // 4, 4), max(width // 2, 4)
        self.trunk = self.add_module("trunk", Sequential(
            ConvBNReLU(3, c1, 4, stride=4, rng=rng, dtype=dtype),
            ConvBNReLU(c1, c2, 3, stride=2, pad=1, rng=rng, dtype=dtype),
            ConvBNReLU(c2, width, 3, stride=2, pad=1, rng=rng, dtype=dtype),
        ))

    def make_tail(self, rng, dtype) -> Module:
        w = self.out_channels
        return Sequential(
            ConvBNReLU(w, w, 3, stride=1, pad=1, rng=rng, dtype=dtype),
            ConvBNReLU(w, TAIL_CHANNELS, 1, rng=rng, dtype=dtype),
        )


class _ResidualBlock(Module):
    def __init__(self, channels: int, *, rng, dtype):
        super().__init__()
        self.a = self.add_module("a", ConvBNReLU(channels, channels, 3, pad=1, rng=rng, dtype=dtype))
        self.b = self.add_module("b", ConvBNReLU(channels, channels, 3, pad=1, relu=False,
                                                rng=rng, dtype=dtype))

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return T.relu(x + self.b(self.a(x, mode), mode))


class TinyResBackbone(TinyBackbone):
    """Residual variant, the alternative backbone on the technique-ablation axis."""

    def make_tail(self, rng, dtype) -> Module:
        w = self.out_channels
        return Sequential(
            _ResidualBlock(w, rng=rng, dtype=dtype),
            ConvBNReLU(w, TAIL_CHANNELS, 1, rng=rng, dtype=dtype),
        )


BACKBONES = {"tiny": TinyBackbone, "tiny-res": TinyResBackbone}


def tiny_backbone(cfg: BackboneConfig, *, rng: np.random.Generator, dtype=np.float32) -> Backbone:
    try:
        cls = BACKBONES[cfg.name]
    except KeyError:
        from ..errors import ConfigError
        raise ConfigError(f"unknown backbone {cfg.name!r}; choose from {sorted(BACKBONES)}",
                          field="backbone") from None
    return cls(cfg.width, rng=rng, dtype=dtype)
