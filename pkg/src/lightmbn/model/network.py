"""Three-branch embedding network with BNNeck heads.

Head names and their order are fixed across the package::

    g, g_drop   global branch (average pool / drop block + max pool)
    p1, p2, p_g part branch (upper half, lower half, max pool)
    c1, c2      channel branch (two channel halves through a shared 1x1 conv)

The ranking-space set is {g, g_drop, p_g} restricted to enabled branches;
the identity-space set is the classifier output of every enabled head.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..errors import ConfigError, DimensionError
from ..tensor import Tensor, branch
from .backbone import FEATURE_HW, TAIL_CHANNELS, BackboneConfig, tiny_backbone
from .layers import BatchNorm, Conv2d, Linear, Module

INPUT_HW = (384, 128)
EMBED_DIM = TAIL_CHANNELS
HEAD_ORDER = ("g", "g_drop", "p1", "p2", "p_g", "c1", "c2")
RANKING_HEADS = ("g", "g_drop", "p_g")
BRANCH_HEADS = {
    "G": ("g", "g_drop"),
    "P": ("p1", "p2", "p_g"),
    "C": ("c1", "c2"),
}


def parse_branches(spec: str) -> frozenset:
    """'G+C+P' -> {'G', 'C', 'P'}; order and case do not matter."""
    letters = [s.strip().upper() for s in spec.replace(",", "+").split("+") if s.strip()]
    bad = [s for s in letters if s not in BRANCH_HEADS]
    if bad:
        raise ConfigError(f"unknown branch(es) {bad}; use G, C, P", field="branches")
    if not letters:
        raise ConfigError("at least one branch must be enabled", field="branches")
    return frozenset(letters)


def format_branches(branches) -> str:
    return "+".join(b for b in "GCP" if b in branches)


@dataclass
class ModelConfig:
    num_classes: int
    branches: str = "G+C+P"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    drop_ratio: float = 1 / 3
    seed: int = 0
    dtype: str = "float32"


@dataclass
class EmbeddingBundle:
    pre: "OrderedDict[str, Tensor]"
    post: "OrderedDict[str, Tensor]"
    logits: "OrderedDict[str, Tensor]"

    @property
    def heads(self) -> tuple:
        return tuple(self.pre)

    def identity_set(self) -> "OrderedDict[str, Tensor]":
        return self.logits

    def ranking_set(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict((k, self.pre[k]) for k in RANKING_HEADS if k in self.pre)

    def inference(self) -> Tensor:
        return inference_embedding(self)


def inference_embedding(bundle: EmbeddingBundle) -> Tensor:
    """Concatenate post-BN vectors in head order; no per-head normalisation."""
    return T.concat([bundle.post[k] for k in HEAD_ORDER if k in bundle.post], axis=1)


def drop_band(x: np.ndarray, ratio: float) -> np.ndarray:
    """Row mask (N x H) that zeroes the most activated horizontal band of each sample."""
    n, _, h, _ = x.shape
    rows = math.ceil(ratio * h - 1e-9)
    keep = np.ones((n, h), dtype=x.dtype)
    if rows <= 0:
        return keep
    activation = np.abs(x).sum(axis=(1, 3))
    peak = activation.argmax(axis=1)
    start = branch(np.clip(peak - rows // 2, 0, h - rows))
    for i, s in enumerate(start):
        keep[i, s:s + rows] = 0
    return keep


def drop_block(x: Tensor, ratio: float, mode: str, rng=None) -> Tensor:
    """Zero a band of ceil(ratio * H) rows centred on the row of peak activation.

    Only active in train mode.  ``rng`` is accepted for interface symmetry with
    other stochastic regularisers; band placement itself is deterministic.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"drop ratio must lie in [0, 1], got {ratio}")
    if mode != "train" or ratio == 0.0:
        return x
    keep = drop_band(x.data, ratio)
    return x * Tensor(keep[:, None, :, None])


class BNNeckHead(Module):
    def __init__(self, num_classes: int, dim: int = EMBED_DIM, *, rng, dtype):
        super().__init__()
        self.dim = dim
        self.bn = self.add_module("bn", BatchNorm(dim, dtype=dtype))
        self.fc = self.add_module("fc", Linear(dim, num_classes, bias=False, rng=rng, dtype=dtype))


def bnneck(head: BNNeckHead, e: Tensor, mode: str):
    """Return (pre, post, logits) views of one embedding."""
    if e.ndim != 2 or e.shape[1] != head.dim:
        raise DimensionError(f"bnneck expects N x {head.dim}, got {e.shape}", axes=("e[1]",))
    post = head.bn(e, mode)
    return e, post, head.fc(post)


class LightMBN(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {cfg.num_classes}", field="num_classes")
        self.cfg = cfg
        self.branches = parse_branches(cfg.branches)
        dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng(cfg.seed)
        self.backbone = self.add_module("backbone", tiny_backbone(cfg.backbone, rng=rng, dtype=dtype))
        self.tails = {}
        for b in "GCP":
            if b in self.branches:
                self.tails[b] = self.add_module(f"tail_{b.lower()}", self.backbone.make_tail(rng, dtype))
        if "C" in self.branches:
            # one 1x1 conv shared by both channel halves
            self.channel_up = self.add_module(
                "channel_up", Conv2d(EMBED_DIM // 2, EMBED_DIM, 1, rng=rng, dtype=dtype))
        self.heads = OrderedDict()
        for name in self.head_names:
            self.heads[name] = self.add_module(f"head_{name}", BNNeckHead(cfg.num_classes, rng=rng, dtype=dtype))

    @property
    def head_names(self) -> tuple:
        enabled = {h for b in self.branches for h in BRANCH_HEADS[b]}
        return tuple(h for h in HEAD_ORDER if h in enabled)

    @property
    def dtype(self):
        return np.dtype(self.cfg.dtype)

    def embed_dim(self) -> int:
        return EMBED_DIM * len(self.head_names)

    def branch_features(self, x: Tensor, mode: str) -> dict:
        if x.ndim != 4 or x.shape[1] != 3 or tuple(x.shape[2:]) != INPUT_HW:
            raise DimensionError(
                f"expected N x 3 x {INPUT_HW[0]} x {INPUT_HW[1]} input, got {x.shape}",
                axes=("x[1]", "x[2]", "x[3]"))
        shared = self.backbone.forward_trunk(x, mode)
        feats = {}
        for b, tail in self.tails.items():
            t = tail(shared, mode)
            if tuple(t.shape[1:]) != (TAIL_CHANNELS,) + FEATURE_HW:
                raise DimensionError(f"branch tail produced {t.shape}", axes=("tail",))
            feats[b] = t
        return feats

    def forward(self, x, mode: str = "train", rng=None) -> EmbeddingBundle:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        feats = self.branch_features(x, mode)
        n = x.shape[0]
        emb = {}
        if "G" in feats:
            t = feats["G"]
            emb["g"] = T.pool2d(t, FEATURE_HW, "avg").reshape(n, EMBED_DIM)
            dropped = drop_block(t, self.cfg.drop_ratio, mode, rng)
            emb["g_drop"] = T.pool2d(dropped, FEATURE_HW, "max").reshape(n, EMBED_DIM)
        if "P" in feats:
            t = feats["P"]
            halves = T.pool2d(t, (FEATURE_HW[0] // 2, FEATURE_HW[1]), "avg")  # N x 512 x 2 x 1
            emb["p1"] = halves[:, :, 0, 0]
            emb["p2"] = halves[:, :, 1, 0]
            emb["p_g"] = T.pool2d(t, FEATURE_HW, "max").reshape(n, EMBED_DIM)
        if "C" in feats:
            v = T.pool2d(feats["C"], FEATURE_HW, "avg")  # N x 512 x 1 x 1
            half = EMBED_DIM // 2
            emb["c1"] = self.channel_up(v[:, :half]).reshape(n, EMBED_DIM)
            emb["c2"] = self.channel_up(v[:, half:]).reshape(n, EMBED_DIM)

        pre, post, logits = OrderedDict(), OrderedDict(), OrderedDict()
        for name in self.head_names:
            pre[name], post[name], logits[name] = bnneck(self.heads[name], emb[name], mode)
        return EmbeddingBundle(pre, post, logits)

    __call__ = forward

    def summary(self) -> dict:
        parts = OrderedDict()
        parts["trunk"] = self.backbone.num_parameters()
        for b in self.tails:
            parts[f"tail_{b.lower()}"] = self.tails[b].num_parameters()
        if "C" in self.branches:
            parts["channel_up"] = self.channel_up.num_parameters()
        parts["heads"] = int(sum(h.num_parameters() for h in self.heads.values()))
        parts["total"] = self.num_parameters()
        return dict(parts)


def build_model(cfg: ModelConfig) -> LightMBN:
    return LightMBN(cfg)
