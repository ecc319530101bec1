"""LightMBN network, backbones and checkpoint I/O."""

from .backbone import BACKBONES, Backbone, BackboneConfig, TinyBackbone, TinyResBackbone, tiny_backbone
from .checkpoint import load_checkpoint, load_state, save_checkpoint, save_state
from .layers import BatchNorm, Conv2d, ConvBNReLU, Linear, Module, Sequential
from .network import (
    BRANCH_HEADS,
    EMBED_DIM,
    HEAD_ORDER,
    INPUT_HW,
    RANKING_HEADS,
    BNNeckHead,
    EmbeddingBundle,
    LightMBN,
    ModelConfig,
    bnneck,
    build_model,
    drop_band,
    drop_block,
    format_branches,
    inference_embedding,
    parse_branches,
)
