"""Run configuration: a flat ``key = value`` text format with typed fields.

Blank lines and ``#`` comments are ignored.  Values are parsed according to
the field type (bool accepts true/false/1/0/yes/no).  A resolved config,
written with :func:`dump_config`, reproduces the run it came from.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .data.transforms import AugmentConfig, REAConfig
from .errors import ConfigError
from .model.backbone import BackboneConfig
from .model.network import ModelConfig, format_branches, parse_branches
from .objective.losses import LossWeights, MSLossParams
from .objective.schedule import ScheduleParams, scaled_drop_epochs


@dataclass
class RunConfig:
    # data
    dataset: str = "synthetic"  # "synthetic" or a Market-style root directory
    split_file: str = ""
    synth_ids: int = 20
    synth_per_id: int = 12
    synth_seed: int = 7
    norm: str = "auto"  # auto | imagenet | dataset
    norm_mean: str = ""  # explicit per-channel stats, "r,g,b"; overrides norm
    norm_std: str = ""
    # model
    branches: str = "G+C+P"
    backbone: str = "tiny"
    backbone_width: int = 64
    drop_block: bool = True
    drop_ratio: float = 1 / 3
    dtype: str = "float32"
    # objective
    wca: bool = True
    ranking: str = "ms"  # ms | triplet
    eps_ls: float = 0.1
    ms_alpha: float = 2.0
    ms_beta: float = 50.0
    ms_lambda: float = 0.5
    ms_eps: float = 0.1
    triplet_margin: float = 0.3
    lambda_ce: float = 0.5
    lambda_ms: float = 0.5
    # schedule / optimisation
    epochs: int = 140
    warmup: int = 10
    lr_peak: float = 6e-4
    lr_floor: float = 6e-7
    step_drops: str = "50,80,110"  # for a 140-epoch run; rescaled otherwise
    adam_eps: float = 1e-8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    # sampling / augmentation
    P: int = 6
    K: int = 8
    resize_factor: float = 1.05
    hflip_p: float = 0.5
    rea_p: float = 0.5
    # run
    seed: int = 0
    checkpoint_every: int = 20
    eval_batch: int = 64
    out: str = "runs/default"

    def validate(self) -> "RunConfig":
        parse_branches(self.branches)
        if self.ranking not in ("ms", "triplet"):
            raise ConfigError(f"ranking must be 'ms' or 'triplet', got {self.ranking!r}", field="ranking")
        if self.norm not in ("auto", "imagenet", "dataset"):
            raise ConfigError(f"norm must be auto/imagenet/dataset, got {self.norm!r}", field="norm")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}", field="dtype")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1", field="epochs")
        if self.wca and self.epochs <= self.warmup:
            raise ConfigError(f"epochs ({self.epochs}) must exceed warmup ({self.warmup})", field="epochs")
        if not 0.0 <= self.drop_ratio <= 1.0:
            raise ConfigError("drop_ratio must lie in [0, 1]", field="drop_ratio")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0", field="checkpoint_every")
        self.drops()
        self.norm_stats()
        return self

    def norm_stats(self):
        """Explicit (mean, std) triples, or None when not pinned in the config."""
        if not self.norm_mean and not self.norm_std:
            return None
        try:
            mean = tuple(float(v) for v in self.norm_mean.split(","))
            std = tuple(float(v) for v in self.norm_std.split(","))
        except ValueError:
            raise ConfigError("norm_mean / norm_std must be comma-separated floats", field="norm_mean") from None
        if len(mean) != 3 or len(std) != 3 or min(std) <= 0:
            raise ConfigError("norm_mean / norm_std need three values, std positive", field="norm_std")
        return mean, std

    # derived component configs -------------------------------------------
    def model_config(self, num_classes: int) -> ModelConfig:
        return ModelConfig(
            num_classes=num_classes,
            branches=format_branches(parse_branches(self.branches)),
            backbone=BackboneConfig(self.backbone, self.backbone_width),
            drop_ratio=self.drop_ratio if self.drop_block else 0.0,
            seed=self.seed,
            dtype=self.dtype,
        )

    def schedule_params(self) -> ScheduleParams:
        return ScheduleParams(T=self.epochs, warmup=self.warmup, lr_peak=self.lr_peak, lr_floor=self.lr_floor)

    def drops(self) -> tuple:
        try:
            raw = tuple(int(s) for s in self.step_drops.split(",") if s.strip())
        except ValueError:
            raise ConfigError(f"step_drops must be comma-separated ints, got {self.step_drops!r}",
                              field="step_drops") from None
        return scaled_drop_epochs(self.epochs, raw)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_ce, self.lambda_ms)

    def ms_params(self) -> MSLossParams:
        return MSLossParams(self.ms_alpha, self.ms_beta, self.ms_lambda, self.ms_eps)

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(resize_factor=self.resize_factor, hflip_p=self.hflip_p,
                             rea=REAConfig(p=self.rea_p))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_FIELD_TYPES = {f.name: f.type if isinstance(f.type, str) else f.type.__name__
                for f in fields(RunConfig)}


def _coerce(key: str, value: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}", field=key)
    kind = _FIELD_TYPES[key]
    value = value.strip()
    try:
        if kind == "bool":
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value {value!r} for {key} ({kind})", field=key) from None
    return value


def parse_assignments(pairs) -> dict:
    """``["epochs=30", "branches = G"]`` -> typed override dict."""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"expected key=value, got {pair!r}", field=pair)
        key, value = pair.split("=", 1)
        key = key.strip()
        out[key] = _coerce(key, value)
    return out


def parse_config_text(text: str) -> dict:
    lines = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    return parse_assignments(lines)


def load_config(path=None, overrides=None) -> RunConfig:
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}", field="config") from None
        values.update(parse_config_text(text))
    values.update(overrides or {})
    return RunConfig(**values).validate()


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def write_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(dump_config(cfg), encoding="utf-8")
