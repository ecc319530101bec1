"""Training loop, embedding extraction and run manifests."""

from __future__ import annotations

import json
import logging
import math
import time
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .config import RunConfig, write_config
from .data import IMAGENET_MEAN, IMAGENET_STD, FLAG_CODES, PKSampler, augment, load_dataset, load_split, synth_dataset
from .errors import NumericError
from .evaluation import evaluate, write_cmc_csv, write_summary_json
from .model import build_model, load_checkpoint, save_checkpoint
from .objective import Adam, OptimizerParams, lr_schedule, step_schedule, total_loss
from .tensor import Tensor, backward, no_grad

log = logging.getLogger(__name__)

MANIFEST = "manifest.jsonl"
CONFIG = "config.txt"
TIMING_KEYS = ("wall_clock",)


def load_data(cfg: RunConfig):
    """Dataset index for a config, with normalisation statistics applied."""
    if cfg.dataset == "synthetic":
        index = synth_dataset(cfg.synth_ids, cfg.synth_per_id, cfg.synth_seed)
        use_dataset_stats = cfg.norm in ("auto", "dataset")
    else:
        index = load_split(cfg.split_file, root=cfg.dataset) if cfg.split_file else load_dataset(cfg.dataset)
        use_dataset_stats = cfg.norm == "dataset"
    pinned = cfg.norm_stats()
    if pinned is not None:
        index = index.with_stats(*pinned)
    elif use_dataset_stats:
        if cfg.dataset != "synthetic":
            index = index.with_stats(*index.compute_stats("train"))
    else:
        index = index.with_stats(IMAGENET_MEAN, IMAGENET_STD)
    return index


def resolved_config(cfg: RunConfig, index, out) -> RunConfig:
    """Config with output directory and normalisation statistics pinned."""
    fmt = lambda v: ",".join(repr(float(x)) for x in v)  # noqa: E731
    return cfg.replace(out=str(out), norm_mean=fmt(index.mean), norm_std=fmt(index.std))


def learning_rates(cfg: RunConfig) -> list:
    if cfg.wca:
        p = cfg.schedule_params()
        return [lr_schedule(t, p) for t in range(1, cfg.epochs + 1)]
    drops = cfg.drops()
    return [step_schedule(t, cfg.epochs, cfg.lr_peak, drops) for t in range(1, cfg.epochs + 1)]


def embed(model, index, positions, batch: int = 64, aug=None) -> np.ndarray:
    """Inference embeddings (infer mode, eval-time preprocessing) for dataset positions."""
    from .data import AugmentConfig

    aug = aug or AugmentConfig()
    rows = []
    with no_grad():
        for s in range(0, len(positions), batch):
            chunk = positions[s:s + batch]
            x = np.stack([augment(index.image(i), aug, "eval", mean=index.mean, std=index.std)
                          for i in chunk]).astype(model.dtype)
            rows.append(model(Tensor(x), mode="infer").inference().data.astype(np.float64))
    if not rows:
        return np.zeros((0, model.embed_dim()))
    return np.concatenate(rows, axis=0)


def evaluate_model(model, index, batch: int = 64):
    q = index.positions("query")
    g = index.positions("gallery")
    qe, ge = embed(model, index, q, batch), embed(model, index, g, batch)
    meta = lambda pos, attr: np.array([getattr(index[i], attr) for i in pos])  # noqa: E731
    flags = np.array([FLAG_CODES[index[i].flag] for i in g], dtype=np.uint8)
    result = evaluate(qe, ge, meta(q, "pid"), meta(q, "camid"), meta(g, "pid"), meta(g, "camid"), flags)
    return result, (qe, ge)


class ManifestWriter:
    """Append-only JSON-lines log of a run."""

    def __init__(self, path: Path):
        self.path = path
        path.write_text("")

    def append(self, record: dict):
        with open(self.path, "a") as fh:
            fh.write(json.dumps(record) + "\n")


def read_manifest(run_dir) -> list:
    from .errors import DataError

    path = Path(run_dir) / MANIFEST
    try:
        return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    except OSError as exc:
        raise DataError(f"no manifest in {run_dir}: {exc}") from exc


def strip_timing(records: list) -> list:
    return [{k: v for k, v in r.items() if k not in TIMING_KEYS} for r in records]


def _batch_images(index, batch, cfg, aug, dtype) -> np.ndarray:
    imgs = []
    for slot, i in enumerate(batch.indices):
        rng = np.random.default_rng([cfg.seed, 1, batch.epoch, batch.number, slot])
        imgs.append(augment(index.image(int(i)), aug, "train", rng, mean=index.mean, std=index.std))
    return np.stack(imgs).astype(dtype)


def train(cfg: RunConfig, out_dir=None, index=None, evaluate_at_end: bool = True):
    """Run the full training loop described by ``cfg``; returns (model, manifest records)."""
    cfg.validate()
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    index = index if index is not None else load_data(cfg)
    resolved = resolved_config(cfg, index, out)
    write_config(out / CONFIG, resolved)
    model = build_model(cfg.model_config(index.num_classes))
    opt = Adam(model.parameters(), OptimizerParams(cfg.adam_eps, cfg.adam_beta1, cfg.adam_beta2))
    sampler = PKSampler(index, cfg.P, cfg.K, seed=cfg.seed)
    aug = cfg.augment_config()
    lrs = learning_rates(cfg)
    manifest = ManifestWriter(out / MANIFEST)
    records = []

    def emit(record):
        records.append(record)
        manifest.append(record)

    emit({"type": "config", "config": {k: v for k, v in vars(resolved).items() if k != "out"},
          "num_classes": index.num_classes, "parameters": model.summary(),
          "heads": list(model.head_names), "counts": index.counts()})
    start = time.perf_counter()
    ckpt = out / "checkpoint_final.lmbn"
    for epoch in range(1, cfg.epochs + 1):
        lr = lrs[epoch - 1]
        sums: "OrderedDict[str, float]" = OrderedDict()
        total = 0.0
        batches = sampler.epoch(epoch)
        for batch in batches:
            x = _batch_images(index, batch, cfg, aug, model.dtype)
            bundle = model(Tensor(x), mode="train")
            loss, terms = total_loss(bundle, batch.labels, cfg.loss_weights(), cfg.ranking,
                                     cfg.eps_ls, cfg.ms_params(), cfg.triplet_margin)
            value = float(loss.data)
            if not math.isfinite(value):
                dump = {"epoch": epoch, "batch": batch.number, "lr": lr, "terms": terms,
                        "labels": batch.labels.tolist()}
                (out / "nan_dump.json").write_text(json.dumps(dump, indent=2))
                raise NumericError(f"non-finite loss at epoch {epoch} batch {batch.number}; see nan_dump.json")
            opt.zero_grad()
            backward(loss)
            opt.step(lr)
            total += value
            for k, v in terms.items():
                sums[k] = sums.get(k, 0.0) + v
        n = len(batches)
        rec = {"type": "epoch", "epoch": epoch, "lr": lr, "loss": total / n, "steps": n,
               "terms": {k: v / n for k, v in sums.items()},
               "wall_clock": time.perf_counter() - start}
        emit(rec)
        log.info("epoch %d lr %.3g loss %.4f", epoch, lr, rec["loss"])
        if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0 and epoch != cfg.epochs:
            path = out / f"checkpoint_e{epoch:03d}.lmbn"
            save_checkpoint(path, model)
            emit({"type": "checkpoint", "epoch": epoch, "path": path.name})
    save_checkpoint(ckpt, model)
    final = {"type": "final", "checkpoint": ckpt.name, "epochs": cfg.epochs,
             "wall_clock": time.perf_counter() - start}
    if evaluate_at_end and index.positions("query") and index.positions("gallery"):
        result, _ = evaluate_model(model, index, cfg.eval_batch)
        write_cmc_csv(out / "cmc.csv", result.cmc)
        final["metrics"] = write_summary_json(out / "summary.json", result)
    emit(final)
    return model, records


def load_run_model(cfg: RunConfig, checkpoint, num_classes: int):
    model = build_model(cfg.model_config(num_classes))
    load_checkpoint(checkpoint, model)
    return model
