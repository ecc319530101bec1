"""Command-line interface: train, eval, retrieve, export, ablate.

Errors print one machine-parsable line ``error: code=<code> exit=<status>``
to stderr followed by a human-readable message.  Exit statuses: 0 ok,
1 usage/config, 2 data, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path


from .config import load_config, parse_assignments
from .errors import ConfigError, DataError, LightMBNError

log = logging.getLogger("lightmbn")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message, field="args")


def _common(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")


def _run_options(p):
    p.add_argument("--synthetic", nargs="*", metavar="KEY=VALUE",
                   help="synthetic dataset, e.g. --synthetic ids=20 per-id=12 seed=7")
    p.add_argument("--dataset", help="Market-style dataset root")
    p.add_argument("--split", help="JSON split file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--branches", help="e.g. G+C+P, G, C+P")
    p.add_argument("--backbone")
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.add_argument("--no-wca", dest="wca", action="store_false", default=None,
                   help="step schedule instead of warmup cosine annealing")
    p.add_argument("--triplet", dest="triplet", action="store_true", default=None,
                   help="batch-hard triplet instead of multi-similarity loss")
    p.add_argument("--no-db", dest="db", action="store_false", default=None, help="disable drop block")


_SYNTH_KEYS = {"ids": "synth_ids", "per-id": "synth_per_id", "per_id": "synth_per_id", "seed": "synth_seed"}


def _overrides(args) -> dict:
    out = {}
    synthetic = getattr(args, "synthetic", None)
    if synthetic is not None:
        out["dataset"] = "synthetic"
        for pair in synthetic:
            key, _, value = pair.partition("=")
            if key not in _SYNTH_KEYS or not value:
                raise ConfigError(f"bad --synthetic option {pair!r}; use ids=, per-id=, seed=", field="synthetic")
            out[_SYNTH_KEYS[key]] = value
    for flag, key in (("dataset", "dataset"), ("split", "split_file"), ("epochs", "epochs"),
                      ("branches", "branches"), ("backbone", "backbone"), ("dtype", "dtype"),
                      ("seed", "seed"), ("out", "out")):
        v = getattr(args, flag, None)
        if v is not None:
            out[key] = v
    if getattr(args, "wca", None) is False:
        out["wca"] = False
    if getattr(args, "triplet", None):
        out["ranking"] = "triplet"
    if getattr(args, "db", None) is False:
        out["drop_block"] = False
    typed = parse_assignments(f"{k}={v}" for k, v in out.items())
    typed.update(parse_assignments(args.set))
    return typed


def _config(args, default_config=None):
    path = args.config or default_config
    return load_config(path, _overrides(args))


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    from .engine import train

    cfg = _config(args)
    _, records = train(cfg, cfg.out)
    final = records[-1]
    print(f"checkpoint: {Path(cfg.out) / final['checkpoint']}")
    if "metrics" in final:
        m = final["metrics"]
        print(f"rank1={m['rank1']:.4f} map_modern={m['map_modern']:.4f} map_legacy={m['map_legacy']:.4f}")
    return 0


def _model_for_checkpoint(cfg, checkpoint):
    from .model import build_model, load_state
    from .errors import DimensionError

    state = load_state(checkpoint)
    fc = [v for k, v in state.items() if k.endswith(".fc.weight")]
    if not fc:
        raise DataError(f"{checkpoint} has no classifier weights")
    model = build_model(cfg.model_config(fc[0].shape[0]))
    try:
        model.load_state_dict(state)
    except DimensionError as exc:
        raise DimensionError(f"incompatible checkpoint {checkpoint}: {exc}", axes=exc.axes) from None
    return model


def _checkpoint_config(args):
    ckpt = Path(args.checkpoint)
    default = ckpt.parent / "config.txt"
    return _config(args, str(default) if default.is_file() and not args.config else None)


def cmd_eval(args) -> int:
    from .data import FLAG_CODES
    from .engine import evaluate_model, load_data
    from .evaluation import write_cmc_csv, write_embedding_dump, write_summary_json

    cfg = _checkpoint_config(args)
    index = load_data(cfg)
    if not index.positions("gallery"):
        raise ConfigError("dataset has no gallery images", field="gallery")
    if not index.positions("query"):
        raise ConfigError("dataset has no query images", field="query")
    model = _model_for_checkpoint(cfg, args.checkpoint)
    result, (qe, ge) = evaluate_model(model, index, cfg.eval_batch)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    write_cmc_csv(out / "cmc.csv", result.cmc)
    write_summary_json(out / "summary.json", result)
    if args.dump:
        for role, emb in (("query", qe), ("gallery", ge)):
            pos = index.positions(role)
            write_embedding_dump(out / f"{role}.emb", emb, [index[i].pid for i in pos],
                                 [index[i].camid for i in pos], [FLAG_CODES[index[i].flag] for i in pos])
    print(f"rank1={result.rank1:.4f} map_modern={result.map_modern:.4f} "
          f"map_legacy={result.map_legacy:.4f} invalid_queries={result.invalid_queries}")
    return 0


def cmd_retrieve(args) -> int:
    from .data import AugmentConfig, augment, read_image
    from .evaluation import cosine_similarity_matrix, rank_gallery, read_embedding_dump
    from .tensor import Tensor, no_grad

    cfg = _checkpoint_config(args)
    emb, pids, camids, _ = read_embedding_dump(args.gallery)
    if emb.shape[0] == 0:
        raise DataError(f"gallery dump {args.gallery} is empty")
    stats = cfg.norm_stats()
    if stats is None:
        from .data import IMAGENET_MEAN, IMAGENET_STD
        stats = (IMAGENET_MEAN, IMAGENET_STD)
    probe = augment(read_image(args.probe), AugmentConfig(), "eval", mean=stats[0], std=stats[1])
    model = _model_for_checkpoint(cfg, args.checkpoint)
    with no_grad():
        q = model(Tensor(probe[None].astype(model.dtype)), mode="infer").inference().data
    if q.shape[1] != emb.shape[1]:
        raise DataError(f"probe embedding width {q.shape[1]} != gallery dump width {emb.shape[1]}")
    sim = cosine_similarity_matrix(q, emb)[0]
    order = rank_gallery(sim)[:max(1, args.top_k)]
    print("rank,index,pid,camid,similarity")
    for r, i in enumerate(order, start=1):
        print(f"{r},{int(i)},{int(pids[i])},{int(camids[i])},{sim[i]:.6f}")
    return 0


def cmd_export(args) -> int:
    from .config import RunConfig
    from .engine import learning_rates, read_manifest
    from .objective import write_schedule_csv

    run = Path(args.run)
    records = read_manifest(run)
    cfg_rec = next((r for r in records if r.get("type") == "config"), None)
    if cfg_rec is None:
        raise DataError(f"{run}/manifest.jsonl has no config record")
    out = Path(args.out) if args.out else run / f"{args.what}.csv"
    if args.what == "schedule":
        cfg = RunConfig(**cfg_rec["config"])
        write_schedule_csv(out, learning_rates(cfg))
    elif args.what == "cmc":
        src = run / "cmc.csv"
        if not src.is_file():
            raise DataError(f"{run} has no cmc.csv; run eval first")
        if src.resolve() != out.resolve():
            shutil.copyfile(src, out)
    else:
        epochs = [r for r in records if r.get("type") == "epoch"]
        terms = list(epochs[0]["terms"]) if epochs else []
        with open(out, "w") as fh:
            fh.write(",".join(["epoch", "lr", "loss"] + terms) + "\n")
            for r in epochs:
                vals = [r["epoch"], repr(r["lr"]), repr(r["loss"])] + [repr(r["terms"][t]) for t in terms]
                fh.write(",".join(str(v) for v in vals) + "\n")
    print(out)
    return 0


def cmd_ablate(args) -> int:
    from .ablation import format_table, load_matrix, run_ablation

    rows = load_matrix(args.matrix)
    cfg = _config(args)
    out = Path(args.out) if args.out else Path(cfg.out) / "ablation"
    results = run_ablation(cfg, rows, out)
    print(format_table(results))
    print(f"table: {out / 'ablation.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lightmbn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write checkpoint + manifest")
    _common(p)
    _run_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on query/gallery")
    _common(p)
    _run_options(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dump", action="store_true", help="also write query.emb / gallery.emb")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("retrieve", help="rank a gallery dump against a probe image")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--probe", required=True)
    p.add_argument("--gallery", required=True, help="embedding dump")
    p.add_argument("--top-k", type=int, default=10)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("export", help="write plot data as CSV")
    _common(p)
    p.add_argument("what", choices=("schedule", "cmc", "loss-curve"))
    p.add_argument("--run", required=True, help="run directory holding manifest.jsonl")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("ablate", help="run an ablation matrix")
    _common(p)
    _run_options(p)
    p.add_argument("--matrix", required=True, help="matrix CSV, or builtin 'branches' / 'techniques'")
    p.set_defaults(func=cmd_ablate)
    return parser


def _report(exc: BaseException, status: int, code: str) -> int:
    field = getattr(exc, "field", None)
    head = f"error: code={code} exit={status}" + (f" field={field}" if field else "")
    print(head, file=sys.stderr)
    print(str(exc), file=sys.stderr)
    return status


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if not getattr(args, "command", None):
            raise ConfigError("a command is required: train, eval, retrieve, export, ablate", field="command")
        return args.func(args)
    except ConfigError as exc:
        return _report(exc, 1, exc.code)
    except LightMBNError as exc:
        return _report(exc, exc.exit_status, exc.code)
    except (OSError, json.JSONDecodeError) as exc:
        return _report(exc, 2, "io")
    except FloatingPointError as exc:
        return _report(exc, 3, "numeric")


if __name__ == "__main__":
    sys.exit(main())
