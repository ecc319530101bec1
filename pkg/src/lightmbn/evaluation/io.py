"""Embedding dumps and result exports.

Embedding dump: one JSON header line ``{"count": m, "dim": D}`` followed by
``m`` packed little-endian records ``(pid int32, camid int32, flags uint8,
D x float32)``.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..errors import DataError


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("pid", "<i4"), ("camid", "<i4"), ("flags", "u1"), ("emb", "<f4", (dim,))])


def write_embedding_dump(path, embeddings, pids, camids, flags=None) -> None:
    emb = np.asarray(embeddings, dtype=np.float32)
    m, dim = emb.shape
    rec = np.zeros(m, dtype=_record_dtype(dim))
    rec["pid"], rec["camid"] = pids, camids
    rec["flags"] = 0 if flags is None else flags
    rec["emb"] = emb
    with open(path, "wb") as fh:
        fh.write((json.dumps({"count": int(m), "dim": int(dim)}) + "\n").encode("utf-8"))
        fh.write(rec.tobytes())


def read_embedding_dump(path):
    """Return ``(embeddings, pids, camids, flags)``."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read embedding dump {path}: {exc}") from exc
    nl = raw.find(b"\n")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
        m, dim = int(header["count"]), int(header["dim"])
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: bad embedding dump header") from exc
    dt = _record_dtype(dim)
    body = raw[nl + 1:]
    if len(body) != m * dt.itemsize:
        raise DataError(f"{path}: expected {m} records of {dt.itemsize} bytes, got {len(body)} bytes")
    rec = np.frombuffer(body, dtype=dt, count=m)
    return (rec["emb"].astype(np.float32), rec["pid"].astype(np.int64),
            rec["camid"].astype(np.int64), rec["flags"].astype(np.uint8))


def write_cmc_csv(path, cmc) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "cmc"])
        for k, v in enumerate(cmc, start=1):
            w.writerow([k, repr(float(v))])


def read_cmc_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["cmc"]) for r in rows])


def write_summary_json(path, result) -> dict:
    summary = result.summary()
    Path(path).write_text(json.dumps(summary, indent=2) + "\n")
    return summary
