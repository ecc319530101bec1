"""Binary checkpoint format.

Layout (all integers little-endian uint32)::

    b"LMBN1"
    entry_count
    repeated entry_count times:
        name_length, name (UTF-8)
        rank, extent_0 ... extent_{rank-1}
        float32 payload, row-major, little-endian
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..errors import DataError, DimensionError

MAGIC = b"LMBN1"


def save_state(path, state: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(state)))
        for name, arr in state.items():
            raw = name.encode("utf-8")
            arr = np.asarray(arr)
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_state(path) -> "OrderedDict[str, np.ndarray]":
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if buf[:len(MAGIC)] != MAGIC:
        raise DataError(f"{path} is not a checkpoint (bad magic)")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise DataError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (count,) = take("<I")
    state = OrderedDict()
    for _ in range(count):
        (nlen,) = take("<I")
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = take("<I")
        shape = take(f"<{rank}I") if rank else ()
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(buf):
            raise DataError(f"{path}: truncated payload for {name}")
        state[name] = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape).copy()
        pos += nbytes
    return state


def save_checkpoint(path, model) -> None:
    save_state(path, model.state_dict())


def load_checkpoint(path, model) -> None:
    """Load weights into ``model``, raising a shape-diff report on mismatch."""
    state = load_state(path)
    try:
        model.load_state_dict(state)
    except DimensionError as exc:
        raise DimensionError(f"incompatible checkpoint {path}: {exc}", axes=exc.axes) from None
