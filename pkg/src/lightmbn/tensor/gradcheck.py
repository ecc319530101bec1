"""Finite-difference gradient verification."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .tensor import Tensor, backward, record_branches, replay_branches


def numerical_grad(f: Callable[[Tensor], Tensor], theta: Tensor, h: float = 1e-5,
                   coords: Optional[np.ndarray] = None, frozen: bool = False) -> np.ndarray:
    """Central differences of ``f`` at ``theta`` along each (selected) coordinate.

    ``theta.data`` is perturbed in place and restored afterwards.  With
    ``frozen=True`` every piecewise decision is pinned to its value at
    ``theta``, so the differences see the smooth piece the gradient lives on.
    """
    flat = theta.data.reshape(-1)
    idx = np.arange(flat.size) if coords is None else np.asarray(coords)
    log = _branches(f, theta) if frozen else None

    def value():
        if log is None:
            return float(f(theta).data)
        with replay_branches(log):
            return float(f(theta).data)

    out = np.zeros(idx.size, dtype=np.float64)
    for n, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = value()
        flat[i] = orig - h
        fm = value()
        flat[i] = orig
        out[n] = (fp - fm) / (2 * h)
    return out


def _branches(f, theta) -> list:
    with record_branches() as log:
        f(theta)
    return log


def _same(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def smooth_coords(f: Callable[[Tensor], Tensor], theta: Tensor, h: float = 1e-5,
                  coords: Optional[np.ndarray] = None) -> np.ndarray:
    """Subset of ``coords`` whose +-h perturbations keep every piecewise decision.

    Central differences straddling a ReLU kink, a max-pool argmax swap or a
    mining-set change measure a different function than the gradient does;
    those coordinates are dropped.
    """
    flat = theta.data.reshape(-1)
    idx = np.arange(flat.size) if coords is None else np.asarray(coords)
    base = _branches(f, theta)
    keep = []
    for i in idx:
        orig = flat[i]
        ok = True
        for step in (h, -h):
            flat[i] = orig + step
            ok = ok and _same(_branches(f, theta), base)
        flat[i] = orig
        if ok:
            keep.append(i)
    return np.asarray(keep, dtype=np.int64)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    b = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return np.abs(a - b) / denom


def grad_check(f: Callable[[Tensor], Tensor], theta: Tensor, h: float = 1e-5,
               coords: Optional[np.ndarray] = None, frozen: bool = False) -> float:
    """Max relative error between ``backward`` and central differences.

    ``f`` must build a fresh graph from ``theta`` on every call.  Pass
    ``coords`` (flat indices) to probe only a subset of a large tensor, and
    ``frozen=True`` for graphs with so many kinks that a +-h step is bound to
    cross one (see :func:`numerical_grad`).
    """
    theta.requires_grad = True
    theta.grad = None
    loss = f(theta)
    backward(loss)
    analytic = np.zeros(theta.size) if theta.grad is None else theta.grad.reshape(-1)
    if coords is not None:
        analytic = analytic[np.asarray(coords)]
    numeric = numerical_grad(f, theta, h=h, coords=coords, frozen=frozen)
    theta.grad = None
    if analytic.size == 0:
        return 0.0
    return float(relative_error(analytic, numeric).max())
