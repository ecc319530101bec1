"""P x K identity sampler."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .dataset import DatasetIndex


@dataclass(frozen=True)
class Batch:
    epoch: int
    number: int
    indices: np.ndarray  # dataset positions, P*K of them
    labels: np.ndarray  # contiguous class labels aligned with indices


class PKSampler:
    """Batches of P identities x K images.

    An epoch visits every training identity at least once: identities are
    shuffled and chunked into groups of P, and the final short group is
    topped up with other identities.  An identity with fewer than K images
    is drawn with replacement.
    """

    def __init__(self, index: DatasetIndex, P: int = 6, K: int = 8, seed: int = 0):
        if P < 1 or K < 1:
            raise ConfigError("P and K must be positive", field="P/K")
        if len(index.id_to_indices) < P:
            raise ConfigError(
                f"P={P} identities per batch but only {len(index.id_to_indices)} in the train split",
                field="P")
        self.index, self.P, self.K, self.seed = index, P, K, seed
        self.pids = np.array(sorted(index.id_to_indices))

    def batches_per_epoch(self) -> int:
        return -(-len(self.pids) // self.P)

    def epoch(self, epoch: int) -> list:
        rng = np.random.default_rng([self.seed, epoch])
        order = rng.permutation(self.pids)
        out = []
        for b in range(self.batches_per_epoch()):
            group = list(order[b * self.P:(b + 1) * self.P])
            if len(group) < self.P:
                rest = np.setdiff1d(self.pids, group)
                group += list(rng.choice(rest, self.P - len(group), replace=False))
            idx, labels = [], []
            for pid in group:
                pool = np.asarray(self.index.id_to_indices[int(pid)])
                pick = rng.choice(pool, self.K, replace=pool.size < self.K)
                idx.extend(pick.tolist())
                labels.extend([self.index.label_of[int(pid)]] * self.K)
            out.append(Batch(epoch, b, np.asarray(idx), np.asarray(labels)))
        return out

    def stream(self, start_epoch: int = 1):
        e = start_epoch
        while True:
            yield from self.epoch(e)
            e += 1


def pk_sampler(index: DatasetIndex, P: int = 6, K: int = 8, seed: int = 0):
    """Endless stream of P x K batches."""
    return PKSampler(index, P, K, seed).stream()
