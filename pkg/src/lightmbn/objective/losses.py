"""Identity and ranking losses and their weighted combination."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..errors import BatchStructureError, ConfigError
from ..tensor import Tensor, branch


@dataclass
class LossWeights:
    lambda_ce: float = 0.5
    lambda_ms: float = 0.5

    def __post_init__(self):
        if self.lambda_ce < 0 or self.lambda_ms < 0:
            raise ConfigError("loss weights must be nonnegative", field="lambda_ce/lambda_ms")


@dataclass
class MSLossParams:
    alpha: float = 2.0
    beta: float = 50.0
    lambda_s: float = 0.5
    mining_eps: float = 0.1

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigError("multi-similarity alpha and beta must be positive", field="ms_alpha/ms_beta")


def _labels(labels, n=None) -> np.ndarray:
    labels = np.asarray(labels).reshape(-1)
    if n is not None and labels.size != n:
        raise BatchStructureError(f"{labels.size} labels for {n} rows")
    return labels


def ce_label_smoothing(logits: Tensor, labels, eps_ls: float = 0.1) -> Tensor:
    """Mean cross-entropy against targets (1 - eps) * onehot + eps / K."""
    if not 0.0 <= eps_ls < 1.0:
        raise ValueError(f"eps_ls must lie in [0, 1), got {eps_ls}")
    n, k = logits.shape
    labels = _labels(labels, n)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise IndexError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    q = np.full((n, k), eps_ls / k, dtype=logits.dtype)
    q[np.arange(n), labels] += 1.0 - eps_ls
    logp = T.log_softmax(logits, axis=1)
    return T.neg(T.tsum(logp * Tensor(q))) * (1.0 / n)


def ms_loss(embeddings: Tensor, labels, params: MSLossParams = MSLossParams()) -> Tensor:
    """Multi-similarity loss with hard-pair mining on cosine similarities."""
    n = embeddings.shape[0]
    labels = _labels(labels, n)
    x = T.l2_normalize(embeddings, axis=1)
    sim = x @ x.T
    s = sim.data
    same = labels[:, None] == labels[None, :]
    eye = np.eye(n, dtype=bool)
    pos = same & ~eye
    neg = ~same
    # mining thresholds per anchor; empty sets leave the opposite side unmined
    max_neg = np.where(neg, s, -np.inf).max(axis=1)
    min_pos = np.where(pos, s, np.inf).min(axis=1)
    pos_mined = pos & (s < max_neg[:, None] + params.mining_eps)
    neg_mined = neg & (s > min_pos[:, None] - params.mining_eps)
    pos_mined, neg_mined = branch(pos_mined), branch(neg_mined)

    a, b, lam = params.alpha, params.beta, params.lambda_s
    pos_term = T.log1p_sum_exp((sim - lam) * (-a), pos_mined) * (1.0 / a)
    neg_term = T.log1p_sum_exp((sim - lam) * b, neg_mined) * (1.0 / b)
    return T.tsum(pos_term + neg_term) * (1.0 / n)


def pairwise_euclidean(x: Tensor) -> Tensor:
    sq = T.tsum(x * x, axis=1, keepdims=True)
    d2 = sq + sq.T - (x @ x.T) * 2.0
    return T.sqrt(T.clamp_min(d2, 1e-12))


def triplet_batch_hard(embeddings: Tensor, labels, margin: float = 0.3) -> Tensor:
    """Batch-hard triplet loss on Euclidean distances."""
    n = embeddings.shape[0]
    labels = _labels(labels, n)
    ids, counts = np.unique(labels, return_counts=True)
    if ids.size < 2 or counts.min() < 2:
        raise BatchStructureError(
            "batch-hard triplet needs >= 2 identities with >= 2 samples each, "
            f"got counts {dict(zip(ids.tolist(), counts.tolist()))}")
    dist = pairwise_euclidean(embeddings)
    d = dist.data
    same = labels[:, None] == labels[None, :]
    eye = np.eye(n, dtype=bool)
    hardest_pos = branch(np.where(same & ~eye, d, -np.inf).argmax(axis=1))
    hardest_neg = branch(np.where(~same, d, np.inf).argmin(axis=1))
    rows = np.arange(n)
    d_pos = dist[rows, hardest_pos]
    d_neg = dist[rows, hardest_neg]
    return T.mean(T.relu(d_pos - d_neg + margin))


def total_loss(bundle, labels, weights: LossWeights = LossWeights(), ranking: str = "ms",
               eps_ls: float = 0.1, ms_params: MSLossParams = MSLossParams(),
               margin: float = 0.3):
    """Weighted sum of per-head CE over the identity set and ranking loss over the ranking set.

    Returns ``(loss, breakdown)`` where ``breakdown`` maps ``"ce:<head>"`` and
    ``"ms:<head>"`` / ``"triplet:<head>"`` to the unweighted term values.
    """
    if ranking not in ("ms", "triplet"):
        raise ConfigError(f"ranking loss must be 'ms' or 'triplet', got {ranking!r}", field="ranking")
    breakdown = OrderedDict()
    ce_terms, rank_terms = [], []
    for name, logits in bundle.identity_set().items():
        term = ce_label_smoothing(logits, labels, eps_ls)
        breakdown[f"ce:{name}"] = float(term.data)
        ce_terms.append(term)
    for name, emb in bundle.ranking_set().items():
        if ranking == "ms":
            term = ms_loss(emb, labels, ms_params)
        else:
            term = triplet_batch_hard(emb, labels, margin)
        breakdown[f"{ranking}:{name}"] = float(term.data)
        rank_terms.append(term)

    loss = None
    if ce_terms:
        loss = _sum(ce_terms) * weights.lambda_ce
    if rank_terms:
        r = _sum(rank_terms) * weights.lambda_ms
        loss = r if loss is None else loss + r
    return loss, breakdown


def _sum(terms):
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out
