"""Cosine retrieval, CMC and mean average precision (two conventions).

Per query the gallery is filtered before ranking: items sharing both the
query's identity and camera are dropped, as are junk items.  Relevant items
are the remaining ones with the query's identity.  Ties in similarity are
broken by gallery index.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, DegenerateEmbeddingError
from ..data.dataset import FLAG_CODES

log = logging.getLogger(__name__)

JUNK_CODE = FLAG_CODES["junk"]


def cosine_similarity_matrix(Q, G) -> np.ndarray:
    """S[i, j] = <q_i, g_j> / (|q_i| |g_j|); zero-norm rows are rejected."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    G = np.atleast_2d(np.asarray(G, dtype=np.float64))
    qn = np.linalg.norm(Q, axis=1)
    gn = np.linalg.norm(G, axis=1)
    for name, norms in (("query", qn), ("gallery", gn)):
        bad = np.flatnonzero(norms == 0)
        if bad.size:
            raise DegenerateEmbeddingError(f"{name} row {int(bad[0])} has zero norm", row=int(bad[0]))
    return (Q / qn[:, None]) @ (G / gn[:, None]).T


TIE_TOL = 1e-12


def rank_gallery(similarities: np.ndarray, tol: float = TIE_TOL) -> np.ndarray:
    """Gallery indices by descending similarity, lowest index first among ties.

    Similarities closer than ``tol`` count as tied, so rounding noise between
    mathematically equal cosines cannot reorder them.
    """
    s = np.asarray(similarities, dtype=np.float64)
    order = np.argsort(-s, kind="stable")
    if order.size < 2:
        return order
    group = np.concatenate([[0], np.cumsum(-np.diff(s[order]) > tol)])
    return order[np.lexsort((order, group))]


def retrieve(probe, gallery) -> int:
    """Index of the gallery embedding most cosine-similar to ``probe``."""
    gallery = np.atleast_2d(np.asarray(gallery))
    if gallery.shape[0] == 0 or gallery.size == 0:
        raise DataError("cannot retrieve from an empty gallery")
    return int(rank_gallery(cosine_similarity_matrix(probe, gallery)[0])[0])


def _hit_ranks(relevance) -> np.ndarray:
    rel = np.asarray(relevance, dtype=bool)
    return np.flatnonzero(rel) + 1


def ap_modern(relevance) -> float:
    """Mean over hits of precision at the hit's rank.

    ``relevance`` is the ranked 0/1 relevance vector after exclusion.
    Raises ``ValueError`` if it contains no relevant item.
    """
    ranks = _hit_ranks(relevance)
    if ranks.size == 0:
        raise ValueError("no relevant items: query is invalid")
    hits = np.arange(1, ranks.size + 1)
    return float(np.mean(hits / ranks))


def ap_legacy(relevance) -> float:
    """Trapezoidal recall/precision accumulation.

    Starting from precision 1 at recall 0, each hit adds the recall step
    times the mean of the previous and current hit precisions.
    """
    ranks = _hit_ranks(relevance)
    if ranks.size == 0:
        raise ValueError("no relevant items: query is invalid")
    n_rel = ranks.size
    ap, old_p, old_r = 0.0, 1.0, 0.0
    for h, r in enumerate(ranks, start=1):
        p, rec = h / r, h / n_rel
        ap += (rec - old_r) * (old_p + p) / 2
        old_p, old_r = p, rec
    return float(ap)


@dataclass
class QueryAP:
    query: int
    ap_modern: float
    ap_legacy: float
    valid: bool


@dataclass
class EvalResult:
    cmc: np.ndarray
    map_modern: float
    map_legacy: float
    per_query_ap: list = field(default_factory=list)
    invalid_queries: int = 0

    @property
    def rank1(self) -> float:
        return float(self.cmc[0])

    def summary(self) -> dict:
        return {
            "rank1": self.rank1,
            "map_modern": self.map_modern,
            "map_legacy": self.map_legacy,
            "invalid_queries": self.invalid_queries,
        }


def evaluate(q_emb, g_emb, q_pids, q_camids, g_pids, g_camids, g_flags=None,
             max_rank: int = 50) -> EvalResult:
    """Score every query against the gallery; invalid queries are counted, not averaged."""
    q_pids, q_camids = np.asarray(q_pids), np.asarray(q_camids)
    g_pids, g_camids = np.asarray(g_pids), np.asarray(g_camids)
    g_flags = np.zeros(len(g_pids), dtype=np.uint8) if g_flags is None else np.asarray(g_flags)
    sim = cosine_similarity_matrix(q_emb, g_emb)
    cmc_sum = np.zeros(max_rank)
    per_query = []
    sum_modern = sum_legacy = 0.0
    n_valid = 0
    for qi in range(sim.shape[0]):
        keep = ~((g_pids == q_pids[qi]) & (g_camids == q_camids[qi])) & (g_flags != JUNK_CODE)
        cand = np.flatnonzero(keep)
        order = cand[rank_gallery(sim[qi, cand])]
        rel = g_pids[order] == q_pids[qi]
        if not rel.any():
            per_query.append(QueryAP(qi, float("nan"), float("nan"), False))
            continue
        first = int(np.argmax(rel))
        cmc_q = np.zeros(max_rank)
        if first < max_rank:
            cmc_q[first:] = 1.0
        cmc_sum += cmc_q
        am, al = ap_modern(rel), ap_legacy(rel)
        sum_modern += am
        sum_legacy += al
        n_valid += 1
        per_query.append(QueryAP(qi, am, al, True))
    invalid = len(per_query) - n_valid
    if n_valid == 0:
        log.warning("no valid queries; all metrics reported as 0")
        return EvalResult(np.zeros(max_rank), 0.0, 0.0, per_query, invalid)
    return EvalResult(cmc_sum / n_valid, sum_modern / n_valid, sum_legacy / n_valid, per_query, invalid)
