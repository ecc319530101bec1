"""Retrieval and ranking evaluation."""

from .io import read_cmc_csv, read_embedding_dump, write_cmc_csv, write_embedding_dump, write_summary_json
from .metrics import (
    EvalResult,
    QueryAP,
    ap_legacy,
    ap_modern,
    cosine_similarity_matrix,
    evaluate,
    rank_gallery,
    retrieve,
)
