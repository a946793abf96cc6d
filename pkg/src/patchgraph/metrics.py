"""Retrieval evaluation: mean average precision and CMC Rank-k.

AP uses precision-at-hit (the usual re-ID protocol): AP = (1/R) * sum
over relevant hits of (hits so far / rank). Queries with no relevant
gallery item are excluded from the averages and counted. Gallery order
for equal distances is deterministic: lower index first.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError


def rank_gallery(query_vec: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """Gallery indices by ascending Euclidean distance, ties by index."""
    query_vec = np.asarray(query_vec, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    if query_vec.ndim != 1 or gallery.ndim != 2 or gallery.shape[1] != query_vec.shape[0]:
        raise ShapeError(
            f"query {query_vec.shape} does not match gallery {gallery.shape}"
        )
    d = np.sqrt(((gallery - query_vec[None, :]) ** 2).sum(axis=1))
    return np.argsort(d, kind="stable")


def average_precision(ranked_ids: np.ndarray, query_id) -> float | None:
    """AP of one ranking; None when the gallery holds nothing relevant."""
    rel = np.asarray(ranked_ids) == query_id
    total = int(rel.sum())
    if total == 0:
        return None
    ranks = np.flatnonzero(rel) + 1  # 1-based positions of the hits
    hits = np.arange(1, total + 1)
    return float((hits / ranks).mean())


def first_hit_rank(ranked_ids: np.ndarray, query_id) -> int | None:
    rel = np.flatnonzero(np.asarray(ranked_ids) == query_id)
    return int(rel[0]) + 1 if rel.size else None


def cmc(ranked_ids_per_query, query_ids, k_values=(1, 5)) -> dict:
    """Rank-k rates: fraction of queries whose first hit lands at rank <= k."""
    ranks = []
    for ranked, qid in zip(ranked_ids_per_query, query_ids):
        r = first_hit_rank(ranked, qid)
        if r is not None:
            ranks.append(r)
    if not ranks:
        return {k: 0.0 for k in k_values}
    ranks = np.asarray(ranks)
    return {k: float((ranks <= k).mean()) for k in k_values}


def evaluate_retrieval(
    query_emb: np.ndarray,
    query_ids,
    gallery_emb: np.ndarray,
    gallery_ids,
    k_values=(1, 5),
    exclude_mask: np.ndarray | None = None,
) -> dict:
    """Full retrieval report.

    ``exclude_mask``, when given, is Q x G boolean; True entries are
    dropped from that query's ranking before scoring (hook for
    camera-style filtering; unused by the synthetic data).
    """
    query_emb = np.asarray(query_emb, dtype=np.float64)
    gallery_emb = np.asarray(gallery_emb, dtype=np.float64)
    query_ids = np.asarray(query_ids)
    gallery_ids = np.asarray(gallery_ids)

    aps = []
    hit_ranks = []
    excluded = 0
    for qi in range(query_emb.shape[0]):
        order = rank_gallery(query_emb[qi], gallery_emb)
        if exclude_mask is not None:
            order = order[~exclude_mask[qi][order]]
        ranked_ids = gallery_ids[order]
        ap = average_precision(ranked_ids, query_ids[qi])
        if ap is None:
            excluded += 1
            continue
        aps.append(ap)
        hit_ranks.append(first_hit_rank(ranked_ids, query_ids[qi]))

    if not aps:
        raise ValueError("every query was excluded: no relevant gallery items")
    ranks = np.asarray(hit_ranks)
    report = {
        "mAP": float(np.mean(aps)),
        "per_query_ap": [float(a) for a in aps],
        "excluded_queries": excluded,
    }
    for k in k_values:
        report[f"rank{k}"] = float((ranks <= k).mean())
    return report
