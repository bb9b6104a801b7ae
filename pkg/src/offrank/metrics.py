"""Ranking quality metrics and paired significance testing."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

DEFAULT_KS = (3, 5, 10)


def dcg_at_k(relevances, k: int) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    total = 0.0
    for i, rel in enumerate(relevances[:k], start=1):
        total += (2.0 ** rel - 1.0) / math.log2(i + 1)
    return total


def ndcg_at_k(relevances_in_rank_order, ideal_relevances, k: int) -> float:
    """DCG over ideal DCG; 0.0 when the query has no relevant documents."""
    ideal = sorted(ideal_relevances, reverse=True)
    idcg = dcg_at_k(ideal, k)
    if idcg == 0.0:
        return 0.0
    return dcg_at_k(relevances_in_rank_order, k) / idcg


def err_at_k(relevances_in_rank_order, k: int, r_max: int = 4) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    total = 0.0
    stop_free = 1.0
    for i, rel in enumerate(relevances_in_rank_order[:k], start=1):
        r = (2.0 ** rel - 1.0) / 2.0 ** r_max
        total += stop_free * r / i
        stop_free *= 1.0 - r
    return total


@dataclass
class MetricReport:
    ks: tuple
    n_queries: int
    ndcg: dict[int, list] = field(default_factory=dict)   # k -> per-query values
    err: dict[int, list] = field(default_factory=dict)

    def mean(self, metric: str, k: int) -> float:
        values = getattr(self, metric)[k]
        return float(np.mean(values))

    def per_query(self, metric: str, k: int) -> list:
        return getattr(self, metric)[k]


def evaluate_policy(rank_fn, test_queries, ks=DEFAULT_KS, r_max: int = 4,
                    K: int | None = None) -> MetricReport:
    """rank_fn(query) -> doc_id list; metrics use true relevance labels."""
    if not test_queries:
        raise ValueError("empty test set")
    ks = tuple(ks)
    report = MetricReport(ks=ks, n_queries=len(test_queries),
                          ndcg={k: [] for k in ks}, err={k: [] for k in ks})
    for q in test_queries:
        depth = min(K or len(q.documents), len(q.documents))
        ranking = rank_fn(q)[:depth]
        rels = [q.doc_by_id(doc_id).relevance for doc_id in ranking]
        ideal = [d.relevance for d in q.documents]
        for k in ks:
            report.ndcg[k].append(ndcg_at_k(rels, ideal, k))
            report.err[k].append(err_at_k(rels, k, r_max=r_max))
    return report


def significance_test(per_query_a, per_query_b) -> float:
    """Two-sided paired t-test p-value; degenerate zero-variance pairs give
    p=1.0 for zero mean difference, else 0.0."""
    a = np.asarray(per_query_a, dtype=float)
    b = np.asarray(per_query_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be equal-length vectors")
    if a.size < 2:
        raise ValueError("need at least 2 paired samples")
    diff = a - b
    if np.ptp(diff) == 0.0:
        return 1.0 if diff[0] == 0.0 else 0.0
    return float(stats.ttest_rel(a, b).pvalue)
