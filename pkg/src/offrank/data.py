"""Query-document datasets: LETOR-style parsing, synthetic generation, splits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import stream


@dataclass(eq=False)
class Document:
    doc_id: int
    features: np.ndarray
    relevance: int


@dataclass(eq=False)
class Query:
    query_id: int
    documents: list[Document] = field(default_factory=list)

    def doc_by_id(self, doc_id: int) -> Document:
        for d in self.documents:
            if d.doc_id == doc_id:
                return d
        raise KeyError(f"query {self.query_id} has no document {doc_id}")


@dataclass(eq=False)
class Dataset:
    train: list[Query]
    validation: list[Query]
    test: list[Query]
    feature_dim: int
    r_max: int


def parse_letor(text: str, r_max: int = 4) -> list[Query]:
    """Parse `<label> qid:<q> <fid>:<val> ... [# comment]` lines into queries.

    Queries keep first-appearance order; absent feature ids are 0.0 and
    feature_dim is the largest id seen anywhere.
    """
    raw = []  # (lineno, label, qid, {fid: val})
    max_fid = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 2 or not parts[1].startswith("qid:"):
            raise ValueError(f"line {lineno}: expected '<label> qid:<id> ...'")
        try:
            label = int(parts[0])
            qid = int(parts[1][4:])
        except ValueError:
            raise ValueError(f"line {lineno}: bad label or qid") from None
        if not 0 <= label <= r_max:
            raise ValueError(f"line {lineno}: label {label} outside [0, {r_max}]")
        feats = {}
        for tok in parts[2:]:
            fid, _, val = tok.partition(":")
            try:
                fid = int(fid)
                val = float(val)
            except ValueError:
                raise ValueError(f"line {lineno}: bad feature token {tok!r}") from None
            if fid < 1:
                raise ValueError(f"line {lineno}: feature ids must be positive")
            feats[fid] = val
            max_fid = max(max_fid, fid)
        raw.append((lineno, label, qid, feats))

    queries: dict[int, Query] = {}
    for _, label, qid, feats in raw:
        q = queries.get(qid)
        if q is None:
            q = queries[qid] = Query(qid)
        vec = np.zeros(max_fid)
        for fid, val in feats.items():
            vec[fid - 1] = val
        q.documents.append(Document(len(q.documents), vec, label))
    return list(queries.values())


def to_letor(queries: list[Query]) -> str:
    """Serialize queries densely; floats use repr so reparsing is exact."""
    lines = []
    for q in queries:
        for d in q.documents:
            feats = " ".join(f"{i + 1}:{v!r}" for i, v in enumerate(d.features.tolist()))
            lines.append(f"{d.relevance} qid:{q.query_id} {feats}")
    return "\n".join(lines) + ("\n" if lines else "")


def load_letor(path, r_max: int = 4) -> list[Query]:
    return parse_letor(Path(path).read_text(), r_max=r_max)


def save_letor(path, queries: list[Query]):
    Path(path).write_text(to_letor(queries))


def generate_synthetic(n_queries: int, docs_per_query: int, feature_dim: int,
                       r_max: int = 4, seed: int = 0) -> Dataset:
    """Noisy one-hot features: relevance uniform in {0..r_max}, features =
    one_hot(relevance) + N(0, 0.5^2), so relevance is learnable but not
    separable.  Split 60/20/20 by query."""
    if n_queries < 1 or docs_per_query < 1 or feature_dim < 1:
        raise ValueError("all sizes must be >= 1")
    if feature_dim < r_max + 1:
        raise ValueError(f"feature_dim {feature_dim} < r_max+1 = {r_max + 1}")
    queries = []
    for qid in range(n_queries):
        rng = stream(seed, "synthetic", qid)
        docs = []
        for did in range(docs_per_query):
            rel = int(rng.integers(0, r_max + 1))
            feats = rng.normal(0.0, 0.5, size=feature_dim)
            feats[rel] += 1.0
            docs.append(Document(did, feats, rel))
        queries.append(Query(qid, docs))
    n_train = math.floor(0.6 * n_queries)
    n_val = math.floor(0.2 * n_queries)
    return Dataset(
        train=queries[:n_train],
        validation=queries[n_train:n_train + n_val],
        test=queries[n_train + n_val:],
        feature_dim=feature_dim,
        r_max=r_max,
    )


def train_fraction(partition: list[Query], fraction: float, seed: int) -> list[Query]:
    """Deterministic subsample of ceil(fraction * n) queries, original order."""
    if not partition:
        raise ValueError("empty partition")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = len(partition)
    m = math.ceil(fraction * n)
    rng = stream(seed, "train-fraction")
    picked = sorted(rng.permutation(n)[:m].tolist())
    return [partition[i] for i in picked]
