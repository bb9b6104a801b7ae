"""Comparison rankers: logging policy, propensity estimators, IPW / CM-IPW /
DLA trainers, and the true-relevance skyline.

The propensity estimators consume randomization logs (uniform permutations),
the weighted trainers consume logged sessions from a production-style policy.
All trainers are full-batch and deterministic given their seed.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clicks import AttractionModel, ClickModelSpec, simulate_session
from .data import Query
from .nn.layers import MASK_NEG, Adam, ParamStore, mlp_forward, mlp_init
from .nn.tensor import (
    Tape,
    Tensor,
    add,
    logsumexp_rows,
    mul,
    reshape,
    scale,
    sub_colvec,
    sum_all,
    tape_scope,
)
from .rng import stream


# ---------------------------------------------------------------------------
# logging policy

@dataclass(eq=False)
class LinearRanker:
    weights: np.ndarray
    bias: float = 0.0

    def score(self, doc) -> float:
        return float(self.weights @ np.asarray(doc.features)) + self.bias

    def rank(self, query: Query, K: int) -> list:
        ids = np.array([d.doc_id for d in query.documents])
        s = np.array([self.score(d) for d in query.documents])
        order = np.lexsort((ids, -s))  # descending score, ties ascending id
        return [int(ids[i]) for i in order[:K]]


def train_logging_policy(queries: list, epochs: int = 20, lr: float = 0.1,
                         seed: int = 0) -> LinearRanker:
    """Pairwise hinge-loss linear ranker fit by SGD over preference pairs."""
    if not queries:
        raise ValueError("no training queries")
    dim = len(queries[0].documents[0].features)
    pairs = []
    for q in queries:
        for a in q.documents:
            for b in q.documents:
                if a.relevance > b.relevance:
                    pairs.append((np.asarray(a.features) - np.asarray(b.features)))
    if not pairs:
        raise ValueError("no comparable document pairs (all relevances tied)")
    diffs = np.stack(pairs)
    w = np.zeros(dim)
    rng = stream(seed, "logging")
    for _ in range(epochs):
        for i in rng.permutation(len(diffs)):
            d = diffs[i]
            if 1.0 - w @ d > 0.0:
                w = w + lr * d
    return LinearRanker(w)


def pair_violations(ranker: LinearRanker, queries: list) -> int:
    """Count preference pairs ranked in the wrong order (margin ignored)."""
    bad = 0
    for q in queries:
        s = {d.doc_id: ranker.score(d) for d in q.documents}
        for a in q.documents:
            for b in q.documents:
                if a.relevance > b.relevance and s[a.doc_id] <= s[b.doc_id]:
                    bad += 1
    return bad


# ---------------------------------------------------------------------------
# randomization and propensity estimation

def result_randomization(queries: list, spec: ClickModelSpec,
                         attraction: AttractionModel, n_sessions: int, K: int,
                         rng) -> list:
    """Sessions over uniformly chosen queries shown in uniformly random order."""
    if n_sessions < 1:
        raise ValueError("n_sessions must be >= 1")
    out = []
    for _ in range(n_sessions):
        q = queries[int(rng.integers(len(queries)))]
        perm = rng.permutation(len(q.documents))[:K]
        docs = [q.documents[i] for i in perm]
        out.append(simulate_session(spec, docs, attraction, rng,
                                    query_id=q.query_id))
    return out


@dataclass
class PropensityTable:
    kind: str  # "IPW" or "CM"
    theta: np.ndarray | None = None  # position propensities, theta[0] == 1
    lam: np.ndarray | None = None  # continuation probabilities

    def __post_init__(self):
        if self.kind not in ("IPW", "CM"):
            raise ValueError(f"unknown propensity table kind {self.kind!r}")
        vec = self.theta if self.kind == "IPW" else self.lam
        if vec is None:
            raise ValueError(f"{self.kind} table missing its vector")
        finite = vec[np.isfinite(vec)]
        if finite.size and (finite.min() < 0.0 or finite.max() > 1.0):
            raise ValueError("propensity entries must lie in [0, 1]")


def estimate_ipw_propensities(sessions: list, K: int | None = None) -> PropensityTable:
    """theta_k = (sum of clicks at rank k) / (sum of clicks at rank 1).

    Under uniform randomization this converges to chi(k)/chi(1), the relative
    chance rank k is examined.  Ranks with zero clicks come back NaN.
    """
    if not sessions:
        raise ValueError("empty session log")
    if K is None:
        K = max(len(s.ranking) for s in sessions)
    counts = np.zeros(K)
    for s in sessions:
        for k, c in enumerate(s.clicks[:K]):
            counts[k] += c
    if counts[0] == 0:
        raise ValueError("no clicks at rank 1; cannot normalize")
    theta = np.where(counts > 0, np.minimum(counts / counts[0], 1.0), np.nan)
    theta[0] = 1.0
    return PropensityTable("IPW", theta=theta)


def estimate_cm_lambdas(sessions: list, K: int | None = None) -> PropensityTable:
    """lam_k = fraction of sessions clicking at k that click again after k."""
    if not sessions:
        raise ValueError("empty session log")
    if K is None:
        K = max(len(s.ranking) for s in sessions)
    clicked_at = np.zeros(K)
    clicked_after = np.zeros(K)
    for s in sessions:
        for k, c in enumerate(s.clicks[:K]):
            if c:
                clicked_at[k] += 1
                if any(s.clicks[k + 1:]):
                    clicked_after[k] += 1
    lam = np.where(clicked_at > 0, clicked_after / np.maximum(clicked_at, 1), np.nan)
    return PropensityTable("CM", lam=lam)


def cm_ipw_propensity(click_prefix, lam) -> float:
    """P(examined at k | clicks before k) = prod_{i<k} (1 - C_i (1 - lam_i))."""
    p = 1.0
    for i, c in enumerate(click_prefix):
        if c:
            p *= float(lam[i])  # 1 - C_i (1 - lam_i) with C_i = 1
    return p


def save_propensities(path, table: PropensityTable):
    vec = table.theta if table.kind == "IPW" else table.lam
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "rank", "value"])
        for k, v in enumerate(vec, start=1):
            w.writerow([table.kind, k, repr(float(v))])


def load_propensities(path) -> PropensityTable:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["kind", "rank", "value"]:
        raise ValueError(f"{path}: bad propensity header")
    kind = rows[1][0].strip()
    vec = np.array([float(r[2]) for r in rows[1:]])
    if kind == "IPW":
        return PropensityTable("IPW", theta=vec)
    return PropensityTable("CM", lam=vec)


# ---------------------------------------------------------------------------
# weighted softmax rankers

@dataclass
class RankerConfig:
    hidden_width: int = 64
    hidden_layers: int = 2
    lr: float = 3e-3
    prop_lr: float = 0.05  # the position vector has far fewer parameters
    epochs: int = 300
    clip: float = 0.01  # propensity floor; weights capped at 1/clip
    seed: int = 0

    def __post_init__(self):
        if self.hidden_width < 1 or self.hidden_layers < 1:
            raise ValueError("ranker needs at least one hidden layer and unit")
        if not 0.0 < self.clip <= 1.0:
            raise ValueError("clip must lie in (0, 1]")
        if self.lr <= 0.0 or self.prop_lr <= 0.0 or self.epochs < 0:
            raise ValueError("rates must be positive and epochs nonnegative")


@dataclass(eq=False)
class MLPRanker:
    store: ParamStore
    n_layers: int

    def scores(self, query: Query) -> np.ndarray:
        x = np.array([d.features for d in query.documents], dtype=float)
        with tape_scope(None):
            out = mlp_forward(self.store, "rank", Tensor.from_numpy(x), self.n_layers)
        return out.to_numpy().ravel()

    def rank(self, query: Query, K: int) -> list:
        ids = np.array([d.doc_id for d in query.documents])
        s = self.scores(query)
        order = np.lexsort((ids, -s))
        return [int(ids[i]) for i in order[:K]]


class _SoftmaxTrainer:
    """Full-batch weighted listwise softmax over padded per-query doc sets."""

    def __init__(self, queries: list, config: RankerConfig, seed_key: str):
        self.queries = queries
        self.nq = len(queries)
        self.dmax = max(len(q.documents) for q in queries)
        dim = len(queries[0].documents[0].features)
        feats = np.zeros((self.nq, self.dmax, dim))
        mask = np.zeros((self.nq, self.dmax))
        for i, q in enumerate(queries):
            for j, d in enumerate(q.documents):
                feats[i, j] = d.features
                mask[i, j] = 1.0
        self.x = Tensor.from_numpy(feats.reshape(self.nq * self.dmax, dim))
        self.mask_np = mask
        self.mask_t = Tensor.from_numpy(mask)
        self.neg_t = Tensor.from_numpy((1.0 - mask) * MASK_NEG)
        self.n_layers = config.hidden_layers + 1
        self.store = ParamStore()
        sizes = [dim] + [config.hidden_width] * config.hidden_layers + [1]
        mlp_init(self.store, "rank", sizes, stream(config.seed, seed_key))
        self.opt = Adam(self.store.tensors(), config.lr)

    def raw_scores(self) -> np.ndarray:
        with tape_scope(None):
            out = mlp_forward(self.store, "rank", self.x, self.n_layers)
        return out.to_numpy().reshape(self.nq, self.dmax)

    def loss(self, weights: np.ndarray) -> Tensor:
        total = weights.sum()
        if total <= 0.0:
            raise ValueError("degenerate log: no click weight to train on")
        s = mlp_forward(self.store, "rank", self.x, self.n_layers)
        logits = add(mul(reshape(s, (self.nq, self.dmax)), self.mask_t),
                     self.neg_t)
        logpi = sub_colvec(logits, logsumexp_rows(logits))
        return scale(sum_all(mul(Tensor.from_numpy(weights), logpi)),
                     -1.0 / total)

    def step(self, weights: np.ndarray) -> float:
        self.store.zero_grad()
        tape = Tape()
        with tape_scope(tape):
            loss = self.loss(weights)
        val = loss.item()
        if not math.isfinite(val):
            raise RuntimeError(f"non-finite ranker loss {val}")
        tape.backward(loss)
        self.opt.step()
        return val


def _click_events(sessions: list, queries: list):
    """Flatten clicks to (query_idx, doc_idx, rank_idx, rank1_doc_idx) arrays."""
    qindex = {q.query_id: i for i, q in enumerate(queries)}
    dindex = [{d.doc_id: j for j, d in enumerate(q.documents)} for q in queries]
    eq, ed, ek, er1 = [], [], [], []
    for s in sessions:
        if s.query_id not in qindex:
            raise ValueError(f"session references unknown query {s.query_id}")
        qi = qindex[s.query_id]
        r1 = dindex[qi][s.ranking[0]]
        for k, (doc, c) in enumerate(zip(s.ranking, s.clicks)):
            if c:
                eq.append(qi)
                ed.append(dindex[qi][doc])
                ek.append(k)
                er1.append(r1)
    return (np.array(eq, dtype=int), np.array(ed, dtype=int),
            np.array(ek, dtype=int), np.array(er1, dtype=int))


def ipw_train(sessions: list, queries: list, table: PropensityTable,
              config: RankerConfig | None = None):
    """Inverse-propensity-weighted softmax ranker.

    kind IPW weights each click by 1/theta_k; kind CM by the inverse
    click-prefix propensity.  Undefined propensities fall back to the clip
    floor.  Returns (MLPRanker, per-epoch loss trace).
    """
    if config is None:
        config = RankerConfig()
    qindex = {q.query_id: i for i, q in enumerate(queries)}
    dindex = [{d.doc_id: j for j, d in enumerate(q.documents)} for q in queries]
    weights = np.zeros((len(queries), max(len(q.documents) for q in queries)))
    for s in sessions:
        qi = qindex[s.query_id]
        for k, (doc, c) in enumerate(zip(s.ranking, s.clicks)):
            if not c:
                continue
            if table.kind == "IPW":
                p = table.theta[k] if k < len(table.theta) else math.nan
            else:
                p = cm_ipw_propensity(s.clicks[:k], table.lam)
            if not math.isfinite(p):
                p = config.clip
            p = min(max(p, config.clip), 1.0)
            weights[qi, dindex[qi][doc]] += 1.0 / p
    trainer = _SoftmaxTrainer(queries, config, "ipw" if table.kind == "IPW" else "cmipw")
    trace = [trainer.step(weights) for _ in range(config.epochs)]
    return MLPRanker(trainer.store, trainer.n_layers), trace


# ---------------------------------------------------------------------------
# dual learning: ranker and position propensities estimated jointly

@dataclass(eq=False)
class DLAModels:
    ranker: MLPRanker
    propensity_scores: np.ndarray  # length K, softmax-normalized internally

    def propensity_ratios(self) -> np.ndarray:
        """Estimated theta_k / theta_1 implied by the position scores."""
        z = self.propensity_scores - self.propensity_scores.max()
        s = np.exp(z)
        return s / s[0]


def _position_loss(pstore: ParamStore, vk: np.ndarray, K: int) -> Tensor:
    """Weighted softmax loss of the position model over ranks 1..K."""
    logits = pstore["prop.p"]
    logpi = sub_colvec(logits, logsumexp_rows(logits))
    return scale(sum_all(mul(Tensor.from_numpy(vk.reshape(1, K)), logpi)),
                 -1.0 / vk.sum())


def dla_train(sessions: list, queries: list, K: int,
              config: RankerConfig | None = None):
    """Alternating inverse-weighted softmax updates.

    Each epoch: (1) ranker step weighted by the current position model's
    ratio s_1/s_k at each clicked rank; (2) position-model step weighted by
    the current ranker's normalized-score ratio between the rank-1 document
    and the clicked document.  Weights are detached and capped at 1/clip.
    Returns (DLAModels, trace of (epoch, ranker_loss, propensity_loss)).
    """
    if config is None:
        config = RankerConfig()
    if not sessions:
        raise ValueError("empty session log")
    eq, ed, ek, er1 = _click_events(sessions, queries)
    if eq.size == 0:
        raise ValueError("degenerate log: no clicks anywhere")
    cap = 1.0 / config.clip
    trainer = _SoftmaxTrainer(queries, config, "dla")
    pstore = ParamStore()
    pstore.add("prop.p", Tensor.zeros((1, K)))
    popt = Adam(pstore.tensors(), config.prop_lr)
    trace = []
    for epoch in range(1, config.epochs + 1):
        # ranker step under current position weights
        z = pstore["prop.p"].to_numpy().ravel()
        sz = np.exp(z - z.max())
        ratio = np.minimum(sz[0] / sz, cap)
        weights = np.zeros_like(trainer.mask_np)
        np.add.at(weights, (eq, ed), ratio[ek])
        rloss = trainer.step(weights)

        # position step under current ranker relevance weights
        raw = trainer.raw_scores()
        raw = raw - raw.max(axis=1, keepdims=True)
        p = np.exp(raw) * trainer.mask_np
        p = p / p.sum(axis=1, keepdims=True)
        v = np.minimum(p[eq, er1] / np.maximum(p[eq, ed], 1e-300), cap)
        vk = np.bincount(ek, weights=v, minlength=K)
        pstore.zero_grad()
        tape = Tape()
        with tape_scope(tape):
            ploss = _position_loss(pstore, vk, K)
        pval = ploss.item()
        if not math.isfinite(pval):
            raise RuntimeError(f"non-finite propensity loss {pval}")
        tape.backward(ploss)
        popt.step()
        trace.append((epoch, rloss, pval))
    models = DLAModels(MLPRanker(trainer.store, trainer.n_layers),
                       pstore["prop.p"].to_numpy().ravel())
    return models, trace


# ---------------------------------------------------------------------------
# skyline and session collection

def skyline_ranking(query: Query) -> list:
    """True-relevance order: descending relevance, ties ascending doc_id."""
    docs = sorted(query.documents, key=lambda d: (-d.relevance, d.doc_id))
    return [d.doc_id for d in docs]


def collect_sessions(rank_fn, queries: list, spec: ClickModelSpec,
                     attraction: AttractionModel, sessions_per_query: int,
                     rng) -> list:
    """Simulate repeated sessions of each query under a fixed ranking policy."""
    out = []
    for q in queries:
        ranking = rank_fn(q)
        docs = [q.doc_by_id(i) for i in ranking]
        for _ in range(sessions_per_query):
            out.append(simulate_session(spec, docs, attraction, rng,
                                        query_id=q.query_id))
    return out
