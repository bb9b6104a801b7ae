"""The ranking MDP: episodes from sessions, induced rankings, returns, oracles.

State at step k is the placed prefix plus the position; the action is the
document for rank k; the reward is the logged click.  Transitions are
deterministic, so episodes are just annotated sessions.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import permutations
from pathlib import Path

import numpy as np

from .clicks import AttractionModel, ClickModelSpec, Session, attraction_prob, marginal_examination
from .data import Query


@dataclass(eq=False)
class RawState:
    prefix: list[np.ndarray]   # features of documents at ranks 1..k-1
    position: int              # k, 1-based

    def __post_init__(self):
        if self.position != len(self.prefix) + 1:
            raise ValueError(f"position {self.position} != len(prefix)+1")


@dataclass(eq=False)
class EpisodeStep:
    state: RawState
    doc_id: int
    action_features: np.ndarray
    reward: int


@dataclass(eq=False)
class Episode:
    query_id: int
    steps: list[EpisodeStep]


@dataclass
class MDPConfig:
    gamma: float = 0.8
    K: int = 10

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")


def build_episode(session: Session, query: Query) -> Episode:
    docs = {d.doc_id: d for d in query.documents}
    steps = []
    prefix: list[np.ndarray] = []
    for k, (doc_id, click) in enumerate(zip(session.ranking, session.clicks), start=1):
        if doc_id not in docs:
            raise ValueError(f"doc_id {doc_id} not in query {query.query_id}")
        d = docs[doc_id]
        steps.append(EpisodeStep(RawState(list(prefix), k), doc_id, d.features, int(click)))
        prefix.append(d.features)
    return Episode(session.query_id, steps)


def induced_ranking(score_fn, query: Query, K: int, mode: str = "greedy", rng=None):
    """Build a list position by position, removing placed documents.

    score_fn(state, candidates) -> array of scores.  Greedy takes the argmax
    (ties to the lowest doc_id); sample draws from softmax(scores).
    """
    if K > len(query.documents):
        raise ValueError(f"K={K} exceeds {len(query.documents)} candidates")
    if mode not in ("greedy", "sample"):
        raise ValueError(f"mode must be greedy or sample, got {mode!r}")
    if mode == "sample" and rng is None:
        raise ValueError("sample mode needs an rng")
    remaining = sorted(query.documents, key=lambda d: d.doc_id)
    prefix: list[np.ndarray] = []
    out: list[int] = []
    for k in range(1, K + 1):
        scores = np.asarray(score_fn(RawState(list(prefix), k), remaining), dtype=float)
        if scores.shape != (len(remaining),):
            raise ValueError(f"score_fn returned shape {scores.shape} for {len(remaining)} candidates")
        if mode == "greedy":
            idx = int(np.argmax(scores))  # argmax takes the first max: lowest doc_id
        else:
            z = scores - scores.max()
            p = np.exp(z)
            p /= p.sum()
            idx = int(rng.choice(len(remaining), p=p))
        chosen = remaining.pop(idx)
        out.append(chosen.doc_id)
        prefix.append(chosen.features)
    return out


def episode_return(episode: Episode, gamma: float) -> float:
    return float(sum(gamma ** (step.state.position - 1) * step.reward
                     for step in episode.steps))


def optimal_ranking(attractions: dict[int, float], K: int) -> list[int]:
    """Top-K doc_ids by descending attraction, ties to ascending doc_id."""
    if K > len(attractions):
        raise ValueError(f"K={K} exceeds {len(attractions)} docs")
    order = sorted(attractions.items(), key=lambda kv: (-kv[1], kv[0]))
    return [doc_id for doc_id, _ in order[:K]]


def ranking_expected_return(docs_in_rank_order, spec: ClickModelSpec,
                            attraction: AttractionModel, gamma: float) -> float:
    """Exact expected discounted clicks of one ordering via the closed-form chi."""
    attrs = [attraction_prob(d.relevance, attraction) for d in docs_in_rank_order]
    total = 0.0
    for k in range(1, len(attrs) + 1):
        chi = marginal_examination(spec, attrs[:k - 1], k)
        total += gamma ** (k - 1) * chi * attrs[k - 1]
    return total


def dp_optimal_value(query: Query, spec: ClickModelSpec, attraction: AttractionModel,
                     gamma: float, K: int, max_docs: int = 7, max_K: int = 5):
    """Brute-force maximizer of expected discounted clicks over all K-orderings.

    Ground-truth oracle for small instances; ties resolve to the
    lexicographically smallest doc_id sequence.
    """
    n = len(query.documents)
    if n > max_docs or K > max_K:
        raise ValueError(
            f"instance too large for enumeration (n={n} > {max_docs} or K={K} > {max_K}); "
            "shrink the instance")
    if K > n:
        raise ValueError(f"K={K} exceeds {n} candidates")
    docs = sorted(query.documents, key=lambda d: d.doc_id)
    best_value = -np.inf
    best: list[int] = []
    for perm in permutations(docs, K):
        v = ranking_expected_return(perm, spec, attraction, gamma)
        # 1e-12 slack: orderings with mathematically equal value must not
        # flip the argmax on product-rounding noise
        if v > best_value + 1e-12:
            best_value = v
            best = [d.doc_id for d in perm]
    return best_value, best


def save_episodes(path, episodes: list[Episode]):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["query_id", "step", "doc_id", "reward"])
        for ep in episodes:
            for step in ep.steps:
                w.writerow([ep.query_id, step.state.position, step.doc_id, step.reward])


def episodes_from_sessions(sessions: list[Session], queries: list[Query]) -> list[Episode]:
    by_id = {q.query_id: q for q in queries}
    return [build_episode(s, by_id[s.query_id]) for s in sessions]
