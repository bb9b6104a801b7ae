"""Click models: attraction, marginal examination, and session sampling.

Five user models are supported: PBM, CASCADE, DCM, CCM, UBM.  The first four
admit a click-free closed form for the examination probability at rank k;
UBM conditions on realized clicks, so only sampling and exact enumeration
apply there.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

KINDS = ("PBM", "CASCADE", "DCM", "CCM", "UBM")


class UnsupportedClickModel(ValueError):
    pass


@dataclass
class AttractionModel:
    epsilon: float = 0.1  # click-noise floor
    r_max: int = 4

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError(f"epsilon must be in [0, 1), got {self.epsilon}")


@dataclass
class ClickModelSpec:
    kind: str
    K: int
    rho: np.ndarray                      # base examination probabilities, length K
    eta: float = 1.0                     # bias severity
    lam: np.ndarray | None = None        # DCM continue-after-click, length K
    alpha1: float = 1.0                  # CCM continue after examined non-click
    alpha2: float = 0.6                  # CCM continue after click, weight on (1-attr)
    alpha3: float = 0.2                  # CCM continue after click, weight on attr
    gamma_matrix: np.ndarray | None = None  # UBM (K, K+1); column 0 = no click yet

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown click model {self.kind!r}")
        self.rho = np.asarray(self.rho, dtype=float)
        if self.rho.shape != (self.K,):
            raise ValueError(f"rho must have length K={self.K}")
        if self.lam is not None:
            self.lam = np.asarray(self.lam, dtype=float)
            if self.lam.shape != (self.K,):
                raise ValueError(f"lambda must have length K={self.K}")
        if self.gamma_matrix is not None:
            self.gamma_matrix = np.asarray(self.gamma_matrix, dtype=float)
            if self.gamma_matrix.shape != (self.K, self.K + 1):
                raise ValueError(f"gamma_matrix must be (K, K+1) for K={self.K}")
        for name, arr in (("rho", self.rho), ("lambda", self.lam),
                          ("gamma_matrix", self.gamma_matrix)):
            if arr is not None and ((arr < 0) | (arr > 1)).any():
                raise ValueError(f"{name} entries must lie in [0, 1]")


def default_spec(kind: str, K: int = 10, eta: float = 1.0) -> ClickModelSpec:
    """Standard desk parameters: rho_k = 1/k, DCM lambda = rho,
    UBM gamma[k, 0] = rho_k and gamma[k, k'] = clip(rho_k / (k - k'))."""
    k = np.arange(1, K + 1, dtype=float)
    rho = 1.0 / k
    lam = rho.copy() if kind == "DCM" else None
    gamma = None
    if kind == "UBM":
        gamma = np.zeros((K, K + 1))
        for i in range(K):
            gamma[i, 0] = rho[i]
            for prev in range(1, i + 1):
                gamma[i, prev] = min(1.0, rho[i] / (i + 1 - prev))
    return ClickModelSpec(kind=kind, K=K, rho=rho, eta=eta, lam=lam, gamma_matrix=gamma)


@dataclass
class Session:
    query_id: int
    ranking: list[int]       # doc_ids in presented order
    clicks: list[int]        # 0/1, same length

    def __post_init__(self):
        if len(self.ranking) != len(self.clicks):
            raise ValueError("ranking and clicks must have equal length")
        if len(set(self.ranking)) != len(self.ranking):
            raise ValueError("ranking contains duplicate doc_ids")


def attraction_prob(relevance: int, model: AttractionModel) -> float:
    if not 0 <= relevance <= model.r_max:
        raise ValueError(f"relevance {relevance} outside [0, {model.r_max}]")
    top = 2.0 ** relevance - 1.0
    bottom = 2.0 ** model.r_max - 1.0
    return model.epsilon + (1.0 - model.epsilon) * top / bottom


def _ccm_continue_after_click(spec: ClickModelSpec, attr: float) -> float:
    return spec.alpha2 * (1.0 - attr) + spec.alpha3 * attr


def marginal_examination(spec: ClickModelSpec, attractions, k: int) -> float:
    """Click-free examination probability at rank k (1-based).

    `attractions` holds the attraction probabilities of the documents at
    ranks 1..k-1 of the presented list.
    """
    if k < 1 or k > spec.K:
        raise ValueError(f"rank {k} outside 1..{spec.K}")
    attractions = np.asarray(attractions, dtype=float)
    if attractions.shape != (k - 1,):
        raise ValueError(f"need {k - 1} prefix attractions, got {attractions.shape}")
    if spec.kind == "UBM":
        raise UnsupportedClickModel(
            "UBM examination conditions on realized clicks; no click-free closed form")
    if spec.kind == "PBM":
        return float(spec.rho[k - 1] ** spec.eta)
    if spec.kind == "CASCADE":
        return float(np.prod(1.0 - attractions))
    if spec.kind == "DCM":
        lam = spec.lam[:k - 1]
        return float(np.prod(1.0 - attractions * (1.0 - lam)))
    # CCM: continue past i with alpha1 after a non-click, else the click branch
    cont = (1.0 - attractions) * spec.alpha1 + attractions * (
        spec.alpha2 * (1.0 - attractions) + spec.alpha3 * attractions)
    return float(np.prod(cont))


def simulate_session(spec: ClickModelSpec, docs_in_rank_order, attraction: AttractionModel,
                     rng, query_id: int = -1) -> Session:
    """Top-down sequential sampling; deterministic given the rng stream."""
    n = len(docs_in_rank_order)
    if n > spec.K:
        raise ValueError(f"list length {n} exceeds K={spec.K}")
    attrs = [attraction_prob(d.relevance, attraction) for d in docs_in_rank_order]
    clicks = [0] * n
    alive = True          # cascade-family scan state
    last_click = 0        # UBM: rank of latest click, 0 = none
    for i in range(n):
        if spec.kind == "PBM":
            examined = rng.random() < spec.rho[i] ** spec.eta
        elif spec.kind == "UBM":
            examined = rng.random() < spec.gamma_matrix[i, last_click]
        else:
            examined = alive
        clicked = bool(examined) and rng.random() < attrs[i]
        clicks[i] = int(clicked)
        if spec.kind == "CASCADE":
            if clicked:
                alive = False
        elif spec.kind == "DCM":
            if clicked:
                alive = rng.random() < spec.lam[i]
        elif spec.kind == "CCM":
            if examined:
                if clicked:
                    alive = rng.random() < _ccm_continue_after_click(spec, attrs[i])
                else:
                    alive = rng.random() < spec.alpha1
        elif spec.kind == "UBM" and clicked:
            last_click = i + 1
    return Session(query_id, [d.doc_id for d in docs_in_rank_order], clicks)


def enumerate_session_distribution(spec: ClickModelSpec, attractions) -> dict[tuple, float]:
    """Exact probability of every click vector under the model dynamics.

    Exponential in list length; intended for small oracle instances.
    """
    attrs = [float(a) for a in attractions]
    n = len(attrs)
    if n > spec.K:
        raise ValueError(f"list length {n} exceeds K={spec.K}")
    out: dict[tuple, float] = {}

    def examine_prob(i, alive, last_click):
        if spec.kind == "PBM":
            return spec.rho[i] ** spec.eta
        if spec.kind == "UBM":
            return float(spec.gamma_matrix[i, last_click])
        return 1.0 if alive else 0.0

    def rec(i, alive, last_click, prob, clicks):
        if prob == 0.0:
            return
        if i == n:
            key = tuple(clicks)
            out[key] = out.get(key, 0.0) + prob
            return
        e = examine_prob(i, alive, last_click)
        a = attrs[i]
        # not examined
        rec(i + 1, alive, last_click, prob * (1.0 - e), clicks + [0])
        # examined, not clicked
        p_nc = prob * e * (1.0 - a)
        if spec.kind == "CCM":
            rec(i + 1, True, last_click, p_nc * spec.alpha1, clicks + [0])
            rec(i + 1, False, last_click, p_nc * (1.0 - spec.alpha1), clicks + [0])
        else:
            rec(i + 1, alive, last_click, p_nc, clicks + [0])
        # examined and clicked
        p_c = prob * e * a
        if spec.kind == "CASCADE":
            rec(i + 1, False, last_click, p_c, clicks + [1])
        elif spec.kind == "DCM":
            cont = float(spec.lam[i])
            rec(i + 1, True, last_click, p_c * cont, clicks + [1])
            rec(i + 1, False, last_click, p_c * (1.0 - cont), clicks + [1])
        elif spec.kind == "CCM":
            cont = _ccm_continue_after_click(spec, a)
            rec(i + 1, True, last_click, p_c * cont, clicks + [1])
            rec(i + 1, False, last_click, p_c * (1.0 - cont), clicks + [1])
        elif spec.kind == "UBM":
            rec(i + 1, alive, i + 1, p_c, clicks + [1])
        else:  # PBM
            rec(i + 1, alive, last_click, p_c, clicks + [1])

    rec(0, True, 0, 1.0, [])
    return out


def save_sessions(path, sessions: list[Session]):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["query_id", "rank", "doc_id", "click"])
        for s in sessions:
            for rank, (doc_id, click) in enumerate(zip(s.ranking, s.clicks), start=1):
                w.writerow([s.query_id, rank, doc_id, click])


def load_sessions(path) -> list[Session]:
    sessions: list[Session] = []
    cur = None
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["query_id", "rank", "doc_id", "click"]:
            raise ValueError(f"unexpected session log header: {header}")
        for row in reader:
            qid, rank, doc_id, click = int(row[0]), int(row[1]), int(row[2]), int(row[3])
            if rank == 1:
                cur = Session(qid, [], [])
                sessions.append(cur)
            if cur is None or cur.query_id != qid or rank != len(cur.ranking) + 1:
                raise ValueError(f"session log rows out of order near qid {qid} rank {rank}")
            cur.ranking.append(doc_id)
            cur.clicks.append(click)
    return sessions
