"""Conservative actor-critic ranker with learned state embeddings.

The trainer interleaves a conservative critic update (logsumexp-minus-logged
penalty plus Bellman error), an entropy-regularized actor update, and a
target-network soft update.  State embeddings are either fixed (position
code, prefix mean, or both) or a learned self-attention read-out trained
jointly through both losses.
"""
from __future__ import annotations

import json
import math
from array import array
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .data import Query
from .mdp import Episode, RawState, induced_ranking
from .nn.layers import (
    Adam,
    ParamStore,
    attention_forward,
    attention_init,
    grad_check,
    load_checkpoint,
    mlp_forward,
    mlp_init,
    positional_encoding,
    save_checkpoint,
    soft_update,
)
from .nn.tensor import (
    Tensor,
    Tape,
    add,
    concat_cols,
    gather_rows,
    logsumexp_rows,
    mean_all,
    mul,
    reshape,
    row_sum,
    scale,
    softmax_rows,
    sub,
    sub_colvec,
    tape_scope,
)
from .rng import stream

EMBEDDING_KINDS = ("POS", "PREDOC", "POS_PLUS_PREDOC", "ATTENTION")
ACTION_SETS = ("remaining", "full")
MASK_NEG = -1e9


@dataclass
class TrainConfig:
    critic_lr: float = 1e-4
    actor_lr: float = 1e-4
    embed_lr: float = 1e-6
    cql_alpha: float = 0.1
    entropy_alpha: float = 1e-10
    tau: float = 5e-3
    gamma: float = 0.8
    batch_queries: int = 256
    iterations: int = 10000
    seed: int = 0
    embedding: str = "ATTENTION"
    heads: int = 8
    hidden_width: int = 256
    hidden_layers: int = 2
    cql_action_set: str = "remaining"

    def __post_init__(self):
        for name in ("critic_lr", "actor_lr", "embed_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.embedding not in EMBEDDING_KINDS:
            raise ValueError(f"embedding must be one of {EMBEDDING_KINDS}")
        if self.cql_action_set not in ACTION_SETS:
            raise ValueError(f"cql_action_set must be one of {ACTION_SETS}")
        if self.cql_alpha < 0 or self.entropy_alpha < 0:
            raise ValueError("cql_alpha and entropy_alpha must be >= 0")


def state_dim(kind: str, feature_dim: int) -> int:
    return 2 * feature_dim if kind == "POS_PLUS_PREDOC" else feature_dim


@dataclass(eq=False)
class AgentState:
    config: TrainConfig
    feature_dim: int
    critic: ParamStore
    target_critic: ParamStore
    actor: ParamStore
    embed: ParamStore

    @property
    def n_layers(self) -> int:
        return self.config.hidden_layers + 1


def init_agent(config: TrainConfig, feature_dim: int) -> AgentState:
    sd = state_dim(config.embedding, feature_dim)
    sizes = [sd + feature_dim] + [config.hidden_width] * config.hidden_layers + [1]
    critic, target, actor, embed = ParamStore(), ParamStore(), ParamStore(), ParamStore()
    mlp_init(critic, "q", sizes, stream(config.seed, "init", "critic"))
    mlp_init(target, "q", sizes, stream(config.seed, "init", "critic"))
    target.copy_values_from(critic)
    mlp_init(actor, "pi", sizes, stream(config.seed, "init", "actor"))
    if config.embedding == "ATTENTION":
        attention_init(embed, "att", feature_dim, config.heads,
                       stream(config.seed, "init", "embed"))
    return AgentState(config, feature_dim, critic, target, actor, embed)


# ---------------------------------------------------------------------------
# batch assembly

@dataclass(eq=False)
class TransitionBatch:
    """Padded constant arrays for one gradient step; B transitions."""
    B: int
    feature_dim: int
    kind: str
    # state embedding inputs
    tokens: np.ndarray          # (B, L, d) prefix features + position code
    lengths: list
    fixed_states: np.ndarray    # (B, sd) precomputed for the fixed kinds
    # candidates at s
    C: int
    cand_feats: np.ndarray      # (B, C, d), zero-padded
    cand_mask: np.ndarray       # (B, C) 1.0 real / 0.0 pad
    logged_pos: np.ndarray      # (B,) index of the logged action among candidates
    rewards: np.ndarray         # (B,)
    terminal: np.ndarray        # (B,) bool
    # candidates at s'
    next_tokens: np.ndarray
    next_lengths: list
    next_fixed_states: np.ndarray
    next_cand_feats: np.ndarray
    next_cand_mask: np.ndarray


def _fixed_state(kind: str, prefix: list, k: int, d: int) -> np.ndarray:
    pos = positional_encoding(k - 1, d)
    pre = np.mean(prefix, axis=0) if prefix else np.zeros(d)
    if kind == "POS":
        return pos
    if kind == "PREDOC":
        return pre
    return np.concatenate([pos, pre])


def assemble_batch(items, kind: str, feature_dim: int,
                   action_set: str = "remaining") -> TransitionBatch:
    """items: list of (query, episode, step_index 0-based)."""
    d = feature_dim
    B = len(items)
    sd = state_dim(kind, d)
    ks = [s + 1 for _, _, s in items]
    L = max(ks)
    nxt_L = L + 1
    tokens = np.zeros((B, L, d))
    next_tokens = np.zeros((B, nxt_L, d))
    lengths, next_lengths = [], []
    fixed_states = np.zeros((B, sd))
    next_fixed_states = np.zeros((B, sd))

    cand_lists, next_cand_lists = [], []
    logged_pos = np.zeros(B, dtype=np.int64)
    rewards = np.zeros(B)
    terminal = np.zeros(B, dtype=bool)
    for b, (query, episode, s) in enumerate(items):
        step = episode.steps[s]
        k = step.state.position
        prefix = step.state.prefix
        placed = {st.doc_id for st in episode.steps[:s]}
        docs = sorted(query.documents, key=lambda doc: doc.doc_id)
        if action_set == "remaining":
            cands = [doc for doc in docs if doc.doc_id not in placed]
        else:
            cands = docs
        cand_lists.append(cands)
        logged_pos[b] = next(i for i, doc in enumerate(cands) if doc.doc_id == step.doc_id)
        rewards[b] = step.reward
        terminal[b] = s == len(episode.steps) - 1

        if prefix:
            tokens[b, :k - 1] = prefix
        tokens[b, k - 1] = positional_encoding(k - 1, d)
        lengths.append(k)

        nxt_prefix = prefix + [step.action_features]
        next_tokens[b, :k] = nxt_prefix
        next_tokens[b, k] = positional_encoding(k, d)
        next_lengths.append(k + 1)
        if kind != "ATTENTION":
            fixed_states[b] = _fixed_state(kind, prefix, k, d)
            next_fixed_states[b] = _fixed_state(kind, nxt_prefix, k + 1, d)
        if action_set == "remaining":
            next_cand_lists.append([doc for doc in cands if doc.doc_id != step.doc_id])
        else:
            next_cand_lists.append(docs)

    C = max(len(c) for c in cand_lists)
    nC = max(max((len(c) for c in next_cand_lists), default=1), 1)
    cand_feats = np.zeros((B, C, d))
    cand_mask = np.zeros((B, C))
    next_cand_feats = np.zeros((B, nC, d))
    next_cand_mask = np.zeros((B, nC))
    for b in range(B):
        for i, doc in enumerate(cand_lists[b]):
            cand_feats[b, i] = doc.features
            cand_mask[b, i] = 1.0
        for i, doc in enumerate(next_cand_lists[b]):
            next_cand_feats[b, i] = doc.features
            next_cand_mask[b, i] = 1.0
    return TransitionBatch(
        B=B, feature_dim=d, kind=kind,
        tokens=tokens, lengths=lengths, fixed_states=fixed_states,
        C=C, cand_feats=cand_feats, cand_mask=cand_mask,
        logged_pos=logged_pos, rewards=rewards, terminal=terminal,
        next_tokens=next_tokens, next_lengths=next_lengths,
        next_fixed_states=next_fixed_states,
        next_cand_feats=next_cand_feats, next_cand_mask=next_cand_mask,
    )


def embed_batch(agent: AgentState, tokens: np.ndarray, lengths, fixed: np.ndarray) -> Tensor:
    if agent.config.embedding == "ATTENTION":
        return attention_forward(agent.embed, "att", Tensor.from_numpy(tokens),
                                 agent.config.heads, lengths=lengths)
    return Tensor.from_numpy(fixed)


def _batch_scores(store: ParamStore, prefix: str, n_layers: int, states: Tensor,
                  cand_feats: np.ndarray) -> Tensor:
    """(B, C) scores of every candidate under an MLP on [state; features]."""
    B, C, d = cand_feats.shape
    idx = array("q", [b for b in range(B) for _ in range(C)])
    st_rows = gather_rows(states, idx)
    cand_rows = Tensor.from_numpy(cand_feats.reshape(B * C, d))
    out = mlp_forward(store, prefix, concat_cols(st_rows, cand_rows), n_layers)
    return reshape(out, (B, C))


def _masked(scores: Tensor, mask: np.ndarray) -> Tensor:
    keep = Tensor.from_numpy(mask)
    pad = Tensor.from_numpy((1.0 - mask) * MASK_NEG)
    return add(mul(scores, keep), pad)


def bellman_targets(agent: AgentState, batch: TransitionBatch) -> np.ndarray:
    """r + gamma * E_{a'~pi}[Q'(s',a') - entropy_alpha * log pi(a'|s')], exact
    over the finite candidate set; plain r at terminal steps.  No gradients."""
    cfg = agent.config
    with tape_scope(None):
        nxt_states = embed_batch(agent, batch.next_tokens, batch.next_lengths,
                                 batch.next_fixed_states)
        qn = _batch_scores(agent.target_critic, "q", agent.n_layers, nxt_states,
                           batch.next_cand_feats).to_numpy()
        logits = _batch_scores(agent.actor, "pi", agent.n_layers, nxt_states,
                               batch.next_cand_feats).to_numpy()
    mask = batch.next_cand_mask
    masked_logits = np.where(mask > 0, logits, MASK_NEG)
    z = masked_logits - masked_logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    pi = ez / ez.sum(axis=1, keepdims=True)
    log_pi = masked_logits - (np.log(ez.sum(axis=1, keepdims=True))
                              + masked_logits.max(axis=1, keepdims=True))
    value = np.where(mask > 0, pi * (qn - cfg.entropy_alpha * log_pi), 0.0).sum(axis=1)
    return batch.rewards + cfg.gamma * np.where(batch.terminal, 0.0, value)


def cql_critic_loss(agent: AgentState, batch: TransitionBatch,
                    cql_alpha: float | None = None, gamma: float | None = None,
                    targets: np.ndarray | None = None):
    """Conservative critic loss; returns (loss, conservative_term_value).

    loss = cql_alpha * mean[logsumexp_a Q(s,a) - Q(s,a_logged)]
         + 0.5 * mean[(Q(s,a_logged) - target)^2]

    The Bellman targets are stop-gradient data; pass a precomputed array to
    hold them fixed across repeated evaluations (finite differencing).
    """
    cfg = agent.config
    if cql_alpha is None:
        cql_alpha = cfg.cql_alpha
    if gamma is None:
        gamma = cfg.gamma
    if targets is None:
        targets = bellman_targets(agent, batch)

    states = embed_batch(agent, batch.tokens, batch.lengths, batch.fixed_states)
    q_all = _batch_scores(agent.critic, "q", agent.n_layers, states, batch.cand_feats)
    flat = reshape(q_all, (batch.B * batch.C, 1))
    picked = array("q", (np.arange(batch.B) * batch.C + batch.logged_pos).tolist())
    q_logged = gather_rows(flat, picked)

    lse = logsumexp_rows(_masked(q_all, batch.cand_mask))
    conservative = mean_all(sub(lse, q_logged))
    diff = sub(q_logged, Tensor.from_numpy(targets.reshape(-1, 1)))
    bellman = scale(mean_all(mul(diff, diff)), 0.5)
    loss = add(scale(conservative, cql_alpha), bellman)
    return loss, conservative.item()


def sac_actor_loss(agent: AgentState, batch: TransitionBatch,
                   entropy_alpha: float | None = None):
    """-mean_s sum_a pi(a|s) [Q(s,a) - entropy_alpha * log pi(a|s)]."""
    cfg = agent.config
    if entropy_alpha is None:
        entropy_alpha = cfg.entropy_alpha
    states = embed_batch(agent, batch.tokens, batch.lengths, batch.fixed_states)
    q_all = _masked(
        _batch_scores(agent.critic, "q", agent.n_layers, states, batch.cand_feats),
        batch.cand_mask)
    logits = _masked(
        _batch_scores(agent.actor, "pi", agent.n_layers, states, batch.cand_feats),
        batch.cand_mask)
    log_pi = sub_colvec(logits, logsumexp_rows(logits))
    pi = softmax_rows(logits)
    inner = sub(q_all, scale(log_pi, entropy_alpha))
    per_state = row_sum(mul(pi, inner))
    return scale(mean_all(per_state), -1.0)


# ---------------------------------------------------------------------------
# single-state contract operations

def embed_state(kind: str, prefix_features: list, k: int, embed: ParamStore,
                heads: int = 8, feature_dim: int | None = None) -> Tensor:
    """State vector for a single (prefix, position); differentiable for
    ATTENTION, constant otherwise.  feature_dim is only needed for a fixed
    embedding of the empty prefix."""
    if kind not in EMBEDDING_KINDS:
        raise ValueError(f"unknown embedding kind {kind!r}")
    if k != len(prefix_features) + 1:
        raise ValueError(f"position {k} != len(prefix)+1")
    if kind == "ATTENTION":
        d = embed["att.wq"].shape[0]
        tokens = np.zeros((1, k, d))
        for i, f in enumerate(prefix_features):
            tokens[0, i] = f
        tokens[0, k - 1] = positional_encoding(k - 1, d)
        return attention_forward(embed, "att", Tensor.from_numpy(tokens), heads,
                                 lengths=[k])
    if prefix_features:
        d = len(prefix_features[0])
    elif feature_dim is not None:
        d = feature_dim
    else:
        raise ValueError("empty prefix: pass feature_dim for fixed embeddings")
    return Tensor.from_numpy(_fixed_state(kind, list(prefix_features), k, d).reshape(1, -1))


def q_value(critic: ParamStore, state_vec, action_features, n_layers: int = 3) -> float:
    s = np.asarray(state_vec, dtype=float).reshape(1, -1)
    a = np.asarray(action_features, dtype=float).reshape(1, -1)
    expect = critic["q.w0"].shape[0]
    if s.shape[1] + a.shape[1] != expect:
        raise ValueError(f"state+action width {s.shape[1]}+{a.shape[1]} != {expect}")
    x = concat_cols(Tensor.from_numpy(s), Tensor.from_numpy(a))
    return mlp_forward(critic, "q", x, n_layers).item()


def policy_distribution(actor: ParamStore, state_vec, candidate_features,
                        n_layers: int = 3) -> np.ndarray:
    cands = np.asarray(candidate_features, dtype=float)
    if cands.ndim != 2 or cands.shape[0] == 0:
        raise ValueError("need a nonempty 2-d candidate feature array")
    s = np.asarray(state_vec, dtype=float).reshape(1, -1)
    srep = np.repeat(s, cands.shape[0], axis=0)
    x = concat_cols(Tensor.from_numpy(srep), Tensor.from_numpy(cands))
    scores = mlp_forward(actor, "pi", x, n_layers).to_numpy().ravel()
    z = scores - scores.max()
    p = np.exp(z)
    return p / p.sum()


# ---------------------------------------------------------------------------
# training loop

def train(train_data: list, config: TrainConfig, feature_dim: int | None = None):
    """train_data: list of (Query, list[Episode]) pairs.

    Returns (AgentState, trace) where trace rows are
    (iteration, critic_loss, actor_loss, conservative_term).
    """
    if not train_data:
        raise ValueError("empty episode set")
    if feature_dim is None:
        feature_dim = len(train_data[0][0].documents[0].features)
    agent = init_agent(config, feature_dim)
    critic_opt = Adam(agent.critic.tensors(), config.critic_lr)
    actor_opt = Adam(agent.actor.tensors(), config.actor_lr)
    embed_opt = Adam(agent.embed.tensors(), config.embed_lr)
    rng = stream(config.seed, "train")
    nq = len(train_data)
    trace = []

    def zero_all():
        agent.critic.zero_grad()
        agent.actor.zero_grad()
        agent.embed.zero_grad()

    for t in range(1, config.iterations + 1):
        picked = rng.integers(0, nq, size=config.batch_queries)
        items = []
        for qi in picked:
            query, episodes = train_data[qi]
            ep = episodes[int(rng.integers(len(episodes)))]
            items.extend((query, ep, s) for s in range(len(ep.steps)))
        batch = assemble_batch(items, config.embedding, feature_dim,
                               action_set=config.cql_action_set)

        zero_all()
        tape = Tape()
        with tape_scope(tape):
            closs, cons = cql_critic_loss(agent, batch)
        cval = closs.item()
        if not math.isfinite(cval):
            raise RuntimeError(f"non-finite critic loss {cval} at iteration {t}")
        tape.backward(closs)
        critic_opt.step()
        embed_opt.step()

        zero_all()
        tape = Tape()
        with tape_scope(tape):
            aloss = sac_actor_loss(agent, batch)
        aval = aloss.item()
        if not math.isfinite(aval):
            raise RuntimeError(f"non-finite actor loss {aval} at iteration {t}")
        tape.backward(aloss)
        actor_opt.step()
        embed_opt.step()

        soft_update(agent.target_critic, agent.critic, config.tau)
        trace.append((t, cval, aval, cons))
    return agent, trace


def actor_scores(agent: AgentState, state: RawState, candidates) -> np.ndarray:
    cfg = agent.config
    d = agent.feature_dim
    with tape_scope(None):
        if cfg.embedding == "ATTENTION":
            emb = embed_state("ATTENTION", state.prefix, state.position,
                              agent.embed, heads=cfg.heads).to_numpy()
        else:
            emb = _fixed_state(cfg.embedding, state.prefix, state.position, d).reshape(1, -1)
        cands = np.stack([doc.features for doc in candidates])
        srep = np.repeat(emb, len(candidates), axis=0)
        x = concat_cols(Tensor.from_numpy(srep), Tensor.from_numpy(cands))
        return mlp_forward(agent.actor, "pi", x, agent.n_layers).to_numpy().ravel()


def rank(agent: AgentState, query: Query, K: int, mode: str = "greedy", rng=None):
    """Greedy (or sampled) induced ranking under the actor, re-embedding the
    state after each placement."""
    return induced_ranking(lambda st, cands: actor_scores(agent, st, cands),
                           query, K, mode=mode, rng=rng)


def save_trace(path, trace):
    with Path(path).open("w") as fh:
        fh.write("iteration, critic_loss, actor_loss, conservative_term\n")
        for row in trace:
            fh.write(f"{row[0]}, {row[1]!r}, {row[2]!r}, {row[3]!r}\n")


def save_agent(path, agent: AgentState):
    save_checkpoint(path, {"critic": agent.critic, "target_critic": agent.target_critic,
                           "actor": agent.actor, "embed": agent.embed})
    meta = {"config": asdict(agent.config), "feature_dim": agent.feature_dim}
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=1) + "\n")


def load_agent(path) -> AgentState:
    meta = json.loads(Path(str(path) + ".meta.json").read_text())
    config = TrainConfig(**meta["config"])
    agent = init_agent(config, meta["feature_dim"])
    load_checkpoint(path, {"critic": agent.critic, "target_critic": agent.target_critic,
                           "actor": agent.actor, "embed": agent.embed})
    return agent
