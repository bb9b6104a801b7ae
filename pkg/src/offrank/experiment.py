"""Config-driven experiment orchestration.

One run: build or load a dataset, train the logging policy, simulate logged
sessions under a click model, fit the requested methods, evaluate each on the
test split, and persist results.csv / summary.json / loss traces.  Every
stage draws from seeded streams so a repeated invocation is byte-identical.
"""
from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .agent import TrainConfig, rank as agent_rank, save_agent, train as agent_train
from .baselines import (
    RankerConfig,
    collect_sessions,
    dla_train,
    estimate_cm_lambdas,
    estimate_ipw_propensities,
    ipw_train,
    result_randomization,
    skyline_ranking,
    train_logging_policy,
)
from .clicks import AttractionModel, default_spec
from .data import Dataset, generate_synthetic, load_letor, train_fraction
from .mdp import episodes_from_sessions
from .metrics import MetricReport, evaluate_policy, significance_test
from .rng import stream

METHODS = ("CUOLR-CQL", "CUOLR-SAC", "DLA", "IPW", "CM-IPW", "LOGGING", "ORACLE")
ALPHA_GRID = (0.0, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1, 5e-1, 1e0, 5e0, 1e1, 5e1)


class ConfigError(ValueError):
    """Bad key, value, or file syntax in an experiment config."""


@dataclass
class ExperimentConfig:
    # dataset: a ranking file path, or a synthetic spec when path is empty
    dataset_path: str = ""
    n_queries: int = 300
    docs_per_query: int = 10
    feature_dim: int = 8
    r_max: int = 4
    data_seed: int = 0
    n_train: int = 0  # 0 keeps the whole split
    n_test: int = 0
    # click model
    click_model: str = "PBM"
    K: int = 10
    eta: float = 1.0
    epsilon: float = 0.1
    # logging policy
    logging_fraction: float = 0.01
    logging_epochs: int = 20
    logging_lr: float = 0.1
    # session logs
    sessions_per_query: int = 50
    randomization_sessions: int = 50000
    # what to run
    method: str = "CUOLR-CQL"  # comma-separated subset of METHODS
    seeds: tuple = (0, 1, 2, 3, 4)
    ks: tuple = (3, 5, 10)
    save_checkpoints: bool = False
    # agent training (desk-scale widths)
    iterations: int = 2000
    batch_queries: int = 4
    hidden_width: int = 64
    hidden_layers: int = 2
    heads: int = 8
    embedding: str = "ATTENTION"
    cql_alpha: float = 0.1
    entropy_alpha: float = 1e-10
    tau: float = 5e-3
    gamma: float = 0.8
    critic_lr: float = 1e-4
    actor_lr: float = 1e-4
    embed_lr: float = 1e-6
    cql_action_set: str = "remaining"
    # baseline ranker training
    baseline_hidden_width: int = 64
    baseline_hidden_layers: int = 2
    baseline_lr: float = 3e-3
    baseline_prop_lr: float = 0.05
    baseline_epochs: int = 100
    baseline_clip: float = 0.01

    def method_list(self) -> list:
        parts = [m.strip() for m in self.method.split(",") if m.strip()]
        if not parts:
            raise ConfigError("no methods requested")
        for m in parts:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
        return parts


def parse_config(text: str) -> dict:
    """Flat `key = value` lines; `#` starts a comment; returns raw strings."""
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        pairs[key] = value.strip()
    return pairs


def _coerce(name: str, text: str, default):
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(p.strip()) for p in text.split(",") if p.strip())
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {exc}") from exc


def build_config(pairs: dict) -> ExperimentConfig:
    config = ExperimentConfig()
    known = {f.name: getattr(config, f.name) for f in fields(ExperimentConfig)}
    for key, text in pairs.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(config, key, _coerce(key, text, known[key]))
    try:
        config.method_list()
        _train_config(config, seed=0)
        _ranker_config(config, seed=0)
        default_spec(config.click_model, K=config.K, eta=config.eta)
        AttractionModel(epsilon=config.epsilon, r_max=config.r_max)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    if not config.seeds:
        raise ConfigError("need at least one seed")
    return config


def load_config(path) -> ExperimentConfig:
    return build_config(parse_config(Path(path).read_text()))


def config_hash(config: ExperimentConfig) -> str:
    canon = json.dumps(asdict(config), sort_keys=True, default=repr)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _train_config(config: ExperimentConfig, seed: int,
                  cql_alpha: float | None = None,
                  embedding: str | None = None) -> TrainConfig:
    return TrainConfig(
        critic_lr=config.critic_lr, actor_lr=config.actor_lr,
        embed_lr=config.embed_lr,
        cql_alpha=config.cql_alpha if cql_alpha is None else cql_alpha,
        entropy_alpha=config.entropy_alpha, tau=config.tau, gamma=config.gamma,
        batch_queries=config.batch_queries, iterations=config.iterations,
        seed=seed, embedding=config.embedding if embedding is None else embedding,
        heads=config.heads, hidden_width=config.hidden_width,
        hidden_layers=config.hidden_layers, cql_action_set=config.cql_action_set)


def _ranker_config(config: ExperimentConfig, seed: int) -> RankerConfig:
    return RankerConfig(
        hidden_width=config.baseline_hidden_width,
        hidden_layers=config.baseline_hidden_layers,
        lr=config.baseline_lr, prop_lr=config.baseline_prop_lr,
        epochs=config.baseline_epochs, clip=config.baseline_clip, seed=seed)


def load_experiment_dataset(config: ExperimentConfig) -> Dataset:
    if not config.dataset_path:
        return generate_synthetic(config.n_queries, config.docs_per_query,
                                  config.feature_dim, r_max=config.r_max,
                                  seed=config.data_seed)
    queries = load_letor(config.dataset_path, r_max=config.r_max)
    if not queries:
        raise ConfigError(f"{config.dataset_path}: no queries")
    order = stream(config.data_seed, "split").permutation(len(queries))
    shuffled = [queries[i] for i in order]
    n = len(shuffled)
    n_tr, n_va = int(0.6 * n), int(0.2 * n)
    dim = max(len(q.documents[0].features) for q in queries)
    return Dataset(train=shuffled[:n_tr], validation=shuffled[n_tr:n_tr + n_va],
                   test=shuffled[n_tr + n_va:], feature_dim=dim,
                   r_max=config.r_max)


@dataclass(eq=False)
class RunRecord:
    config_hash: str
    click_model: str
    methods: list
    seeds: tuple
    reports: dict  # method -> {seed -> MetricReport}
    traces: dict  # method -> {seed -> list of row tuples}
    failures: list  # (method, seed, message)
    wall_clock: float


class _SeedArtifacts:
    """Per-seed lazily built shared inputs: logging policy, session logs."""

    def __init__(self, config, train_qs, spec, att, seed):
        self.config = config
        self.train_qs = train_qs
        self.spec = spec
        self.att = att
        self.seed = seed
        self.policy = train_logging_policy(
            train_fraction(train_qs, config.logging_fraction, seed=seed),
            epochs=config.logging_epochs, lr=config.logging_lr, seed=seed)
        self._logged = None
        self._randomized = None

    def logged_sessions(self):
        if self._logged is None:
            c = self.config
            self._logged = collect_sessions(
                lambda q: self.policy.rank(q, c.K), self.train_qs, self.spec,
                self.att, c.sessions_per_query, stream(self.seed, "logged"))
        return self._logged

    def randomized_sessions(self):
        if self._randomized is None:
            c = self.config
            self._randomized = result_randomization(
                self.train_qs, self.spec, self.att, c.randomization_sessions,
                c.K, stream(self.seed, "rand"))
        return self._randomized

    def episode_groups(self):
        episodes = episodes_from_sessions(self.logged_sessions(), self.train_qs)
        by_q = {q.query_id: (q, []) for q in self.train_qs}
        for ep in episodes:
            by_q[ep.query_id][1].append(ep)
        return [(q, eps) for (q, eps) in by_q.values() if eps]


def _fit_method(method: str, art: _SeedArtifacts, out_dir: Path | None):
    """Returns (rank_fn, trace_rows)."""
    config = art.config
    K = config.K
    if method == "LOGGING":
        return (lambda q: art.policy.rank(q, K)), []
    if method == "ORACLE":
        return skyline_ranking, []
    if method in ("CUOLR-CQL", "CUOLR-SAC"):
        tc = _train_config(config, art.seed,
                           cql_alpha=0.0 if method == "CUOLR-SAC" else None)
        agent, trace = agent_train(art.episode_groups(), tc,
                                   feature_dim=len(art.train_qs[0].documents[0].features))
        if config.save_checkpoints and out_dir is not None:
            ckpt = out_dir / "checkpoints"
            ckpt.mkdir(parents=True, exist_ok=True)
            save_agent(ckpt / f"{method}.s{art.seed}.bin", agent)
        return (lambda q: agent_rank(agent, q, K)), trace
    rc = _ranker_config(config, art.seed)
    if method == "IPW":
        table = estimate_ipw_propensities(art.randomized_sessions(), K)
        model, trace = ipw_train(art.logged_sessions(), art.train_qs, table, rc)
        return (lambda q: model.rank(q, K)), [(i + 1, v) for i, v in enumerate(trace)]
    if method == "CM-IPW":
        table = estimate_cm_lambdas(art.randomized_sessions(), K)
        model, trace = ipw_train(art.logged_sessions(), art.train_qs, table, rc)
        return (lambda q: model.rank(q, K)), [(i + 1, v) for i, v in enumerate(trace)]
    if method == "DLA":
        models, trace = dla_train(art.logged_sessions(), art.train_qs, K, rc)
        return (lambda q: models.ranker.rank(q, K)), trace
    raise ConfigError(f"unknown method {method!r}")


def run_experiment(config: ExperimentConfig, out_dir=None) -> RunRecord:
    """Fit and evaluate every requested method for every seed.

    Failures in one (method, seed) combination are recorded and the rest of
    the run continues; whatever finished is persisted.
    """
    t0 = time.time()
    methods = config.method_list()
    ds = load_experiment_dataset(config)
    train_qs = ds.train[:config.n_train] if config.n_train else ds.train
    test_qs = ds.test[:config.n_test] if config.n_test else ds.test
    if not train_qs or not test_qs:
        raise ConfigError("empty train or test split after caps")
    spec = default_spec(config.click_model, K=config.K, eta=config.eta)
    att = AttractionModel(epsilon=config.epsilon, r_max=config.r_max)
    out_path = Path(out_dir) if out_dir is not None else None

    reports = {m: {} for m in methods}
    traces = {m: {} for m in methods}
    failures = []
    for seed in config.seeds:
        art = _SeedArtifacts(config, train_qs, spec, att, seed)
        for method in methods:
            try:
                rank_fn, trace = _fit_method(method, art, out_path)
                report = evaluate_policy(rank_fn, test_qs, ks=config.ks,
                                         r_max=config.r_max, K=config.K)
            except ConfigError:
                raise
            except Exception as exc:  # noqa: BLE001 - recorded, run continues
                failures.append((method, seed, f"{type(exc).__name__}: {exc}"))
                continue
            reports[method][seed] = report
            traces[method][seed] = trace

    record = RunRecord(config_hash=config_hash(config),
                       click_model=config.click_model, methods=methods,
                       seeds=tuple(config.seeds), reports=reports,
                       traces=traces, failures=failures,
                       wall_clock=time.time() - t0)
    if out_path is not None:
        write_results(out_path, record)
    return record


# ---------------------------------------------------------------------------
# persistence

def _trace_header(method: str) -> list:
    if method in ("CUOLR-CQL", "CUOLR-SAC"):
        return ["iteration", "critic_loss", "actor_loss", "conservative_term"]
    if method == "DLA":
        return ["iteration", "ranker_loss", "propensity_loss"]
    return ["iteration", "loss"]


def write_results(out_dir, record: RunRecord):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "results.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "click_model", "seed", "metric", "k", "value"])
        for method in record.methods:
            for seed in record.seeds:
                report = record.reports[method].get(seed)
                if report is None:
                    continue
                for metric in ("ndcg", "err"):
                    for k in report.ks:
                        w.writerow([method, record.click_model, seed, metric,
                                    k, repr(report.mean(metric, k))])
    (out / "summary.json").write_text(json.dumps(summarize(record), indent=2,
                                                 sort_keys=True) + "\n")
    tdir = out / "traces"
    for method in record.methods:
        for seed, rows in record.traces[method].items():
            if not rows:
                continue
            tdir.mkdir(parents=True, exist_ok=True)
            name = f"{method}.{record.click_model}.s{seed}.csv"
            with (tdir / name).open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(_trace_header(method))
                for row in rows:
                    w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def _pooled(record: RunRecord, method: str, metric: str, k: int) -> list:
    """Per-query values concatenated across seeds, fixed order."""
    vals = []
    for seed in record.seeds:
        report = record.reports[method].get(seed)
        if report is not None:
            vals.extend(report.per_query(metric, k))
    return vals


def summarize(record: RunRecord) -> dict:
    methods = [m for m in record.methods
               if any(s in record.reports[m] for s in record.seeds)]
    out = {"config_hash": record.config_hash,
           "click_model": record.click_model,
           "seeds": list(record.seeds),
           "wall_clock_seconds": round(record.wall_clock, 3),
           "failures": [list(f) for f in record.failures],
           "methods": {}, "p_values": {}}
    ks = None
    for method in methods:
        entry = {}
        for seed in record.seeds:
            report = record.reports[method].get(seed)
            if report is None:
                continue
            ks = report.ks
        for metric in ("ndcg", "err"):
            for k in ks:
                per_seed = [record.reports[method][s].mean(metric, k)
                            for s in record.seeds if s in record.reports[method]]
                arr = np.array(per_seed)
                entry[f"{metric}@{k}"] = {
                    "mean": float(arr.mean()),
                    "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
                    "per_seed": [float(v) for v in arr]}
        out["methods"][method] = entry
    for i, a in enumerate(methods):
        for b in methods[i + 1:]:
            key = f"{a}_vs_{b}"
            entry = {}
            for metric in ("ndcg", "err"):
                for k in ks:
                    pa, pb = _pooled(record, a, metric, k), _pooled(record, b, metric, k)
                    if len(pa) == len(pb) and len(pa) >= 2:
                        entry[f"{metric}@{k}"] = significance_test(pa, pb)
            out["p_values"][key] = entry
    return out


# ---------------------------------------------------------------------------
# conservatism sweep

def sweep_alpha(config: ExperimentConfig, alphas=ALPHA_GRID, out_dir=None):
    """Run CUOLR-CQL at each conservatism weight; returns summary rows
    (alpha, metric, k, mean, std) and writes alpha_sweep.csv when out_dir set.
    """
    out_path = Path(out_dir) if out_dir is not None else None
    rows = []
    for alpha in alphas:
        sub = replace(config, method="CUOLR-CQL", cql_alpha=float(alpha))
        sub_dir = out_path / f"alpha_{alpha:g}" if out_path is not None else None
        record = run_experiment(sub, sub_dir)
        if record.failures:
            raise RuntimeError(f"alpha={alpha:g} failed: {record.failures}")
        summary = summarize(record)["methods"]["CUOLR-CQL"]
        for metric in ("ndcg", "err"):
            for k in config.ks:
                cell = summary[f"{metric}@{k}"]
                rows.append((float(alpha), metric, k, cell["mean"], cell["std"]))
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        with (out_path / "alpha_sweep.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "metric", "k", "mean", "std"])
            for row in rows:
                w.writerow([repr(row[0]), row[1], row[2], repr(row[3]), repr(row[4])])
    return rows
