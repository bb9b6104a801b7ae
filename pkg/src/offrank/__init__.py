"""Off-policy learning-to-rank testbed.

Simulated click logs under classic user models, a ranking MDP, a conservative
actor-critic agent with learned state embeddings, inverse-propensity baselines,
and a config-driven experiment harness with nDCG/ERR evaluation.
"""
from .agent import AgentState, TrainConfig, load_agent, rank, save_agent, train
from .baselines import (
    DLAModels,
    LinearRanker,
    MLPRanker,
    PropensityTable,
    RankerConfig,
    cm_ipw_propensity,
    collect_sessions,
    dla_train,
    estimate_cm_lambdas,
    estimate_ipw_propensities,
    ipw_train,
    result_randomization,
    skyline_ranking,
    train_logging_policy,
)
from .clicks import (
    KINDS,
    AttractionModel,
    ClickModelSpec,
    Session,
    UnsupportedClickModel,
    attraction_prob,
    default_spec,
    enumerate_session_distribution,
    load_sessions,
    marginal_examination,
    save_sessions,
    simulate_session,
)
from .data import (
    Dataset,
    Document,
    Query,
    generate_synthetic,
    load_letor,
    parse_letor,
    save_letor,
    to_letor,
    train_fraction,
)
from .experiment import (
    ALPHA_GRID,
    METHODS,
    ConfigError,
    ExperimentConfig,
    RunRecord,
    build_config,
    load_config,
    parse_config,
    run_experiment,
    summarize,
    sweep_alpha,
)
from .mdp import (
    Episode,
    EpisodeStep,
    MDPConfig,
    RawState,
    build_episode,
    dp_optimal_value,
    episode_return,
    episodes_from_sessions,
    induced_ranking,
    optimal_ranking,
    ranking_expected_return,
)
from .metrics import (
    MetricReport,
    dcg_at_k,
    err_at_k,
    evaluate_policy,
    ndcg_at_k,
    significance_test,
)
from .rng import stream

__version__ = "0.1.0"

__all__ = [
    "ALPHA_GRID", "AgentState", "AttractionModel", "ClickModelSpec",
    "ConfigError", "DLAModels", "Dataset", "Document", "Episode",
    "EpisodeStep", "ExperimentConfig", "KINDS", "LinearRanker", "MDPConfig",
    "METHODS", "MLPRanker", "MetricReport", "PropensityTable", "Query",
    "RankerConfig", "RawState", "RunRecord", "Session", "TrainConfig",
    "UnsupportedClickModel", "attraction_prob", "build_config",
    "build_episode", "cm_ipw_propensity", "collect_sessions", "dcg_at_k",
    "default_spec", "dla_train", "dp_optimal_value",
    "enumerate_session_distribution", "episode_return",
    "episodes_from_sessions", "err_at_k", "estimate_cm_lambdas",
    "estimate_ipw_propensities", "evaluate_policy", "generate_synthetic",
    "induced_ranking", "ipw_train", "load_agent", "load_config",
    "load_letor", "load_sessions", "marginal_examination", "ndcg_at_k",
    "optimal_ranking", "parse_config", "parse_letor", "rank",
    "ranking_expected_return", "result_randomization", "run_experiment",
    "save_agent", "save_letor", "save_sessions", "significance_test",
    "simulate_session", "skyline_ranking", "stream", "summarize",
    "sweep_alpha", "to_letor", "train", "train_fraction",
    "train_logging_policy",
]
