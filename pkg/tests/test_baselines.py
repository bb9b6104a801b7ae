"""Comparison rankers: logging policy, propensity estimation, IPW, CM-IPW, DLA."""
import math

import numpy as np
import pytest
from scipy import stats

from offrank.baselines import (
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
    load_propensities,
    pair_violations,
    result_randomization,
    save_propensities,
    skyline_ranking,
    train_logging_policy,
)
from offrank.clicks import (
    AttractionModel,
    Session,
    attraction_prob,
    default_spec,
    enumerate_session_distribution,
)
from offrank.data import Document, Query
from offrank.metrics import evaluate_policy
from offrank.rng import stream

D = 7  # one-hot relevance (5 slots) + 2 noise dims


def _query(rels, qid=0, seed=0, noise=0.5):
    rng = np.random.default_rng(seed + 1000 * (qid + 1))
    docs = []
    for i, r in enumerate(rels):
        f = noise * rng.normal(size=D)
        f[r] += 1.0
        docs.append(Document(i, f, int(r)))
    return Query(qid, docs)


def _corpus(n_queries=10, n_docs=5, seed=0, noise=0.5):
    rng = np.random.default_rng(seed)
    return [_query(list(rng.integers(0, 5, size=n_docs)), qid=qid, seed=seed,
                   noise=noise)
            for qid in range(n_queries)]


# ---------------------------------------------------------------------------
# logging policy

def test_logging_policy_fits_separable_preferences():
    # low feature noise keeps the one-hot relevance block linearly separable
    queries = _corpus(n_queries=8, noise=0.1)
    ranker = train_logging_policy(queries, epochs=30, seed=0)
    assert pair_violations(ranker, queries) == 0


def test_logging_policy_rejects_degenerate_inputs():
    with pytest.raises(ValueError, match="no training queries"):
        train_logging_policy([])
    tied = [Query(0, [Document(0, np.ones(D), 2), Document(1, np.zeros(D), 2)])]
    with pytest.raises(ValueError, match="no comparable document pairs"):
        train_logging_policy(tied)


def test_logging_policy_sits_between_random_and_skyline():
    queries = _corpus(n_queries=20, seed=3)
    ranker = train_logging_policy(queries, epochs=10, seed=0)
    rng = np.random.default_rng(0)
    random_fn = lambda q: list(rng.permutation([d.doc_id for d in q.documents]))
    logged = evaluate_policy(lambda q: ranker.rank(q, 5), queries, ks=(5,))
    randomized = evaluate_policy(random_fn, queries, ks=(5,))
    sky = evaluate_policy(skyline_ranking, queries, ks=(5,))
    assert sky.mean("ndcg", 5) == pytest.approx(1.0, abs=1e-12)
    assert randomized.mean("ndcg", 5) < logged.mean("ndcg", 5) <= 1.0


def test_linear_ranker_breaks_ties_by_doc_id():
    ranker = LinearRanker(np.zeros(D))
    q = _query([1, 2, 3], qid=0)
    assert ranker.rank(q, 3) == [0, 1, 2]


def test_skyline_orders_by_relevance_then_id():
    q = Query(0, [Document(0, np.zeros(2), 1), Document(1, np.zeros(2), 4),
                  Document(2, np.zeros(2), 1), Document(3, np.zeros(2), 0)])
    assert skyline_ranking(q) == [1, 0, 2, 3]


# ---------------------------------------------------------------------------
# randomization and propensity estimation

def test_result_randomization_counts_and_validation():
    queries = _corpus(n_queries=3)
    spec = default_spec("PBM", K=5)
    out = result_randomization(queries, spec, AttractionModel(), 7, 5,
                               stream(0, "rz"))
    assert len(out) == 7
    assert all(len(s.ranking) == 5 for s in out)
    with pytest.raises(ValueError, match="n_sessions"):
        result_randomization(queries, spec, AttractionModel(), 0, 5, stream(0, "rz"))


def test_result_randomization_occupies_ranks_uniformly():
    queries = [_query([0, 1, 2, 3], qid=0)]
    spec = default_spec("PBM", K=4)
    sessions = result_randomization(queries, spec, AttractionModel(), 4000, 4,
                                    stream(1, "occ"))
    counts = np.zeros((4, 4))  # doc x rank
    for s in sessions:
        for k, doc in enumerate(s.ranking):
            counts[doc, k] += 1
    freq = counts / 4000.0
    assert np.all(np.abs(freq - 0.25) < 0.03)


def test_result_randomization_is_stream_deterministic():
    queries = _corpus(n_queries=2)
    spec = default_spec("CASCADE", K=5)
    a = result_randomization(queries, spec, AttractionModel(), 50, 5, stream(7, "det"))
    b = result_randomization(queries, spec, AttractionModel(), 50, 5, stream(7, "det"))
    assert [(s.ranking, s.clicks) for s in a] == [(s.ranking, s.clicks) for s in b]


def _sessions_from_clicks(click_rows):
    return [Session(0, list(range(len(row))), list(row)) for row in click_rows]


def test_ipw_estimator_closed_form():
    table = estimate_ipw_propensities(_sessions_from_clicks(
        [[1, 0, 1], [1, 1, 0], [0, 1, 0]]))
    np.testing.assert_allclose(table.theta, [1.0, 1.0, 0.5])


def test_ipw_estimator_marks_unclicked_ranks_nan():
    table = estimate_ipw_propensities(_sessions_from_clicks([[1, 0, 0], [1, 0, 0]]))
    assert table.theta[0] == 1.0
    assert np.isnan(table.theta[1]) and np.isnan(table.theta[2])


def test_ipw_estimator_caps_at_one():
    table = estimate_ipw_propensities(_sessions_from_clicks(
        [[1, 1, 0], [0, 1, 0], [0, 1, 0]]))
    assert table.theta[1] == 1.0


def test_ipw_estimator_input_validation():
    with pytest.raises(ValueError, match="empty session log"):
        estimate_ipw_propensities([])
    with pytest.raises(ValueError, match="rank 1"):
        estimate_ipw_propensities(_sessions_from_clicks([[0, 1]]))


def test_ipw_estimator_recovers_examination_ratio():
    # uniform 4-doc randomization, eta=1: theta_k -> rho_k / rho_1
    queries = [_query([0, 1, 2, 3], qid=0)]
    spec = default_spec("PBM", K=4)
    sessions = result_randomization(queries, spec, AttractionModel(), 30000, 4,
                                    stream(2, "ipwrec"))
    table = estimate_ipw_propensities(sessions, K=4)
    np.testing.assert_allclose(table.theta, spec.rho / spec.rho[0], rtol=0.08)


def test_cm_lambda_estimator_closed_form():
    table = estimate_cm_lambdas(_sessions_from_clicks(
        [[1, 0, 1], [1, 1, 0], [0, 1, 0]]))
    np.testing.assert_allclose(table.lam, [1.0, 0.0, 0.0])


def test_cm_lambda_estimator_marks_unclicked_ranks_nan():
    table = estimate_cm_lambdas(_sessions_from_clicks([[1, 0, 0, 0]]))
    assert table.lam[0] == 0.0
    assert np.isnan(table.lam[1:]).all()


def test_cm_lambda_is_zero_under_cascade_clicks():
    # cascade sessions never click twice, so every defined lambda is 0
    queries = _corpus(n_queries=4)
    spec = default_spec("CASCADE", K=5)
    sessions = result_randomization(queries, spec, AttractionModel(), 3000, 5,
                                    stream(3, "cas"))
    table = estimate_cm_lambdas(sessions, K=5)
    defined = table.lam[np.isfinite(table.lam)]
    assert defined.size > 0
    np.testing.assert_allclose(defined, 0.0)


def test_cm_lambda_matches_enumerated_dcm_truth():
    # fixed 3-doc list under DCM: P(click after k | click at k) by enumeration
    spec = default_spec("DCM", K=3)
    attraction = AttractionModel()
    docs = [Document(0, np.zeros(2), 4), Document(1, np.zeros(2), 2),
            Document(2, np.zeros(2), 3)]
    attrs = [attraction_prob(d.relevance, attraction) for d in docs]
    dist = enumerate_session_distribution(spec, attrs)
    truth = np.zeros(3)
    for k in range(3):
        at = sum(p for c, p in dist.items() if c[k])
        after = sum(p for c, p in dist.items() if c[k] and any(c[k + 1:]))
        truth[k] = after / at if at > 0 else np.nan
    rng = stream(4, "dcmlam")
    from offrank.clicks import simulate_session
    sessions = [simulate_session(spec, docs, attraction, rng) for _ in range(20000)]
    table = estimate_cm_lambdas(sessions, K=3)
    np.testing.assert_allclose(table.lam[:2], truth[:2], atol=0.03)


def test_cm_ipw_propensity_fixtures():
    lam = [0.4, 0.5, 0.6]
    assert cm_ipw_propensity([], lam) == 1.0
    assert cm_ipw_propensity([0, 0], lam) == 1.0
    assert cm_ipw_propensity([1], lam) == pytest.approx(0.4)
    assert cm_ipw_propensity([1, 1], lam) == pytest.approx(0.2)
    assert cm_ipw_propensity([1], [0.0, 0.5]) == 0.0


def test_cm_ipw_propensity_shrinks_with_more_clicks():
    lam = [0.7, 0.7, 0.7, 0.7]
    prev = 1.0
    for n in range(1, 5):
        cur = cm_ipw_propensity([1] * n, lam)
        assert cur < prev
        prev = cur


def test_propensity_table_validation():
    with pytest.raises(ValueError, match="kind"):
        PropensityTable("XYZ", theta=np.ones(3))
    with pytest.raises(ValueError, match="missing"):
        PropensityTable("IPW")
    with pytest.raises(ValueError, match="lie in"):
        PropensityTable("IPW", theta=np.array([1.0, 1.5]))
    with pytest.raises(ValueError, match="lie in"):
        PropensityTable("CM", lam=np.array([-0.1, 0.5]))
    # NaN entries are allowed; they mean "undefined at this rank"
    PropensityTable("IPW", theta=np.array([1.0, np.nan]))


def test_propensity_csv_round_trip(tmp_path):
    table = PropensityTable("IPW", theta=np.array([1.0, 0.5, 1.0 / 3.0]))
    path = tmp_path / "props.csv"
    save_propensities(path, table)
    lines = path.read_text().splitlines()
    assert lines[0] == "kind,rank,value"
    again = load_propensities(path)
    assert again.kind == "IPW"
    np.testing.assert_array_equal(again.theta, table.theta)
    cm = PropensityTable("CM", lam=np.array([0.25, 0.75]))
    save_propensities(path, cm)
    back = load_propensities(path)
    assert back.kind == "CM"
    np.testing.assert_array_equal(back.lam, cm.lam)


def test_load_propensities_rejects_foreign_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\nIPW,1,1.0\n")
    with pytest.raises(ValueError, match="header"):
        load_propensities(path)


# ---------------------------------------------------------------------------
# inverse-propensity-weighted training

def _logged_sessions(queries, spec, attraction, rank_fn, spq, key):
    return collect_sessions(rank_fn, queries, spec, attraction, spq,
                            stream(11, key))


def test_ipw_train_invariant_to_uniform_propensity_rescaling():
    queries = _corpus(n_queries=4)
    spec = default_spec("PBM", K=5)
    sessions = _logged_sessions(queries, spec, AttractionModel(),
                                lambda q: [d.doc_id for d in q.documents], 30, "inv")
    cfg = RankerConfig(hidden_width=8, epochs=10, seed=0)
    flat, _ = ipw_train(sessions, queries, PropensityTable("IPW", theta=np.ones(5)),
                        cfg)
    halved, _ = ipw_train(sessions, queries,
                          PropensityTable("IPW", theta=np.full(5, 0.5)), cfg)
    for q in queries:
        np.testing.assert_allclose(halved.scores(q), flat.scores(q), atol=1e-9)


def test_ipw_train_loss_decreases():
    queries = _corpus(n_queries=6, seed=1)
    spec = default_spec("PBM", K=5)
    sessions = _logged_sessions(queries, spec, AttractionModel(),
                                skyline_ranking, 50, "dec")
    table = PropensityTable("IPW", theta=spec.rho / spec.rho[0])
    _, trace = ipw_train(sessions, queries, table,
                         RankerConfig(hidden_width=16, epochs=40, seed=0))
    assert trace[-1] < trace[0]


def test_ipw_train_rejects_clickless_log():
    queries = [_query([0, 0], qid=0)]
    sessions = [Session(0, [0, 1], [0, 0])]
    with pytest.raises(ValueError, match="degenerate log"):
        ipw_train(sessions, queries, PropensityTable("IPW", theta=np.ones(2)),
                  RankerConfig(hidden_width=4, epochs=1))


def test_ipw_train_with_true_propensities_beats_the_logging_order():
    queries = _corpus(n_queries=12, seed=5)
    spec = default_spec("PBM", K=5)
    logging_fn = lambda q: sorted((d.doc_id for d in q.documents),
                                  key=lambda i: (i + q.query_id) % 5)
    sessions = _logged_sessions(queries, spec, AttractionModel(), logging_fn,
                                120, "e2e")
    table = PropensityTable("IPW", theta=spec.rho / spec.rho[0])
    ranker, _ = ipw_train(sessions, queries, table,
                          RankerConfig(hidden_width=16, epochs=120, seed=0))
    learned = evaluate_policy(lambda q: ranker.rank(q, 5), queries, ks=(5,))
    logged = evaluate_policy(logging_fn, queries, ks=(5,))
    assert learned.mean("ndcg", 5) > logged.mean("ndcg", 5)


def test_ipw_click_weights_are_unbiased_for_attraction():
    # PBM clicks are independent Bernoulli per rank, so a million sessions
    # collapse to one binomial count per rank; reweighting each click by
    # 1/theta_k must recover every document's attraction within 1%
    spec = default_spec("PBM", K=5)
    attraction = AttractionModel()
    rels = [3, 1, 4, 0, 2]
    alphas = np.array([attraction_prob(r, attraction) for r in rels])
    chi = spec.rho  # eta = 1, identity ranking
    theta = spec.rho / spec.rho[0]
    n = 10 ** 6
    rng = stream(6, "unbiased")
    counts = rng.binomial(n, chi * alphas)
    estimate = counts / (n * theta)
    np.testing.assert_allclose(estimate, alphas, rtol=0.01)
    loss_weights = alphas * np.array([2.0, 0.5, 1.0, 3.0, 1.5])
    weighted = (counts / (n * theta)) @ np.array([2.0, 0.5, 1.0, 3.0, 1.5])
    assert abs(weighted - loss_weights.sum()) <= 0.01 * loss_weights.sum()


def test_cm_ipw_weighting_differs_from_plain_ipw_on_multiclick_logs():
    queries = _corpus(n_queries=4, seed=2)
    spec = default_spec("UBM", K=5)
    sessions = _logged_sessions(queries, spec, AttractionModel(),
                                skyline_ranking, 40, "cmvs")
    cfg = RankerConfig(hidden_width=8, epochs=5, seed=0)
    ipw_table = PropensityTable("IPW", theta=spec.rho / spec.rho[0])
    cm_table = PropensityTable("CM", lam=np.full(5, 0.5))
    a, _ = ipw_train(sessions, queries, ipw_table, cfg)
    b, _ = ipw_train(sessions, queries, cm_table, cfg)
    diffs = [np.max(np.abs(a.scores(q) - b.scores(q))) for q in queries]
    assert max(diffs) > 1e-6


# ---------------------------------------------------------------------------
# dual learning

def test_dla_rejects_degenerate_logs():
    queries = [_query([0, 1], qid=0)]
    with pytest.raises(ValueError, match="empty session log"):
        dla_train([], queries, K=2)
    blank = [Session(0, [0, 1], [0, 0])]
    with pytest.raises(ValueError, match="no clicks anywhere"):
        dla_train(blank, queries, K=2)


def test_dla_propensity_ratios_normalize_to_rank_one():
    models = DLAModels(MLPRanker(None, 3), np.array([0.2, -0.1, 0.4]))
    ratios = models.propensity_ratios()
    assert ratios[0] == pytest.approx(1.0)
    np.testing.assert_allclose(ratios, np.exp([0.0, -0.3, 0.2]))


def test_dla_learns_flat_propensities_without_position_bias():
    # randomized lists decouple rank from relevance; with eta=0 every rank is
    # examined, so the position model should stay close to uniform
    queries = _corpus(n_queries=8, seed=7)
    spec = default_spec("PBM", K=5, eta=0.0)
    sessions = result_randomization(queries, spec, AttractionModel(), 4000, 5,
                                    stream(12, "flat"))
    models, _ = dla_train(sessions, queries, K=5,
                          config=RankerConfig(hidden_width=16, epochs=60, seed=0))
    ratios = models.propensity_ratios()
    assert ratios.max() / ratios.min() < 1.5


def test_dla_recovers_position_bias_ordering_under_pbm():
    queries = _corpus(n_queries=12, seed=9)
    spec = default_spec("PBM", K=5)
    sessions = result_randomization(queries, spec, AttractionModel(), 8000, 5,
                                    stream(13, "pbm"))
    models, trace = dla_train(sessions, queries, K=5,
                              config=RankerConfig(hidden_width=16, epochs=100,
                                                  seed=0))
    ratios = models.propensity_ratios()
    corr = stats.spearmanr(ratios, spec.rho).statistic
    assert corr >= 0.9
    assert all(math.isfinite(r) and math.isfinite(p) for _, r, p in trace)


def test_dla_is_deterministic():
    queries = _corpus(n_queries=3, seed=4)
    spec = default_spec("PBM", K=5)
    sessions = _logged_sessions(queries, spec, AttractionModel(),
                                skyline_ranking, 20, "det")
    cfg = RankerConfig(hidden_width=8, epochs=8, seed=1)
    a, trace_a = dla_train(sessions, queries, K=5, config=cfg)
    b, trace_b = dla_train(sessions, queries, K=5, config=cfg)
    np.testing.assert_array_equal(a.propensity_scores, b.propensity_scores)
    assert trace_a == trace_b


# ---------------------------------------------------------------------------
# session collection and config validation

def test_collect_sessions_counts_and_query_ids():
    queries = _corpus(n_queries=3)
    spec = default_spec("DCM", K=5)
    out = collect_sessions(skyline_ranking, queries, spec, AttractionModel(), 4,
                           stream(0, "col"))
    assert len(out) == 12
    assert [s.query_id for s in out] == [0] * 4 + [1] * 4 + [2] * 4
    first = skyline_ranking(queries[0])
    assert all(s.ranking == first for s in out[:4])


def test_ranker_config_validation():
    with pytest.raises(ValueError, match="hidden"):
        RankerConfig(hidden_width=0)
    with pytest.raises(ValueError, match="clip"):
        RankerConfig(clip=0.0)
    with pytest.raises(ValueError, match="rates"):
        RankerConfig(lr=-1.0)
    with pytest.raises(ValueError, match="rates"):
        RankerConfig(epochs=-1)
