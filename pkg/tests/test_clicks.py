"""Click models: attraction, closed-form examination, sampling, persistence."""
import numpy as np
import pytest

from offrank.clicks import (
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
from offrank.data import Document
from offrank.rng import stream


def _docs(rels):
    return [Document(i, np.zeros(2), r) for i, r in enumerate(rels)]


def test_attraction_floor_and_ceiling():
    m = AttractionModel(epsilon=0.1, r_max=4)
    assert attraction_prob(0, m) == pytest.approx(0.1)
    assert attraction_prob(4, m) == pytest.approx(1.0)
    assert attraction_prob(4, AttractionModel(epsilon=0.7, r_max=4)) == pytest.approx(1.0)


def test_attraction_mid_grade():
    # 0.1 + 0.9 * (2^2 - 1) / (2^4 - 1) = 0.1 + 0.9 * 3 / 15
    m = AttractionModel(epsilon=0.1, r_max=4)
    assert attraction_prob(2, m) == pytest.approx(0.28)


def test_attraction_rejects_out_of_range():
    m = AttractionModel()
    with pytest.raises(ValueError):
        attraction_prob(5, m)
    with pytest.raises(ValueError):
        attraction_prob(-1, m)


def test_attraction_model_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        AttractionModel(epsilon=1.0)


def test_spec_validation():
    with pytest.raises(ValueError, match="unknown click model"):
        ClickModelSpec(kind="NOPE", K=2, rho=[1.0, 0.5])
    with pytest.raises(ValueError, match="length K"):
        ClickModelSpec(kind="PBM", K=3, rho=[1.0, 0.5])
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        ClickModelSpec(kind="PBM", K=2, rho=[1.0, 1.5])


def test_first_rank_always_examined_for_cascade_family():
    for kind in ("CASCADE", "DCM", "CCM"):
        spec = default_spec(kind, K=5)
        assert marginal_examination(spec, [], 1) == pytest.approx(1.0)


def test_pbm_examination_reads_rho_power_eta():
    spec = ClickModelSpec(kind="PBM", K=3, rho=[1.0, 0.5, 1.0 / 3.0], eta=1.0)
    assert marginal_examination(spec, [0.9, 0.9], 3) == pytest.approx(1.0 / 3.0)
    spec2 = ClickModelSpec(kind="PBM", K=3, rho=[1.0, 0.5, 1.0 / 3.0], eta=2.0)
    assert marginal_examination(spec2, [0.9, 0.9], 3) == pytest.approx(1.0 / 9.0)


def test_cascade_examination_product():
    spec = default_spec("CASCADE", K=3)
    assert marginal_examination(spec, [0.5, 0.28], 3) == pytest.approx(0.36)


def test_dcm_certain_click_certain_abandon():
    spec = ClickModelSpec(kind="DCM", K=2, rho=[1.0, 0.5], lam=[0.0, 0.0])
    assert marginal_examination(spec, [1.0], 2) == pytest.approx(0.0)


def test_ubm_has_no_click_free_examination():
    spec = default_spec("UBM", K=4)
    with pytest.raises(UnsupportedClickModel):
        marginal_examination(spec, [0.5], 2)


def test_examination_ignores_documents_below_k():
    # chi at rank k only sees the k-1 prefix attractions it is handed
    spec = default_spec("CASCADE", K=6)
    assert marginal_examination(spec, [0.2, 0.3], 3) == \
        marginal_examination(default_spec("CASCADE", K=4), [0.2, 0.3], 3)


def test_pbm_examination_strictly_decreasing():
    spec = default_spec("PBM", K=8, eta=1.0)
    vals = [marginal_examination(spec, [0.5] * (k - 1), k) for k in range(1, 9)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_simulate_zero_attraction_never_clicks():
    attraction = AttractionModel(epsilon=0.0, r_max=4)
    docs = _docs([0, 0, 0])
    for kind in ("PBM", "CASCADE", "DCM", "CCM", "UBM"):
        spec = default_spec(kind, K=3)
        rng = stream(0, "clicks", kind)
        for _ in range(50):
            s = simulate_session(spec, docs, attraction, rng)
            assert s.clicks == [0, 0, 0]


def test_simulate_deterministic_given_stream():
    docs = _docs([3, 1, 2, 0])
    attraction = AttractionModel()
    spec = default_spec("DCM", K=4)
    a = [simulate_session(spec, docs, attraction, stream(7, "s")).clicks for _ in range(20)]
    b = [simulate_session(spec, docs, attraction, stream(7, "s")).clicks for _ in range(20)]
    assert a == b


def test_cascade_sessions_have_at_most_one_click():
    docs = _docs([4, 3, 2, 1])
    spec = default_spec("CASCADE", K=4)
    rng = stream(1, "cascade")
    for _ in range(500):
        s = simulate_session(spec, docs, AttractionModel(), rng)
        assert sum(s.clicks) <= 1


def test_simulate_rejects_overlong_lists():
    spec = default_spec("PBM", K=2)
    with pytest.raises(ValueError, match="exceeds"):
        simulate_session(spec, _docs([0, 0, 0]), AttractionModel(), stream(0))


def test_pbm_without_bias_clicks_at_attraction_rate():
    # eta=0 turns off examination, so CTR at each rank is just alpha
    docs = _docs([2, 2, 2])
    attraction = AttractionModel(epsilon=0.1, r_max=4)
    spec = default_spec("PBM", K=3, eta=0.0)
    rng = stream(3, "nobias")
    n = 20000
    counts = np.zeros(3)
    for _ in range(n):
        counts += simulate_session(spec, docs, attraction, rng).clicks
    p = 0.28
    sigma = np.sqrt(p * (1 - p) / n)
    np.testing.assert_allclose(counts / n, p, atol=4 * sigma)


def test_enumeration_is_a_distribution_for_every_model():
    attrs = [0.7, 0.3, 0.5]
    for kind in ("PBM", "CASCADE", "DCM", "CCM", "UBM"):
        spec = default_spec(kind, K=3)
        dist = enumerate_session_distribution(spec, attrs)
        assert sum(dist.values()) == pytest.approx(1.0, abs=1e-12)
        assert all(p >= 0 for p in dist.values())


def test_enumeration_matches_closed_form_marginals():
    # P(C_k = 1) summed from the exact distribution equals chi(k) * alpha_k
    attrs = [0.7, 0.3, 0.5]
    for kind in ("PBM", "CASCADE", "DCM", "CCM"):
        spec = default_spec(kind, K=3)
        dist = enumerate_session_distribution(spec, attrs)
        for k in range(1, 4):
            marginal = sum(p for clicks, p in dist.items() if clicks[k - 1] == 1)
            chi = marginal_examination(spec, attrs[:k - 1], k)
            np.testing.assert_allclose(marginal, chi * attrs[k - 1], atol=1e-12,
                                       err_msg=f"{kind} rank {k}")


def test_sampler_matches_enumeration_marginals():
    docs = _docs([3, 1, 2])
    attraction = AttractionModel()
    attrs = [attraction_prob(d.relevance, attraction) for d in docs]
    for kind in ("DCM", "UBM"):
        spec = default_spec(kind, K=3)
        dist = enumerate_session_distribution(spec, attrs)
        expect = np.array([sum(p for c, p in dist.items() if c[k] == 1) for k in range(3)])
        rng = stream(11, "mc", kind)
        n = 20000
        counts = np.zeros(3)
        for _ in range(n):
            counts += simulate_session(spec, docs, attraction, rng).clicks
        sigma = np.sqrt(expect * (1 - expect) / n)
        assert np.all(np.abs(counts / n - expect) <= 4 * sigma + 1e-9), \
            f"{kind}: {counts / n} vs {expect}"


def test_session_validation():
    with pytest.raises(ValueError, match="equal length"):
        Session(0, [1, 2], [0])
    with pytest.raises(ValueError, match="duplicate"):
        Session(0, [1, 1], [0, 0])


def test_session_log_round_trip(tmp_path):
    docs = _docs([3, 0, 2, 1])
    spec = default_spec("PBM", K=4)
    rng = stream(5, "log")
    sessions = [simulate_session(spec, docs, AttractionModel(), rng, query_id=q)
                for q in (4, 4, 9)]
    path = tmp_path / "sessions.csv"
    save_sessions(path, sessions)
    header = path.read_text().splitlines()[0]
    assert header == "query_id,rank,doc_id,click"
    again = load_sessions(path)
    assert [(s.query_id, s.ranking, s.clicks) for s in again] == \
        [(s.query_id, s.ranking, s.clicks) for s in sessions]


def test_session_log_rejects_foreign_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="header"):
        load_sessions(path)
