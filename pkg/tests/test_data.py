"""Dataset parsing, synthetic generation, and subsampling."""
import numpy as np
import pytest

from offrank.data import (
    generate_synthetic,
    load_letor,
    parse_letor,
    save_letor,
    to_letor,
    train_fraction,
)


def test_parse_empty_text():
    assert parse_letor("") == []


def test_parse_single_line():
    queries = parse_letor("2 qid:7 1:0.5 3:1.0")
    assert len(queries) == 1
    q = queries[0]
    assert q.query_id == 7
    assert len(q.documents) == 1
    d = q.documents[0]
    assert d.relevance == 2
    np.testing.assert_allclose(d.features, [0.5, 0.0, 1.0])


def test_parse_groups_by_qid_in_first_appearance_order():
    text = "0 qid:1 1:1.0\n1 qid:1 1:2.0\n2 qid:2 1:3.0\n"
    queries = parse_letor(text)
    assert [q.query_id for q in queries] == [1, 2]
    assert [len(q.documents) for q in queries] == [2, 1]


def test_parse_comments_and_blank_lines():
    text = "# header\n\n1 qid:3 2:0.25  # trailing note\n"
    queries = parse_letor(text)
    assert len(queries) == 1
    np.testing.assert_allclose(queries[0].documents[0].features, [0.0, 0.25])


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ValueError, match="line 2"):
        parse_letor("1 qid:1 1:0.0\nnot a line")
    with pytest.raises(ValueError, match="label 9"):
        parse_letor("9 qid:1 1:0.0")
    with pytest.raises(ValueError, match="positive"):
        parse_letor("1 qid:1 0:0.5")


def test_letor_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    lines = []
    for qid in (1, 1, 2, 2, 2):
        feats = " ".join(f"{fid}:{rng.normal()!r}" for fid in range(1, 5))
        lines.append(f"{int(rng.integers(0, 5))} qid:{qid} {feats}")
    queries = parse_letor("\n".join(lines))
    path = tmp_path / "part.txt"
    save_letor(path, queries)
    again = load_letor(path)
    assert len(again) == len(queries)
    for qa, qb in zip(queries, again):
        assert qa.query_id == qb.query_id
        for da, db in zip(qa.documents, qb.documents):
            assert da.relevance == db.relevance
            np.testing.assert_array_equal(da.features, db.features)


def test_round_trip_is_exact_for_synthetic_floats():
    ds = generate_synthetic(5, 4, 6, seed=11)
    again = parse_letor(to_letor(ds.train))
    for qa, qb in zip(ds.train, again):
        for da, db in zip(qa.documents, qb.documents):
            np.testing.assert_array_equal(da.features, db.features)


def test_generate_synthetic_split_sizes():
    ds = generate_synthetic(10, 3, 5, seed=0)
    assert (len(ds.train), len(ds.validation), len(ds.test)) == (6, 2, 2)
    ids = [q.query_id for part in (ds.train, ds.validation, ds.test) for q in part]
    assert len(set(ids)) == len(ids)


def test_generate_synthetic_single_query():
    ds = generate_synthetic(1, 1, 5, seed=0)
    total = len(ds.train) + len(ds.validation) + len(ds.test)
    assert total == 1


def test_generate_synthetic_deterministic():
    a = generate_synthetic(8, 4, 6, seed=42)
    b = generate_synthetic(8, 4, 6, seed=42)
    for qa, qb in zip(a.train + a.validation + a.test, b.train + b.validation + b.test):
        for da, db in zip(qa.documents, qb.documents):
            assert da.relevance == db.relevance
            np.testing.assert_array_equal(da.features, db.features)


def test_generate_synthetic_relevance_roughly_uniform():
    ds = generate_synthetic(100, 10, 8, seed=7)
    rels = [d.relevance for part in (ds.train, ds.validation, ds.test)
            for q in part for d in q.documents]
    counts = np.bincount(rels, minlength=5) / len(rels)
    np.testing.assert_allclose(counts, 0.2, atol=0.05)


def test_generate_synthetic_feature_dims_agree():
    ds = generate_synthetic(9, 3, 7, seed=1)
    for part in (ds.train, ds.validation, ds.test):
        for q in part:
            for d in q.documents:
                assert len(d.features) == ds.feature_dim == 7


def test_generate_synthetic_rejects_narrow_features():
    with pytest.raises(ValueError, match="feature_dim"):
        generate_synthetic(4, 3, 3, r_max=4, seed=0)


def test_train_fraction_identity():
    ds = generate_synthetic(10, 2, 5, seed=0)
    assert train_fraction(ds.train, 1.0, seed=5) == ds.train


def test_train_fraction_ceiling():
    ds = generate_synthetic(170, 2, 5, seed=0)  # 102 train queries
    assert len(train_fraction(ds.train, 0.01, seed=5)) == 2


def test_train_fraction_deterministic():
    ds = generate_synthetic(100, 2, 5, seed=0)
    a = train_fraction(ds.train, 0.1, seed=9)
    b = train_fraction(ds.train, 0.1, seed=9)
    assert [q.query_id for q in a] == [q.query_id for q in b]
    assert len(a) == 6


def test_train_fraction_rejects_empty():
    with pytest.raises(ValueError):
        train_fraction([], 0.5, seed=0)
