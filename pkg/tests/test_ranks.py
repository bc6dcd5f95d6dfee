import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from classex.ranks import (
    ScoreFormatError, ScoreTable, TieBreakConfig, break_ties, compute_ranks, histogram,
    ingest_scores, read_rank_file, read_score_file, write_score_file,
)
from conftest import naive_ranks


def test_example_ranks(three_class):
    assert compute_ranks(three_class).ranks[:, 0].tolist() == [3, 2, 1]
    assert histogram(compute_ranks(three_class)).counts.tolist() == [1, 1, 1]


def test_rank_middle():
    s = np.array([[[0.2, 0.9, 0.1]], [[0.0, 1.0, 0.5]], [[0.0, 0.1, 1.0]]])
    assert compute_ranks(ScoreTable(s)).ranks[0, 0] == 2


def test_ranks_match_double_loop():
    rng = np.random.default_rng(3)
    s = rng.standard_normal((6, 2, 6))
    np.testing.assert_array_equal(compute_ranks(ScoreTable(s)).ranks, naive_ranks(s))


def test_histogram_matches_tally():
    rng = np.random.default_rng(5)
    st_ = ScoreTable(rng.standard_normal((9, 4, 9)))
    ranks = compute_ranks(st_).ranks
    h = histogram(compute_ranks(st_))
    tally = [int(np.sum(ranks == rho)) for rho in range(1, 10)]
    assert h.counts.tolist() == tally
    assert h.total == 9 * 4


def test_perfect_classifier_counts_at_top():
    s = -np.ones((5, 2, 5)) + 2 * np.eye(5)[:, None, :]
    h = histogram(compute_ranks(ingest_scores(s)))
    assert h.counts.tolist() == [0, 0, 0, 0, 10]


def test_distinct_table_untouched(three_class):
    out = ingest_scores(three_class.scores)
    assert out.perturbed_rows == 0
    np.testing.assert_array_equal(out.scores, three_class.scores)


def test_tie_break_is_fair_across_seeds():
    s = np.zeros((2, 1, 2))
    ranks = []
    for seed in range(400):
        t = ingest_scores(s, TieBreakConfig(seed=seed))
        assert np.unique(t.scores[0, 0]).size == 2
        ranks.append(compute_ranks(t).ranks[0, 0])
    frac = np.mean(np.array(ranks) == 2)
    # binomial(400, 1/2): sd 0.025
    assert abs(frac - 0.5) < 0.1


def test_tie_break_only_touches_tied_rows():
    rng = np.random.default_rng(0)
    s = rng.standard_normal((4, 3, 4))
    s[1, 2, 3] = s[1, 2, 0]
    t = break_ties(s, TieBreakConfig(seed=1))
    assert t.perturbed_rows == 1
    mask = np.ones((4, 3), bool)
    mask[1, 2] = False
    np.testing.assert_array_equal(t.scores[mask], s[mask])
    assert np.unique(t.scores[1, 2]).size == 4


def test_tie_break_deterministic():
    s = np.round(np.random.default_rng(2).standard_normal((6, 2, 6)), 1)
    a = compute_ranks(ingest_scores(s, TieBreakConfig(seed=4))).ranks
    b = compute_ranks(ingest_scores(s, TieBreakConfig(seed=4))).ranks
    np.testing.assert_array_equal(a, b)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k1=st.integers(2, 7), r=st.integers(1, 3),
       transform=st.sampled_from([np.exp, np.arctan, lambda x: 3 * x + 1, lambda x: x ** 3]))
def test_monotone_relabel_invariance(seed, k1, r, transform):
    s = np.random.default_rng(seed).standard_normal((k1, r, k1))
    base = compute_ranks(ScoreTable(s)).ranks
    np.testing.assert_array_equal(compute_ranks(ScoreTable(transform(s))).ranks, base)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k1=st.integers(2, 10), r=st.integers(1, 4))
def test_rank_bounds_and_conservation(seed, k1, r):
    rt = compute_ranks(ScoreTable(np.random.default_rng(seed).standard_normal((k1, r, k1))))
    assert rt.ranks.min() >= 1 and rt.ranks.max() <= k1
    assert histogram(rt).counts.sum() == k1 * r


def test_score_table_is_read_only(three_class):
    with pytest.raises(ValueError):
        three_class.scores[0, 0, 0] = 1.0


@pytest.mark.parametrize("shape", [(3, 1, 2), (1, 1, 1), (3, 3)])
def test_bad_shapes_rejected(shape):
    with pytest.raises(ScoreFormatError):
        ingest_scores(np.zeros(shape))


def test_non_finite_rejected():
    s = np.zeros((2, 1, 2))
    s[0, 0, 1] = np.nan
    with pytest.raises(ScoreFormatError):
        ingest_scores(s)


def test_score_file_roundtrip(tmp_path, three_class):
    p = tmp_path / "s.csv"
    write_score_file(p, three_class, ["a comment"])
    np.testing.assert_array_equal(read_score_file(p), three_class.scores)


def test_malformed_row_names_row(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("true_class,obs,score_1,score_2\n1,1,0.1,0.2\n2,1,0.3\n")
    with pytest.raises(ScoreFormatError, match="row 3"):
        read_score_file(p)


def test_missing_record_rejected(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("true_class,obs,score_1,score_2\n1,1,0.1,0.2\n1,2,0.1,0.2\n2,1,0.3,0.4\n")
    with pytest.raises(ScoreFormatError, match="missing"):
        read_score_file(p)


def test_missing_file_names_path(tmp_path):
    with pytest.raises(ScoreFormatError, match="nope.csv"):
        read_score_file(tmp_path / "nope.csv")


def test_rank_file(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("true_class,obs,rank\n1,1,3\n2,1,2\n3,1,1\n")
    rt = read_rank_file(p)
    assert rt.ranks[:, 0].tolist() == [3, 2, 1]
    p.write_text("true_class,obs,rank\n1,1,4\n2,1,2\n3,1,1\n")
    with pytest.raises(ScoreFormatError):
        read_rank_file(p)
