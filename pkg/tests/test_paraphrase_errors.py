import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from paraphrase_analogies.analogy_bats import AnalogyInstance
from paraphrase_analogies.cooccurrence import count_pairs, count_triplets
from paraphrase_analogies.paraphrase_errors import (EPSILON, ClipStats, ErrorDecomposition,
                                                    PairNotWellDefinedError, ParaphraseDistribution,
                                                    ParaphraseEstimator, ResidualUndefinedError,
                                                    category_norm_table, clipped_log_ratio, decompose,
                                                    decompose_analogy, decomposition_residual,
                                                    write_norm_detail, write_norm_table)
from paraphrase_analogies.pmi_linearity import SparsePmiMatrix, build_pmi

from conftest import stream


def random_model(rng, v):
    """Full-support joint over canonical pairs and centers, plus p(w, c)."""
    joint = np.zeros((v, v, v))
    iu = np.triu_indices(v, 1)
    joint[iu] = rng.random((len(iu[0]), v)) + 1e-3
    joint /= joint.sum()
    wc = rng.random((v, v)) + 1e-3
    wc /= wc.sum()
    return joint, wc


def model_pmi(wc):
    return SparsePmiMatrix.from_dense(np.log(wc / np.outer(wc.sum(1), wc.sum(0))))


def four_distinct(rng, v):
    return tuple(int(x) for x in rng.choice(v, size=4, replace=False))


@given(st.integers(4, 10), st.integers(0, 2**32 - 1))
def test_identity_holds_on_synthetic_distributions(v, seed):
    rng = np.random.default_rng(seed)
    joint, wc = random_model(rng, v)
    a, a_star, b, b_star = four_distinct(rng, v)
    dW = ParaphraseDistribution.from_joint(joint, wc, (a, b_star))
    dWs = ParaphraseDistribution.from_joint(joint, wc, (a_star, b))
    errs = decompose(dW, dWs)
    assert errs.clipping.total == 0
    res = decomposition_residual((a, a_star, b, b_star), model_pmi(wc), errs)
    assert np.abs(res).max() < 1e-9


def test_opposite_sign_convention_fails(rng):
    # the form with +rho leaves a residual of 2 rho
    joint, wc = random_model(rng, 6)
    a, a_star, b, b_star = 0, 1, 2, 3
    errs = decompose(ParaphraseDistribution.from_joint(joint, wc, (a, b_star)),
                     ParaphraseDistribution.from_joint(joint, wc, (a_star, b)))
    flipped = ErrorDecomposition(-errs.rho, errs.sigma_W, errs.sigma_Wstar, errs.tau_W, errs.tau_Wstar)
    res = decomposition_residual((a, a_star, b, b_star), model_pmi(wc), flipped)
    np.testing.assert_allclose(res, -2 * errs.rho, atol=1e-9)
    assert np.abs(res).max() > 1e-3


def test_terms_vanish_for_independent_paraphrases():
    # words independent given c and W* distributed like W: every error is zero
    v = 5
    rng = np.random.default_rng(1)
    p_c = rng.random(v) + 0.1
    p_c /= p_c.sum()
    p_w_given_c = rng.random((v, v)) + 0.1
    p_w_given_c /= p_w_given_c.sum(0, keepdims=True)
    wc = p_w_given_c * p_c
    joint = np.zeros((v, v, v))
    for i in range(v):
        for j in range(i + 1, v):
            joint[i, j] = p_w_given_c[i] * p_w_given_c[j] * p_c
    dW = ParaphraseDistribution.from_joint(joint, wc, (0, 1))
    np.testing.assert_allclose(decompose(dW, dW).sigma_W, 0.0, atol=1e-12)
    np.testing.assert_allclose(decompose(dW, dW).rho, 0.0, atol=1e-12)


def test_clipping_values():
    big = -math.log(EPSILON)
    stats = ClipStats()
    out = clipped_log_ratio([1.0, 0.0, 0.0, 2.0], [0.0, 1.0, 0.0, 1.0], EPSILON, stats)
    np.testing.assert_allclose(out, [big, -big, 0.0, math.log(2.0)])
    assert big == pytest.approx(34.538776394910684)
    assert (stats.pos_inf, stats.neg_inf, stats.nan, stats.total) == (1, 1, 1, 3)
    assert clipped_log_ratio(3.0, 1.0) == pytest.approx(math.log(3.0))


def test_epsilon_only_moves_clipped_entries():
    num, den = np.array([1.0, 0.0, 0.5, 0.0]), np.array([0.0, 2.0, 0.25, 0.0])
    a = clipped_log_ratio(num, den, 1e-15)
    b = clipped_log_ratio(num, den, 1e-12)
    assert a[2] == b[2] and a[3] == b[3] == 0.0
    assert a[0] - b[0] == pytest.approx(math.log(1e3))


def corpus_fixture(rng):
    ids = rng.integers(0, 12, size=4000).astype(np.int32)
    s = stream(ids, 12)
    return count_triplets(s, np.arange(12), 3), count_pairs(s, 3)


def test_corpus_estimates_match_counts(rng):
    tc, pc = corpus_fixture(rng)
    est = ParaphraseEstimator(tc, pc)
    d = est.distribution((5, 2))
    n = tc.vector(2, 5).astype(float)
    centers = tc.center_counts.astype(float)
    np.testing.assert_allclose(d.p_center_given_pair, n / n.sum())
    np.testing.assert_allclose(d.p_pair_given_center, n / centers)
    assert d.p_pair == pytest.approx(n.sum() / centers.sum())
    np.testing.assert_allclose(d.p_center_given_pair.sum(), 1.0)
    m = pc.to_csr().toarray()
    np.testing.assert_allclose(d.p_word_given_center[0], m[2] / m.sum(1))
    assert d.p_word[1] == pytest.approx(m[5].sum() / m.sum())


def test_identity_on_corpus_where_nothing_is_clipped(rng):
    tc, pc = corpus_fixture(rng)
    est = ParaphraseEstimator(tc, pc)
    a, a_star, b, b_star = 0, 1, 2, 3
    x = AnalogyInstance(a, a_star, b, b_star, frozenset({b}))
    errs = decompose_analogy(est, x)
    res = decomposition_residual(x, build_pmi(pc), errs)
    m = pc.to_csr().toarray()
    ok = (tc.vector(*x.W) > 0) & (tc.vector(*x.W_star) > 0) & (m[[a, a_star, b, b_star]] > 0).all(0)
    assert ok.sum() >= 6
    assert np.abs(res[ok]).max() < 1e-9


def test_unseen_pair_raises():
    tc = count_triplets(stream([0, 1, 9, 9, 9, 9, 2], 10), [0, 1, 2], 1)
    pc = count_pairs(stream([0, 1, 9, 9, 9, 9, 2], 10), 1)
    with pytest.raises(PairNotWellDefinedError):
        ParaphraseEstimator(tc, pc).distribution((0, 2))


def test_degenerate_analogy_raises(rng):
    tc, pc = corpus_fixture(rng)
    with pytest.raises(PairNotWellDefinedError):
        decompose_analogy(ParaphraseEstimator(tc, pc), AnalogyInstance(1, 2, 3, 1, frozenset({3})))


def test_residual_refuses_nonfinite():
    e = ErrorDecomposition(np.array([np.nan]), np.zeros(1), np.zeros(1), 0.0, 0.0)
    with pytest.raises(ResidualUndefinedError):
        decomposition_residual((0, 1, 2, 3), SparsePmiMatrix.from_dense(np.zeros((4, 1))), e)


def test_total_is_sum_of_terms(rng):
    e = ErrorDecomposition(rng.normal(size=5), rng.normal(size=5), rng.normal(size=5), 0.3, -0.2)
    np.testing.assert_allclose(e.total(), -e.rho + e.sigma_Wstar - e.sigma_W + 0.5)


def test_category_table_and_files(tmp_path, rng):
    tc, pc = corpus_fixture(rng)
    est = ParaphraseEstimator(tc, pc)
    xs = [AnalogyInstance(a, s, b, t, frozenset({b}), "X01")
          for a, s, b, t in [(0, 1, 2, 3), (4, 5, 6, 7), (1, 0, 3, 2)]]
    table = category_norm_table({"X01": xs, "Y02": []}, est)
    assert table[0].n_well_defined == 3 and table[1].empty
    assert np.isnan(table[1].mean("paraphrase"))
    write_norm_table(tmp_path / "t.tsv", table)
    write_norm_detail(tmp_path / "d.tsv", table, [f"w{i}" for i in range(12)])
    rows = [l.split("\t") for l in (tmp_path / "t.tsv").read_text().splitlines()]
    assert rows[0] == ["#statistic", "X01", "Y02"]
    assert [r[0] for r in rows[3:]] == [f"{agg}_{s}" for agg in ("mean", "median") for s in
                                        ("paraphrase_error_norm", "dependence_errors_sum_norm",
                                         "all_errors_sum_norm")]
    assert rows[3][2] == "nan"
    assert len((tmp_path / "d.tsv").read_text().splitlines()) == 4
