import numpy as np
import pytest

from paraphrase_analogies.corpus import build_vocabulary, encode
from paraphrase_analogies.sgns import (EmbeddingPair, SgnsConfig, SgnsConfigError, _event_update,
                                       dot_product_matrix, event_gradient, event_loss, initialize,
                                       load_vectors, noise_cdf, save_vectors, sgns_loss, train)
from paraphrase_analogies.cooccurrence import count_pairs
from paraphrase_analogies.pmi_linearity import build_pmi


def _numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_event_gradient_matches_finite_differences(rng):
    for _ in range(10):
        d, k = 6, 3
        w, c, negs = rng.normal(size=d), rng.normal(size=d), rng.normal(size=(k, d))
        gw, gc, gn = event_gradient(w, c, negs)
        np.testing.assert_allclose(gw, _numeric_grad(lambda x: event_loss(x, c, negs), w), atol=1e-5)
        np.testing.assert_allclose(gc, _numeric_grad(lambda x: event_loss(w, x, negs), c), atol=1e-5)
        np.testing.assert_allclose(gn, _numeric_grad(lambda x: event_loss(w, c, x), negs), atol=1e-5)


def test_kernel_step_is_negative_gradient(rng):
    d, alpha = 5, 0.01
    word = rng.normal(size=(4, d))
    ctx = rng.normal(size=(4, d))
    negs = np.array([2, 3])
    w0, c0 = word.copy(), ctx.copy()
    gw, gc, gn = event_gradient(w0[0], c0[1], c0[negs])
    _event_update(word, ctx, 0, 1, negs, alpha)
    np.testing.assert_allclose(word[0], w0[0] - alpha * gw, atol=1e-12)
    np.testing.assert_allclose(ctx[1], c0[1] - alpha * gc, atol=1e-12)
    np.testing.assert_allclose(ctx[negs], c0[negs] - alpha * gn, atol=1e-12)


def test_noise_cdf_exponent():
    cdf = noise_cdf(np.array([4.0, 1.0]), 0.5)
    np.testing.assert_allclose(cdf, [2 / 3, 1.0])
    np.testing.assert_allclose(noise_cdf(np.array([1, 1, 2]), 1.0), [0.25, 0.5, 1.0])


def test_initialization_shapes_and_ranges():
    w, c = initialize(7, 10, seed=3)
    assert w.shape == c.shape == (7, 10)
    assert np.abs(w).max() <= 0.05 and not c.any()


@pytest.mark.parametrize("field,value", [("dim", 0), ("negative", 0), ("noise_exponent", 1.5),
                                         ("window_radius", 0), ("threads", 0), ("sample", -1.0)])
def test_config_validation(field, value):
    with pytest.raises(SgnsConfigError):
        SgnsConfig(**{field: value}).validate()


def _toy(rng, n=20000, v=50):
    toks = [f"w{i}" for i in rng.zipf(1.3, size=n) % v]
    vocab = build_vocabulary(toks, min_count=1)
    return vocab, encode(toks, vocab)


def test_training_is_deterministic_single_thread(rng):
    vocab, s = _toy(rng, 5000, 30)
    cfg = SgnsConfig(dim=8, epochs=2, threads=1, seed=5)
    a, b = train(s, vocab, cfg), train(s, vocab, cfg)
    assert a.word.tobytes() == b.word.tobytes() and a.context.tobytes() == b.context.tobytes()


def test_heldout_loss_decreases(rng):
    vocab, s = _toy(rng, 30000, 40)
    held = s.ids[-3000:]
    cfg = SgnsConfig(dim=10, epochs=1, negative=2, window_radius=2)
    w0, c0 = initialize(len(vocab), 10, cfg.seed)
    before = sgns_loss(EmbeddingPair(w0, c0), held, vocab.frequencies(), 2, 2)
    after = sgns_loss(train(s, vocab, cfg), held, vocab.frequencies(), 2, 2)
    assert after < before


def test_dot_products_approach_shifted_pmi(rng):
    # optimum of the SGNS objective: w.c = PMI(w, c) - log k; k = 1 here
    vocab, s = _toy(rng, 60000, 50)
    emb = train(s, vocab, SgnsConfig(dim=50, epochs=10, window_radius=2, alpha=0.025))
    pmi = build_pmi(count_pairs(s, 2)).matrix.tocoo()
    dots = dot_product_matrix(emb).rows(np.arange(len(vocab)))
    gap = np.abs(dots[pmi.row, pmi.col] - pmi.data)
    assert np.median(gap) < 1.0


def test_threads_run_and_stay_finite(rng):
    vocab, s = _toy(rng, 8000, 30)
    emb = train(s, vocab, SgnsConfig(dim=8, epochs=1, threads=4))
    assert np.isfinite(emb.word).all() and emb.word.shape == (len(vocab), 8)


def test_subsampling_runs(rng):
    vocab, s = _toy(rng, 8000, 30)
    emb = train(s, vocab, SgnsConfig(dim=8, epochs=1, sample=1e-3))
    assert np.isfinite(emb.context).all()


def test_vectors_text_roundtrip(tmp_path, rng):
    m = rng.normal(size=(3, 4)).astype(np.float32)
    save_vectors(tmp_path / "v.txt", ("a", "b", "c"), m)
    toks, back = load_vectors(tmp_path / "v.txt")
    assert toks == ("a", "b", "c")
    np.testing.assert_allclose(back, m, rtol=1e-6)


def test_column_views_match_rows(rng):
    p = EmbeddingPair(rng.normal(size=(5, 3)), rng.normal(size=(5, 3)))
    np.testing.assert_array_equal(p.W[:, 2], p.word[2])
    np.testing.assert_allclose(dot_product_matrix(p).row(1), (p.W.T @ p.C)[1])
