"""Skip-gram with negative sampling.

Follows the reference word2vec update: for each (center, context) event the
center's word vector is scored against the context vector (label 1) and
``negative`` noise vectors (label 0), context vectors are updated in place
and the accumulated word-vector step is applied afterwards.  Windows have a
fixed radius, as in the counting code, so the factorized statistics refer
to the same windows as the PMI estimate.

With ``threads > 1`` workers update shared matrices without locks
(hogwild); races make results run-dependent.  ``threads == 1`` is
bit-reproducible for a given seed.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import numba

from .corpus import TokenStream, Vocabulary

log = logging.getLogger(__name__)

_LCG_MUL = np.uint64(25214903917)
_LCG_ADD = np.uint64(11)


class SgnsConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SgnsConfig:
    dim: int = 500
    negative: int = 1
    noise_exponent: float = 1.0
    window_radius: int = 5
    epochs: int = 5
    alpha: float = 0.025
    min_alpha_fraction: float = 1e-4
    sample: float = 0.0  # 0 disables frequent-word subsampling
    seed: int = 1
    threads: int = 1

    def validate(self) -> None:
        if self.dim < 1:
            raise SgnsConfigError("dim must be >= 1")
        if self.negative < 1:
            raise SgnsConfigError("negative must be >= 1")
        if not 0.0 <= self.noise_exponent <= 1.0:
            raise SgnsConfigError("noise_exponent must lie in [0, 1]")
        if self.window_radius < 1:
            raise SgnsConfigError("window_radius must be >= 1")
        if self.epochs < 1 or self.alpha <= 0 or self.threads < 1 or self.sample < 0:
            raise SgnsConfigError("epochs, alpha and threads must be positive, sample >= 0")


@dataclass
class EmbeddingPair:
    """Word and context vectors, stored row-wise (|V| x d).

    ``W`` and ``C`` expose the column convention (d x |V|) as transposed views.
    """

    word: np.ndarray
    context: np.ndarray
    tokens: tuple[str, ...] = ()
    config: dict = field(default_factory=dict)

    @property
    def W(self) -> np.ndarray:
        return self.word.T

    @property
    def C(self) -> np.ndarray:
        return self.context.T

    @property
    def dim(self) -> int:
        return self.word.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.word.shape[0]

    def save(self, word_path, context_path) -> None:
        for matrix, path in ((self.word, word_path), (self.context, context_path)):
            save_vectors(path, self.tokens, matrix)

    @classmethod
    def load(cls, word_path, context_path) -> "EmbeddingPair":
        tokens, word = load_vectors(word_path)
        ctokens, context = load_vectors(context_path)
        if tokens != ctokens:
            raise ValueError("word and context files list different vocabularies")
        return cls(word, context, tokens)


def save_vectors(path, tokens, matrix: np.ndarray) -> None:
    """word2vec text format: ``|V| d`` header then ``token v1 .. vd``."""
    fmt = "%.9g" if matrix.dtype == np.float32 else "%.17g"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{matrix.shape[0]} {matrix.shape[1]}\n")
        for tok, row in zip(tokens, matrix):
            fh.write(tok + " " + " ".join(fmt % x for x in row) + "\n")


def load_vectors(path, dtype=np.float32) -> tuple[tuple[str, ...], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        n, d = (int(x) for x in fh.readline().split())
        tokens = []
        out = np.empty((n, d), dtype=dtype)
        for i in range(n):
            parts = fh.readline().rstrip("\n").split(" ")
            tokens.append(parts[0])
            out[i] = np.array(parts[1:], dtype=np.float64)
    return tuple(tokens), out


# -- analytic event gradient (reference for the kernel) ------------------------------

def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def event_loss(w: np.ndarray, c_pos: np.ndarray, c_negs: np.ndarray) -> float:
    """-log s(w.c) - sum log s(-w.n) for one event."""
    return float(-np.log(_sigmoid(w @ c_pos)) - np.sum(np.log(_sigmoid(-(c_negs @ w)))))


def event_gradient(w, c_pos, c_negs):
    """Gradients of :func:`event_loss` w.r.t. (w, c_pos, c_negs)."""
    gp = _sigmoid(w @ c_pos) - 1.0
    gn = _sigmoid(c_negs @ w)
    grad_w = gp * c_pos + gn @ c_negs
    return grad_w, gp * w, np.outer(gn, w)


# -- kernels ------------------------------------------------------------------------

@numba.njit(nogil=True, cache=True, inline="always")
def _sgd_target(word, ctx, wi, ci, label, alpha, neu):
    f = 0.0
    for d in range(word.shape[1]):
        f += word[wi, d] * ctx[ci, d]
    g = (label - 1.0 / (1.0 + math.exp(-f))) * alpha
    for d in range(word.shape[1]):
        neu[d] += g * ctx[ci, d]
        ctx[ci, d] += g * word[wi, d]


@numba.njit(nogil=True, cache=True)
def _event_update(word, ctx, wi, ci, negs, alpha):
    """Single event, fixed negatives; exposed for gradient testing."""
    neu = np.zeros(word.shape[1])
    _sgd_target(word, ctx, wi, ci, 1.0, alpha, neu)
    for k in range(negs.shape[0]):
        _sgd_target(word, ctx, wi, negs[k], 0.0, alpha, neu)
    for d in range(word.shape[1]):
        word[wi, d] += neu[d]


@numba.njit(nogil=True, cache=True)
def _sample(cdf, rng):
    rng = rng * np.uint64(25214903917) + np.uint64(11)
    u = (rng >> np.uint64(11)) * (1.0 / 9007199254740992.0)
    return np.searchsorted(cdf, u, side="right"), rng


@numba.njit(nogil=True, cache=True)
def _train_span(word, ctx, ids, start, stop, radius, cdf, negative,
                alpha0, min_alpha, done0, total, seed):
    n = ids.shape[0]
    dim = word.shape[1]
    neu = np.empty(dim)
    rng = np.uint64(seed)
    for t in range(start, stop):
        progress = (done0 + t - start) / (total + 1.0)
        alpha = alpha0 * (1.0 - progress)
        if alpha < min_alpha:
            alpha = min_alpha
        wi = ids[t]
        for u in range(max(0, t - radius), min(n, t + radius + 1)):
            if u == t:
                continue
            ci = ids[u]
            for d in range(dim):
                neu[d] = 0.0
            _sgd_target(word, ctx, wi, ci, 1.0, alpha, neu)
            for _ in range(negative):
                neg, rng = _sample(cdf, rng)
                if neg == ci:
                    continue
                _sgd_target(word, ctx, wi, neg, 0.0, alpha, neu)
            for d in range(dim):
                word[wi, d] += neu[d]


@numba.njit(nogil=True, cache=True)
def _mean_loss(word, ctx, ids, radius, cdf, negative, seed):
    n = ids.shape[0]
    rng = np.uint64(seed)
    total = 0.0
    events = 0
    for t in range(n):
        wi = ids[t]
        for u in range(max(0, t - radius), min(n, t + radius + 1)):
            if u == t:
                continue
            f = 0.0
            for d in range(word.shape[1]):
                f += word[wi, d] * ctx[ids[u], d]
            total += math.log1p(math.exp(-f))
            for _ in range(negative):
                neg, rng = _sample(cdf, rng)
                f = 0.0
                for d in range(word.shape[1]):
                    f += word[wi, d] * ctx[neg, d]
                total += math.log1p(math.exp(f))
            events += 1
    return total / max(events, 1)


def noise_cdf(frequencies: np.ndarray, exponent: float) -> np.ndarray:
    """Cumulative noise distribution: unigram frequencies raised to ``exponent``."""
    w = np.asarray(frequencies, dtype=np.float64) ** exponent
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    cdf[-1] = 1.0
    return cdf


def _subsample(ids: np.ndarray, freqs: np.ndarray, sample: float, rng) -> np.ndarray:
    total = freqs.sum()
    f = freqs[ids] / total
    keep = (np.sqrt(f / sample) + 1.0) * sample / f
    return ids[rng.random(len(ids)) < keep]


def sgns_loss(pair: EmbeddingPair, ids: np.ndarray, frequencies: np.ndarray,
              radius: int = 5, negative: int = 1, noise_exponent: float = 1.0,
              seed: int = 7) -> float:
    """Mean per-event SGNS loss on a token slice, with fixed noise draws."""
    cdf = noise_cdf(frequencies, noise_exponent)
    return _mean_loss(pair.word, pair.context, np.ascontiguousarray(ids, dtype=np.int32),
                      radius, cdf, negative, seed)


def initialize(vocab_size: int, dim: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    word = ((rng.random((vocab_size, dim)) - 0.5) / dim).astype(np.float32)
    return word, np.zeros((vocab_size, dim), dtype=np.float32)


def train(tokens: TokenStream, vocab: Vocabulary, config: SgnsConfig = SgnsConfig(),
          init: tuple[np.ndarray, np.ndarray] | None = None) -> EmbeddingPair:
    config.validate()
    if len(tokens) == 0:
        raise SgnsConfigError("empty token stream")
    if tokens.vocab_size != len(vocab):
        raise SgnsConfigError("token stream and vocabulary disagree")
    freqs = vocab.frequencies()
    cdf = noise_cdf(freqs, config.noise_exponent)
    if init is None:
        word, ctx = initialize(len(vocab), config.dim, config.seed)
    else:
        word, ctx = (np.array(m, dtype=np.float32) for m in init)
    ids = np.ascontiguousarray(tokens.ids, dtype=np.int32)
    sub_rng = np.random.default_rng(config.seed + 1)
    min_alpha = config.alpha * config.min_alpha_fraction
    total = config.epochs * len(ids)
    done = 0
    for epoch in range(config.epochs):
        ep_ids = _subsample(ids, freqs, config.sample, sub_rng) if config.sample > 0 else ids
        n = len(ep_ids)
        bounds = np.linspace(0, n, config.threads + 1).astype(np.int64)
        seeds = [(config.seed * 1_000_003 + epoch * 7919 + s) & 0xFFFFFFFFFFFF
                 for s in range(config.threads)]
        if config.threads == 1:
            _train_span(word, ctx, ep_ids, 0, n, config.window_radius, cdf, config.negative,
                        config.alpha, min_alpha, done, total, seeds[0])
        else:
            def work(s):
                a, b = int(bounds[s]), int(bounds[s + 1])
                # workers share progress linearly: worker s starts at its offset
                _train_span(word, ctx, ep_ids, a, b, config.window_radius, cdf,
                            config.negative, config.alpha, min_alpha, done + a, total, seeds[s])
            with ThreadPoolExecutor(max_workers=config.threads) as pool:
                list(pool.map(work, range(config.threads)))
        done += n
        log.info("sgns epoch %d/%d done", epoch + 1, config.epochs)
    if not (np.isfinite(word).all() and np.isfinite(ctx).all()):
        raise FloatingPointError("SGNS training diverged to non-finite values")
    return EmbeddingPair(word, ctx, vocab.tokens, asdict(config))


class DotProductRows:
    """Rows of W^T C on demand; the |V| x |V| product is never formed."""

    def __init__(self, pair: EmbeddingPair):
        self.pair = pair

    def row(self, x: int) -> np.ndarray:
        return self.pair.context.astype(np.float64) @ self.pair.word[x].astype(np.float64)

    def rows(self, xs) -> np.ndarray:
        return self.pair.word[np.asarray(xs)].astype(np.float64) @ self.pair.context.T.astype(np.float64)


def dot_product_matrix(pair: EmbeddingPair) -> DotProductRows:
    return DotProductRows(pair)
