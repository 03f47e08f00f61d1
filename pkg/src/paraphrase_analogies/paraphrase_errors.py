"""Paraphrase and dependence error terms for word analogies.

For a word set W = {a, b*} and W* = {a*, b}, with the set PMI
``PMI_W(c) = log p(W|c) / p(W) = log p(c|W) / p(c)``, the definitions

    rho(c)     = log p(c|W*) / p(c|W)
    sigma_W(c) = log p(W|c) / prod_{w in W} p(w|c)
    tau_W      = log p(W) / prod_{w in W} p(w)

give ``PMI_W = sum_{w in W} PMI_w + sigma_W - tau_W`` and
``rho = PMI_W* - PMI_W``.  Eliminating the set PMIs:

    PMI_b* = PMI_b + PMI_a* - PMI_a
             - rho + (sigma_W* - sigma_W) + (tau_W - tau_W*) 1

This is the form checked by :func:`decomposition_residual`; it vanishes
exactly whenever every probability is positive.

Corpus estimators.  N(i,j,k) are centered-window triplet counts and
N_center(k) the number of windows centered on k (its token count), T their
total.  Then p(c|W) = N(i,j,c)/N(W), p(W|c) = N(i,j,c)/N_center(c),
p(W) = N(W)/T, p(c) = N_center(c)/T.  Single-word conditionals come from the
windowed pair table over the same radius, p(w|c) = N(c,w)/N(c) and
p(w) = N(w)/N, which are the same estimates the PMI matrix is built from,
so PMI_w = log p(w|c)/p(w) holds entry for entry.

Ill-defined logs are clipped: log(+inf) -> -log(eps), log(0) -> log(eps),
log(0/0) -> 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analogy_bats import AnalogyInstance
from .cooccurrence import PairCounts, TripletCounts, canonical
from .pmi_linearity import SparsePmiMatrix

EPSILON = 1e-15


class PairNotWellDefinedError(ValueError):
    pass


class ResidualUndefinedError(ValueError):
    pass


@dataclass
class ClipStats:
    pos_inf: int = 0   # x/0 with x > 0
    neg_inf: int = 0   # 0/x with x > 0
    nan: int = 0       # 0/0

    def add(self, other: "ClipStats") -> None:
        self.pos_inf += other.pos_inf
        self.neg_inf += other.neg_inf
        self.nan += other.nan

    @property
    def total(self) -> int:
        return self.pos_inf + self.neg_inf + self.nan


def clipped_log_ratio(num, den, eps: float = EPSILON, stats: ClipStats | None = None):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    big = -np.log(eps)
    num_zero, den_zero = num == 0, den == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(num) - np.log(den)
    out = np.where(num_zero & den_zero, 0.0, out)
    out = np.where(~num_zero & den_zero, big, out)
    out = np.where(num_zero & ~den_zero, -big, out)
    if stats is not None:
        stats.pos_inf += int(np.sum(~num_zero & den_zero))
        stats.neg_inf += int(np.sum(num_zero & ~den_zero))
        stats.nan += int(np.sum(num_zero & den_zero))
    return out if out.ndim else float(out)


@dataclass
class ParaphraseDistribution:
    """Estimated statistics of a two-word set W over all center words."""

    pair: tuple[int, int]
    p_center_given_pair: np.ndarray   # p(c | W)
    p_pair_given_center: np.ndarray   # p(W | c)
    p_pair: float                     # p(W)
    p_word_given_center: np.ndarray   # (2, |V|): p(w_i | c), p(w_j | c)
    p_word: np.ndarray                # (2,): p(w_i), p(w_j)
    p_center: np.ndarray              # p(c)

    @classmethod
    def from_joint(cls, joint: np.ndarray, word_context: np.ndarray, pair) -> "ParaphraseDistribution":
        """Statistics of ``pair`` under an explicit distribution.

        ``joint[i, j, c]`` is p({w_i, w_j}, c) over canonical pairs,
        ``word_context[w, c]`` is p(w, c); the two must share the center
        marginal p(c).
        """
        i, j = canonical(*pair)
        p_c = word_context.sum(axis=0)
        p_wc = joint[i, j]
        p_W = p_wc.sum()
        p_w = word_context.sum(axis=1)
        return cls((i, j), p_wc / p_W, p_wc / p_c, float(p_W),
                   word_context[[i, j]] / p_c, p_w[[i, j]], p_c)


class ParaphraseEstimator:
    """Relative-frequency estimates from triplet and pair counts."""

    def __init__(self, triplets: TripletCounts, pairs: PairCounts):
        if triplets.vocab_hash != pairs.vocab_hash or triplets.radius != pairs.radius:
            raise ValueError("triplet and pair counts come from different runs")
        self.triplets = triplets
        self.centers = triplets.center_counts.astype(np.float64)
        self.n_windows = float(self.centers.sum())
        self.pair_csr = pairs.to_csr()
        self.pair_rows = pairs.row_marginals.astype(np.float64)
        self.pair_total = float(pairs.total)
        self._cache: dict[tuple[int, int], ParaphraseDistribution] = {}

    def _word_given_center(self, w: int) -> np.ndarray:
        # symmetric windows: N(c, w) = N(w, c), i.e. row w of the pair table
        row = self.pair_csr.getrow(w)
        out = np.zeros(self.pair_csr.shape[1])
        out[row.indices] = row.data
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.pair_rows > 0, out / self.pair_rows, 0.0)

    def distribution(self, pair) -> ParaphraseDistribution:
        key = canonical(*pair)
        if key in self._cache:
            return self._cache[key]
        n_ijk = self.triplets.vector(*key).astype(np.float64)
        n_W = n_ijk.sum()
        if n_W == 0:
            raise PairNotWellDefinedError(f"pair {key} never shares a window")
        with np.errstate(divide="ignore", invalid="ignore"):
            p_W_given_c = np.where(self.centers > 0, n_ijk / self.centers, 0.0)
        dist = ParaphraseDistribution(
            key, n_ijk / n_W, p_W_given_c, n_W / self.n_windows,
            np.vstack([self._word_given_center(w) for w in key]),
            self.pair_rows[list(key)] / self.pair_total,
            self.centers / self.n_windows)
        if len(self._cache) > 4096:
            self._cache.clear()
        self._cache[key] = dist
        return dist


def estimate_distribution(triplets: TripletCounts, pair, pairs: PairCounts) -> ParaphraseDistribution:
    return ParaphraseEstimator(triplets, pairs).distribution(pair)


def paraphrase_error(dist_W: ParaphraseDistribution, dist_Wstar: ParaphraseDistribution,
                     eps: float = EPSILON, stats: ClipStats | None = None) -> np.ndarray:
    """rho(c) = log p(c|W*) / p(c|W)."""
    return clipped_log_ratio(dist_Wstar.p_center_given_pair, dist_W.p_center_given_pair, eps, stats)


def dependence_errors(dist: ParaphraseDistribution, eps: float = EPSILON,
                      stats: ClipStats | None = None) -> tuple[np.ndarray, float]:
    """(sigma_W over centers, tau_W)."""
    sigma = clipped_log_ratio(dist.p_pair_given_center,
                              dist.p_word_given_center[0] * dist.p_word_given_center[1], eps, stats)
    tau = clipped_log_ratio(dist.p_pair, dist.p_word[0] * dist.p_word[1], eps, stats)
    return sigma, float(tau)


@dataclass
class ErrorDecomposition:
    rho: np.ndarray
    sigma_W: np.ndarray
    sigma_Wstar: np.ndarray
    tau_W: float
    tau_Wstar: float
    clipping: ClipStats = field(default_factory=ClipStats)

    def paraphrase_term(self) -> np.ndarray:
        return -self.rho

    def dependence_term(self) -> np.ndarray:
        return (self.sigma_Wstar - self.sigma_W) + (self.tau_W - self.tau_Wstar)

    def total(self) -> np.ndarray:
        return self.paraphrase_term() + self.dependence_term()


def decompose(dist_W: ParaphraseDistribution, dist_Wstar: ParaphraseDistribution,
              eps: float = EPSILON) -> ErrorDecomposition:
    stats = ClipStats()
    rho = paraphrase_error(dist_W, dist_Wstar, eps, stats)
    sW, tW = dependence_errors(dist_W, eps, stats)
    sWs, tWs = dependence_errors(dist_Wstar, eps, stats)
    return ErrorDecomposition(rho, sW, sWs, tW, tWs, stats)


def decompose_analogy(estimator: ParaphraseEstimator, analogy: AnalogyInstance,
                      eps: float = EPSILON) -> ErrorDecomposition:
    for p in (analogy.W, analogy.W_star):
        if p[0] == p[1]:
            raise PairNotWellDefinedError(f"degenerate paraphrase set {p}")
    return decompose(estimator.distribution(analogy.W), estimator.distribution(analogy.W_star), eps)


def _pmi_row(pmi: SparsePmiMatrix, w: int) -> np.ndarray:
    return pmi.matrix.getrow(w).toarray().ravel()


def decomposition_residual(analogy, pmi: SparsePmiMatrix, errors: ErrorDecomposition) -> np.ndarray:
    """PMI_b* - PMI_b - PMI_a* + PMI_a minus the summed error terms.

    ``analogy`` is an :class:`AnalogyInstance` or an ``(a, a*, b, b*)`` tuple.
    """
    if isinstance(analogy, AnalogyInstance):
        a, a_star, b, b_star = analogy.a, analogy.a_star, analogy.b, analogy.b_star
    else:
        a, a_star, b, b_star = analogy
    total = errors.total()
    if not np.all(np.isfinite(total)):
        raise ResidualUndefinedError("error terms contain undefined entries")
    lhs = _pmi_row(pmi, b_star) - _pmi_row(pmi, b) - _pmi_row(pmi, a_star) + _pmi_row(pmi, a)
    return lhs - total


# -- category table --------------------------------------------------------------------

@dataclass
class AnalogyNorms:
    analogy: AnalogyInstance
    paraphrase: float
    dependence: float
    total: float
    clipped: int


@dataclass
class CategoryNorms:
    code: str
    n_analogies: int
    rows: list[AnalogyNorms]

    @property
    def n_well_defined(self) -> int:
        return len(self.rows)

    @property
    def empty(self) -> bool:
        return not self.rows

    def _stat(self, attr: str, fn) -> float:
        return float(fn([getattr(r, attr) for r in self.rows])) if self.rows else float("nan")

    def mean(self, attr: str) -> float:
        return self._stat(attr, np.mean)

    def median(self, attr: str) -> float:
        return self._stat(attr, np.median)


def analogy_is_well_defined(triplets: TripletCounts, analogy: AnalogyInstance) -> bool:
    return all(p[0] != p[1] and triplets.is_well_defined(*p) for p in (analogy.W, analogy.W_star))


def category_norm_table(categories: dict[str, list[AnalogyInstance]], estimator: ParaphraseEstimator,
                        eps: float = EPSILON) -> list[CategoryNorms]:
    """Mean/median L2 norms of the paraphrase, dependence and total error per category.

    Only analogies whose W and W* both share a window are included.
    """
    table = []
    for code, analogies in categories.items():
        rows = []
        for x in analogies:
            if not analogy_is_well_defined(estimator.triplets, x):
                continue
            dec = decompose_analogy(estimator, x, eps)
            rows.append(AnalogyNorms(x, float(np.linalg.norm(dec.paraphrase_term())),
                                     float(np.linalg.norm(dec.dependence_term())),
                                     float(np.linalg.norm(dec.total())), dec.clipping.total))
        table.append(CategoryNorms(code, len(analogies), rows))
    return table


_TABLE_ROWS = (("paraphrase_error_norm", "paraphrase"),
               ("dependence_errors_sum_norm", "dependence"),
               ("all_errors_sum_norm", "total"))


def write_norm_table(path, table: list[CategoryNorms]) -> None:
    """One row per statistic, one column per category."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#statistic\t" + "\t".join(c.code for c in table) + "\n")
        fh.write("n_analogies\t" + "\t".join(str(c.n_analogies) for c in table) + "\n")
        fh.write("n_well_defined\t" + "\t".join(str(c.n_well_defined) for c in table) + "\n")
        for agg in ("mean", "median"):
            for label, attr in _TABLE_ROWS:
                vals = [getattr(c, agg)(attr) for c in table]
                fh.write(f"{agg}_{label}\t" + "\t".join(_fmt(v) for v in vals) + "\n")


def write_norm_detail(path, table: list[CategoryNorms], tokens) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#category\ta\ta_star\tb\tb_star\tparaphrase_norm\tdependence_norm\ttotal_norm\tclipped\n")
        for c in table:
            for r in c.rows:
                x = r.analogy
                fh.write(f"{c.code}\t{tokens[x.a]}\t{tokens[x.a_star]}\t{tokens[x.b]}\t{tokens[x.b_star]}"
                         f"\t{_fmt(r.paraphrase)}\t{_fmt(r.dependence)}\t{_fmt(r.total)}\t{r.clipped}\n")


def _fmt(v: float) -> str:
    return "nan" if not np.isfinite(v) else f"{v:.4f}"
