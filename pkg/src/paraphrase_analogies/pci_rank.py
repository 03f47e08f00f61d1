"""Paraphrase conditional information (PCI) matrix and exact paraphrase ranks.

Column l holds log p(W_l | w_k) for every center k where the pair W_l was
observed.  These logs are almost always negative; by default every observed
entry is stored (positive *support*).  ``positive_values_only=True`` keeps
the literal reading, storing only strictly positive logs.  Those arise only
when windows around k hold the pair more than once on average, so that
matrix is nearly empty.

Only non-empty columns are materialized; ``pair_ids`` maps stored columns
back to pair indices.  Ranking a query touches the rows of its support
through a row-major copy of the matrix, and uses cached squared column
norms for everything else:

    d(q, x)^2 = |q|^2 + |x|^2 - 2 q.x
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .analogy_bats import AnalogyInstance
from .cooccurrence import KEY_SHIFT, LOW_MASK, PairIndex, TripletCounts, canonical, pair_from_index

_MAGIC = b"PAPPCI\0\0"
_VERSION = 1
_HEADER = struct.Struct("<8sI16sQIIQQB")


class UndefinedRankError(ValueError):
    pass


@dataclass
class PciMatrix:
    csc: sp.csc_matrix          # |V| x n_columns, stored columns only
    pair_ids: np.ndarray        # sorted pair index of each stored column
    universe: np.ndarray
    vocab_hash: str
    radius: int
    positive_values_only: bool = False

    @cached_property
    def csr(self) -> sp.csr_matrix:
        """Row-major copy: for each center row, the columns with an entry."""
        return self.csc.tocsr()

    @cached_property
    def norms2(self) -> np.ndarray:
        return np.asarray(self.csc.multiply(self.csc).sum(axis=0), dtype=np.float64).ravel()

    @cached_property
    def index(self) -> PairIndex:
        return PairIndex(np.asarray(self.universe, dtype=np.int64), self.csc.shape[0])

    @cached_property
    def column_words(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = pair_from_index(self.pair_ids)
        u = np.asarray(self.universe)
        return u[lo], u[hi]

    @property
    def n_columns(self) -> int:
        return self.csc.shape[1]

    def column_of(self, pair) -> int:
        """Stored column position of a word pair, -1 when absent or empty."""
        wi, wj = canonical(*pair)
        if not self.index.contains(wi, wj):
            return -1
        l = self.index.index(wi, wj)
        s = int(np.searchsorted(self.pair_ids, l))
        if s < len(self.pair_ids) and self.pair_ids[s] == l:
            return s
        return -1

    def column(self, s: int) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.csc.indptr[s], self.csc.indptr[s + 1]
        return self.csc.indices[a:b], self.csc.data[a:b]

    def dense_column(self, s: int) -> np.ndarray:
        out = np.zeros(self.csc.shape[0])
        rows, vals = self.column(s)
        out[rows] = vals
        return out

    def save(self, path) -> None:
        m = self.csc
        header = _HEADER.pack(_MAGIC, _VERSION, bytes.fromhex(self.vocab_hash)[:16].ljust(16, b"\0"),
                              m.shape[0], self.radius, len(self.universe), m.shape[1], m.nnz,
                              int(self.positive_values_only))
        with open(path, "wb") as fh:
            fh.write(header)
            for arr, dt in ((m.indptr, "<i8"), (m.indices, "<i4"), (m.data, "<f8"),
                            (self.pair_ids, "<i8"), (self.universe, "<i8")):
                fh.write(np.asarray(arr).astype(dt).tobytes())
        with open(os.fspath(path) + ".norms.npy", "wb") as fh:
            np.save(fh, self.norms2)

    @classmethod
    def load(cls, path) -> "PciMatrix":
        with open(path, "rb") as fh:
            magic, version, vhash, nrows, radius, usize, ncols, nnz, pos = _HEADER.unpack(fh.read(_HEADER.size))
            if magic != _MAGIC or version != _VERSION:
                raise ValueError(f"{path}: not a PCI file")
            indptr = np.frombuffer(fh.read(8 * (ncols + 1)), "<i8")
            indices = np.frombuffer(fh.read(4 * nnz), "<i4")
            data = np.frombuffer(fh.read(8 * nnz), "<f8")
            pair_ids = np.frombuffer(fh.read(8 * ncols), "<i8").astype(np.int64)
            universe = np.frombuffer(fh.read(8 * usize), "<i8").astype(np.int64)
        csc = sp.csc_matrix((data.copy(), indices.copy(), indptr.copy()), shape=(nrows, ncols))
        out = cls(csc, pair_ids, universe, vhash.hex(), radius, bool(pos))
        norms_path = os.fspath(path) + ".norms.npy"
        if os.path.exists(norms_path):
            out.__dict__["norms2"] = np.load(norms_path)
        return out


def build_pci(triplets: TripletCounts, positive_values_only: bool = False) -> PciMatrix:
    keys = np.asarray(triplets.keys)
    l = (keys >> KEY_SHIFT).astype(np.int64)
    k = (keys & LOW_MASK).astype(np.int64)
    centers = triplets.center_counts.astype(np.float64)
    values = np.log(np.asarray(triplets.counts, dtype=np.float64)) - np.log(centers[k])
    keep = values > 0 if positive_values_only else np.ones(len(values), dtype=bool)
    l, k, values = l[keep], k[keep], values[keep]
    pair_ids, col = np.unique(l, return_inverse=True)
    # records arrive sorted by (l, k): already in CSC order
    indptr = np.zeros(len(pair_ids) + 1, dtype=np.int64)
    np.cumsum(np.bincount(col, minlength=len(pair_ids)), out=indptr[1:])
    csc = sp.csc_matrix((values, k.astype(np.int32), indptr),
                        shape=(triplets.vocab_size, len(pair_ids)))
    return PciMatrix(csc, pair_ids, np.asarray(triplets.universe, dtype=np.int64),
                     triplets.vocab_hash, triplets.radius, positive_values_only)


def column_distance(pci: PciMatrix, s1: int, s2: int) -> float:
    """Euclidean distance between stored columns ``s1`` and ``s2``."""
    if s1 == s2:
        return 0.0
    r1, v1 = pci.column(s1)
    r2, v2 = pci.column(s2)
    if len(r1) > len(r2):
        r1, v1, r2, v2 = r2, v2, r1, v1
    pos = np.searchsorted(r2, r1)
    pos[pos == len(r2)] = 0
    hit = r2[pos] == r1 if len(r2) else np.zeros(len(r1), dtype=bool)
    dot = float(v1[hit] @ v2[pos[hit]])
    d2 = pci.norms2[s1] + pci.norms2[s2] - 2.0 * dot
    return float(np.sqrt(max(d2, 0.0)))


@dataclass(frozen=True)
class RankResult:
    W: tuple[int, int]
    W_star: tuple[int, int]
    distance: float
    rank: int
    ties: int
    universe_size: int
    analogy: AnalogyInstance | None = None


def _squared_distances(pci: PciMatrix, q: int) -> np.ndarray:
    rows, vals = pci.column(q)
    dots = pci.csr[rows].T @ vals if len(rows) else np.zeros(pci.n_columns)
    d2 = pci.norms2[q] + pci.norms2 - 2.0 * np.asarray(dots).ravel()
    np.maximum(d2, 0.0, out=d2)
    d2[q] = 0.0
    return d2


def candidate_mask(pci: PciMatrix, restrict_words=None) -> np.ndarray | None:
    """Columns whose pair contains one of ``restrict_words`` (None: all)."""
    if restrict_words is None:
        return None
    wi, wj = pci.column_words
    words = np.asarray(list(restrict_words))
    return np.isin(wi, words) | np.isin(wj, words)


def rank_true_paraphrase(pci: PciMatrix, W, W_star, restrict: bool = False) -> RankResult:
    """Rank of W* among all stored columns by distance to W.

    rank = 1 + #{X != W : d(W, X) < d(W, W*)}; exact ties are reported in
    ``ties`` (W* itself excluded).  With ``restrict`` only pairs sharing a
    word with W* compete.
    """
    q, t = pci.column_of(W), pci.column_of(W_star)
    if q < 0 or t < 0:
        raise UndefinedRankError(f"empty PCI column for {W if q < 0 else W_star}")
    d2 = _squared_distances(pci, q)
    cand = np.ones(pci.n_columns, dtype=bool)
    mask = candidate_mask(pci, canonical(*W_star) if restrict else None)
    if mask is not None:
        cand &= mask
    cand[t] = True
    if q != t:
        cand[q] = False
    target = d2[t]
    closer = int(np.count_nonzero(d2[cand] < target))
    ties = int(np.count_nonzero(d2[cand] == target)) - 1
    return RankResult(canonical(*W), canonical(*W_star), float(np.sqrt(target)),
                      1 + closer, max(ties, 0), int(cand.sum()))


@dataclass
class CategoryRanks:
    code: str
    n_analogies: int
    results: list[RankResult]

    @property
    def n_well_defined(self) -> int:
        return len(self.results)

    @property
    def empty(self) -> bool:
        return not self.results

    @property
    def ranks(self) -> np.ndarray:
        return np.array([r.rank for r in self.results], dtype=np.float64)

    @property
    def average(self) -> float:
        return float(self.ranks.mean()) if self.results else float("nan")

    @property
    def median(self) -> float:
        return float(np.median(self.ranks)) if self.results else float("nan")


def category_rank_table(categories: dict[str, list[AnalogyInstance]], pci: PciMatrix,
                        restrict: bool = False) -> list[CategoryRanks]:
    table = []
    for code, analogies in categories.items():
        results = []
        for x in analogies:
            if x.W[0] == x.W[1] or x.W_star[0] == x.W_star[1]:
                continue
            if pci.column_of(x.W) < 0 or pci.column_of(x.W_star) < 0:
                continue
            r = rank_true_paraphrase(pci, x.W, x.W_star, restrict)
            results.append(RankResult(r.W, r.W_star, r.distance, r.rank, r.ties, r.universe_size, x))
        table.append(CategoryRanks(code, len(analogies), results))
    return table


def _kilo(v: float) -> str:
    return "nan" if not np.isfinite(v) else f"{int(round(v / 1000.0))}K"


def write_rank_table(path, table: list[CategoryRanks]) -> None:
    """Average and median rank per category, raw and rounded to thousands."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#statistic\t" + "\t".join(c.code for c in table) + "\n")
        fh.write("n_analogies\t" + "\t".join(str(c.n_analogies) for c in table) + "\n")
        fh.write("n_well_defined\t" + "\t".join(str(c.n_well_defined) for c in table) + "\n")
        fh.write("average_rank\t" + "\t".join(_num(c.average) for c in table) + "\n")
        fh.write("median_rank\t" + "\t".join(_num(c.median) for c in table) + "\n")
        fh.write("average_rank_k\t" + "\t".join(_kilo(c.average) for c in table) + "\n")
        fh.write("median_rank_k\t" + "\t".join(_kilo(c.median) for c in table) + "\n")
        universe = [c.results[0].universe_size if c.results else 0 for c in table]
        fh.write("universe_size\t" + "\t".join(str(u) for u in universe) + "\n")


def write_rank_detail(path, table: list[CategoryRanks], tokens) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#category\ta\ta_star\tb\tb_star\tdistance\trank\tties\tuniverse_size\n")
        for c in table:
            for r in c.results:
                x = r.analogy
                fh.write(f"{c.code}\t{tokens[x.a]}\t{tokens[x.a_star]}\t{tokens[x.b]}\t{tokens[x.b_star]}"
                         f"\t{r.distance:.6f}\t{r.rank}\t{r.ties}\t{r.universe_size}\n")


def _num(v: float) -> str:
    return "nan" if not np.isfinite(v) else f"{v:.1f}"
