"""PMI estimation and the pseudo-inverse linearity probe.

Orientation: ``C`` is d x |V| with context vectors as columns, so its
pseudo-inverse is |V| x d.  A PMI row (1 x |V|) maps into embedding space
as ``row @ C_pinv``; if PMI = W^T C exactly and C has full row rank the
image is the word vector itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .cooccurrence import PairCounts
from .sgns import EmbeddingPair

HIST_BIN_WIDTH = 0.02


class EmptyCountsError(ValueError):
    pass


@dataclass
class SparsePmiMatrix:
    matrix: sp.csr_matrix  # rows words, columns contexts

    @property
    def shape(self):
        return self.matrix.shape

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            sp.save_npz(fh, self.matrix, compressed=False)

    @classmethod
    def load(cls, path) -> "SparsePmiMatrix":
        return cls(sp.load_npz(path).tocsr())

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "SparsePmiMatrix":
        return cls(sp.csr_matrix(np.asarray(dense, dtype=np.float64)))


def build_pmi(counts: PairCounts) -> SparsePmiMatrix:
    """log p(w,c) / (p(w) p(c)) from relative frequencies; unattested pairs are 0."""
    total = counts.total
    if total == 0:
        raise EmptyCountsError("pair counts are empty")
    w, c = counts.words, counts.contexts
    n = np.asarray(counts.counts, dtype=np.float64)
    rows = counts.row_marginals.astype(np.float64)
    cols = counts.column_marginals.astype(np.float64)
    values = np.log(n) + np.log(float(total)) - np.log(rows[w]) - np.log(cols[c])
    m = sp.csr_matrix((values, (w, c)), shape=(counts.vocab_size, counts.vocab_size))
    m.data[~np.isfinite(m.data)] = 0.0
    return SparsePmiMatrix(m)


def pmi_vector(pmi: SparsePmiMatrix, word_id: int) -> sp.csr_matrix:
    if not 0 <= word_id < pmi.shape[0]:
        raise IndexError(f"word id {word_id} outside 0..{pmi.shape[0] - 1}")
    return pmi.matrix.getrow(word_id)


@dataclass
class PseudoInverse:
    matrix: np.ndarray  # |V| x d
    source_shape: tuple[int, int]
    rcond: float
    rank: int


def pseudo_inverse(C: np.ndarray, rcond: float = 1e-10) -> PseudoInverse:
    """Moore-Penrose inverse from a thin SVD, dropping singular values below
    ``rcond * s_max``."""
    C = np.asarray(C, dtype=np.float64)
    u, s, vt = np.linalg.svd(C, full_matrices=False)
    keep = s > rcond * (s[0] if len(s) else 0.0)
    inv = (vt[keep].T / s[keep]) @ u[:, keep].T
    return PseudoInverse(inv, C.shape, rcond, int(keep.sum()))


def _project(pinv: PseudoInverse, rows) -> np.ndarray:
    n_ctx = pinv.matrix.shape[0]
    if rows.shape[-1] != n_ctx:
        raise ValueError(f"PMI rows have {rows.shape[-1]} columns, expected {n_ctx}")
    return np.asarray(rows @ pinv.matrix)


def approximate_embedding(pinv: PseudoInverse, pmi_vector) -> np.ndarray:
    """Embedding-space image ``PMI_x @ C_pinv`` of one PMI row (sparse or dense)."""
    rows = pmi_vector if sp.issparse(pmi_vector) else np.asarray(pmi_vector, dtype=np.float64)
    return _project(pinv, rows).reshape(-1)


def pearson(x, y) -> float:
    """Pearson r, or nan when either vector is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc, yc = x - x.mean(), y - y.mean()
    den = np.sqrt((xc @ xc) * (yc @ yc))
    # centering a constant vector can leave rounding residue; test exactly
    if den == 0.0 or np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        return float("nan")
    return float(np.clip((xc @ yc) / den, -1.0, 1.0))


def _rowwise_pearson(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ac = a - a.mean(axis=1, keepdims=True)
    bc = b - b.mean(axis=1, keepdims=True)
    den = np.sqrt(np.einsum("ij,ij->i", ac, ac) * np.einsum("ij,ij->i", bc, bc))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.einsum("ij,ij->i", ac, bc) / den
    flat = (np.ptp(a, axis=1) == 0) | (np.ptp(b, axis=1) == 0)
    r[(den == 0) | flat] = np.nan
    return np.clip(r, -1.0, 1.0)


@dataclass
class CorrelationReport:
    word_ids: np.ndarray
    r: np.ndarray  # nan where undefined
    mean: float
    variance: float
    n_missing: int
    approximations: np.ndarray | None = field(default=None, repr=False)

    def histogram(self, width: float = HIST_BIN_WIDTH) -> tuple[np.ndarray, np.ndarray]:
        nbins = int(round(2.0 / width))
        edges = -1.0 + width * np.arange(nbins + 1)
        counts, _ = np.histogram(self.r[np.isfinite(self.r)], bins=edges)
        return edges[:-1], counts

    def write_tsv(self, path, tokens) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("#word\tpearson_r\n")
            for wid, r in zip(self.word_ids, self.r):
                fh.write(f"{tokens[wid]}\t{'nan' if np.isnan(r) else format(r, '.6f')}\n")
            fh.write(f"#summary\tmean={self.mean:.6f}\tvariance={self.variance:.6f}"
                     f"\tn={int(np.isfinite(self.r).sum())}\tmissing={self.n_missing}\n")

    def write_histogram(self, path) -> None:
        left, counts = self.histogram()
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("#bin_left\tcount\n")
            for a, c in zip(left, counts):
                fh.write(f"{a:.2f}\t{c}\n")


def correlation_report(embeddings: EmbeddingPair, pmi: SparsePmiMatrix, word_ids,
                       pinv: PseudoInverse | None = None, batch: int = 2048,
                       keep_approximations: bool = False) -> CorrelationReport:
    """Per-word Pearson r between w_x and the pseudo-inverse image of PMI_x."""
    word_ids = np.asarray(word_ids, dtype=np.int64)
    if pinv is None:
        pinv = pseudo_inverse(embeddings.C)
    rs, approx = [], []
    for s in range(0, len(word_ids), batch):
        ids = word_ids[s:s + batch]
        est = _project(pinv, pmi.matrix[ids])
        rs.append(_rowwise_pearson(embeddings.word[ids].astype(np.float64), est))
        if keep_approximations:
            approx.append(est)
    r = np.concatenate(rs) if rs else np.zeros(0)
    ok = np.isfinite(r)
    mean = float(r[ok].mean()) if ok.any() else float("nan")
    var = float(r[ok].var()) if ok.any() else float("nan")
    return CorrelationReport(word_ids, r, mean, var, int((~ok).sum()),
                             np.concatenate(approx) if approx else None)
