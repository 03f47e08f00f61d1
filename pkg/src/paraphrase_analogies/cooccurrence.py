"""Windowed pair and centered-triplet counting.

Counts are kept as sorted ``uint64`` packed keys with ``uint32`` counts.  A
pair key is ``word << 32 | context``; a triplet key is ``l_ij << 32 | k``
where ``l_ij`` is the dense index of the canonical pair ``i < j`` (ranks in
the pair universe) and ``k`` the center word id.  Sorting by key therefore
groups triplet records by pair, which is the column layout the PCI matrix
wants.

Counting runs over shards of center positions.  Each shard sees the whole
token array, so boundary windows are counted exactly once, by the shard
owning the center.  Sorted runs are accumulated in memory and spilled to
disk when a budget is exceeded; a streaming k-way merge finalizes them.
"""

from __future__ import annotations

import os
import shutil
import struct
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import numba
import scipy.sparse as sp

from .corpus import TokenStream

KEY_SHIFT = np.uint64(32)
LOW_MASK = np.uint64(0xFFFFFFFF)
MAX_UNIVERSE = 1 << 16
RECORD_DTYPE = np.dtype([("key", "<u8"), ("count", "<u4")])  # packed, 12 bytes

_MAGIC = b"PAPCOUNT"
_VERSION = 1
_HEADER = struct.Struct("<8sII16sQIIQ")
_KIND_PAIRS, _KIND_TRIPLETS = 0, 1


class CountsError(Exception):
    pass


class IncompatibleCountsError(CountsError, ValueError):
    pass


class IndexWidthError(CountsError, ValueError):
    pass


class UndefinedFractionError(CountsError, ValueError):
    pass


# -- pair index ---------------------------------------------------------------

def pair_index(ri, rj):
    """Dense index of the unordered rank pair {ri, rj}, ri != rj."""
    ri = np.asarray(ri, dtype=np.int64)
    rj = np.asarray(rj, dtype=np.int64)
    lo, hi = np.minimum(ri, rj), np.maximum(ri, rj)
    return hi * (hi - 1) // 2 + lo


def pair_from_index(l):
    """Inverse of :func:`pair_index`; returns ``(lo, hi)`` ranks."""
    l = np.asarray(l, dtype=np.int64)
    hi = ((1 + np.sqrt(1 + 8 * l.astype(np.float64))) // 2).astype(np.int64)
    # float sqrt can be off by one near perfect squares
    hi = np.where(hi * (hi - 1) // 2 > l, hi - 1, hi)
    hi = np.where((hi + 1) * hi // 2 <= l, hi + 1, hi)
    return l - hi * (hi - 1) // 2, hi


@dataclass(frozen=True)
class PairIndex:
    """Bijection between canonical word pairs of a universe and column ids."""

    universe: np.ndarray  # sorted word ids
    vocab_size: int

    @cached_property
    def rank(self) -> np.ndarray:
        r = np.full(self.vocab_size, -1, dtype=np.int32)
        r[self.universe] = np.arange(len(self.universe), dtype=np.int32)
        return r

    @property
    def size(self) -> int:
        k = len(self.universe)
        return k * (k - 1) // 2

    def index(self, wi: int, wj: int) -> int:
        ri, rj = self.rank[wi], self.rank[wj]
        if ri < 0 or rj < 0 or ri == rj:
            raise KeyError((wi, wj))
        return int(pair_index(ri, rj))

    def contains(self, wi: int, wj: int) -> bool:
        return (0 <= wi < self.vocab_size and 0 <= wj < self.vocab_size
                and wi != wj and self.rank[wi] >= 0 and self.rank[wj] >= 0)

    def pair(self, l: int) -> tuple[int, int]:
        lo, hi = pair_from_index(l)
        return int(self.universe[lo]), int(self.universe[hi])

    def pairs_with(self, word: int) -> np.ndarray:
        """All column ids whose pair contains ``word``."""
        r = int(self.rank[word])
        k = len(self.universe)
        others = np.delete(np.arange(k, dtype=np.int64), r)
        return np.sort(pair_index(np.full_like(others, r), others))


def canonical(wi: int, wj: int) -> tuple[int, int]:
    return (wi, wj) if wi <= wj else (wj, wi)


# -- kernels --------------------------------------------------------------------

@numba.njit(nogil=True, cache=True)
def _pair_keys(ids, start, stop, radius):
    n = ids.shape[0]
    total = 0
    for t in range(start, stop):
        total += min(n - 1, t + radius) - max(0, t - radius)
    out = np.empty(total, dtype=np.uint64)
    p = 0
    for t in range(start, stop):
        hi = np.uint64(ids[t]) << np.uint64(32)
        for u in range(max(0, t - radius), min(n, t + radius + 1)):
            if u != t:
                out[p] = hi | np.uint64(ids[u])
                p += 1
    return out


@numba.njit(nogil=True, cache=True)
def _triplet_keys(ids, start, stop, radius, rank):
    n = ids.shape[0]
    ranks = np.empty(2 * radius, dtype=np.int64)
    total = 0
    for t in range(start, stop):
        m = 0
        for u in range(max(0, t - radius), min(n, t + radius + 1)):
            if u != t and rank[ids[u]] >= 0:
                ranks[m] = rank[ids[u]]
                m += 1
        for a in range(m):
            for b in range(a + 1, m):
                if ranks[a] != ranks[b]:
                    total += 1
    out = np.empty(total, dtype=np.uint64)
    p = 0
    for t in range(start, stop):
        m = 0
        for u in range(max(0, t - radius), min(n, t + radius + 1)):
            if u != t and rank[ids[u]] >= 0:
                ranks[m] = rank[ids[u]]
                m += 1
        center = np.uint64(ids[t])
        for a in range(m):
            for b in range(a + 1, m):
                ri = ranks[a]
                rj = ranks[b]
                if ri == rj:
                    continue
                if ri > rj:
                    ri, rj = rj, ri
                l = rj * (rj - 1) // 2 + ri
                out[p] = (np.uint64(l) << np.uint64(32)) | center
                p += 1
    return out


# -- sorted runs ----------------------------------------------------------------

def _reduce_sorted(keys: np.ndarray, counts: np.ndarray | None = None):
    """Collapse equal adjacent keys of a sorted array, summing counts."""
    if len(keys) == 0:
        return keys.astype(np.uint64), np.zeros(0, dtype=np.uint32)
    starts = np.flatnonzero(np.concatenate(([True], keys[1:] != keys[:-1])))
    if counts is None:
        c = np.diff(np.append(starts, len(keys)))
    else:
        c = np.add.reduceat(counts.astype(np.uint64), starts)
    if c.max(initial=0) > np.iinfo(np.uint32).max:
        raise CountsError("count overflows uint32")
    return keys[starts], c.astype(np.uint32)


def _merge_arrays(runs: list[tuple[np.ndarray, np.ndarray]]):
    runs = [r for r in runs if len(r[0])]
    if not runs:
        return np.zeros(0, dtype=np.uint64), np.zeros(0, dtype=np.uint32)
    if len(runs) == 1:
        return np.asarray(runs[0][0]), np.asarray(runs[0][1])
    keys = np.concatenate([r[0] for r in runs])
    counts = np.concatenate([r[1] for r in runs])
    order = np.argsort(keys, kind="stable")
    return _reduce_sorted(keys[order], counts[order])


class RunAccumulator:
    """Accumulates key batches as sorted runs, spilling past a memory budget.

    ``finalize`` returns in-memory arrays when nothing was spilled or no
    ``spill_dir`` was given (temporary spill files are then read back and
    removed); otherwise the merged result lives as memmaps in ``spill_dir``.
    """

    def __init__(self, memory_budget_mb: float | None = None, spill_dir=None,
                 merge_block: int = 1 << 22):
        self.budget = None if memory_budget_mb is None else int(memory_budget_mb * 2**20)
        self.spill_dir = spill_dir
        self.merge_block = merge_block
        self._runs: list[tuple[np.ndarray, np.ndarray]] = []
        self._bytes = 0
        self._spilled: list[tuple[str, str, int]] = []
        self._tmp = None

    def add_keys(self, keys: np.ndarray) -> None:
        keys.sort()
        self.add_run(*_reduce_sorted(keys))

    def add_run(self, keys: np.ndarray, counts: np.ndarray) -> None:
        self._runs.append((keys, counts))
        self._bytes += keys.nbytes + counts.nbytes
        if self.budget is not None and self._bytes > self.budget:
            self._spill()

    def _workdir(self) -> str:
        if self.spill_dir is not None:
            os.makedirs(self.spill_dir, exist_ok=True)
            return os.fspath(self.spill_dir)
        if self._tmp is None:
            self._tmp = tempfile.mkdtemp(prefix="paa-spill-")
        return self._tmp

    def _spill(self) -> None:
        keys, counts = _merge_arrays(self._runs)
        self._runs, self._bytes = [], 0
        base = os.path.join(self._workdir(), f"run{len(self._spilled):05d}")
        keys.astype("<u8").tofile(base + ".keys")
        counts.astype("<u4").tofile(base + ".counts")
        self._spilled.append((base + ".keys", base + ".counts", len(keys)))

    def finalize(self):
        if not self._spilled:
            return _merge_arrays(self._runs)
        if self._runs:
            self._spill()
        out = os.path.join(self._workdir(), "merged")
        n = _kway_merge(self._spilled, out, self.merge_block)
        for kpath, cpath, _ in self._spilled:
            os.remove(kpath)
            os.remove(cpath)
        self._spilled = []
        keys = np.memmap(out + ".keys", dtype="<u8", mode="r", shape=(n,)) if n else np.zeros(0, np.uint64)
        counts = np.memmap(out + ".counts", dtype="<u4", mode="r", shape=(n,)) if n else np.zeros(0, np.uint32)
        if self._tmp is not None:
            keys, counts = np.array(keys), np.array(counts)
            shutil.rmtree(self._tmp, ignore_errors=True)
            self._tmp = None
        return keys, counts


def _kway_merge(runs, out_base: str, block: int) -> int:
    maps = [(np.memmap(k, dtype="<u8", mode="r", shape=(n,)),
             np.memmap(c, dtype="<u4", mode="r", shape=(n,))) for k, c, n in runs if n]
    pos = [0] * len(maps)
    written = 0
    with open(out_base + ".keys", "wb") as kf, open(out_base + ".counts", "wb") as cf:
        while True:
            live = [i for i, (k, _) in enumerate(maps) if pos[i] < len(k)]
            if not live:
                break
            # everything <= bound is final: no run can still produce a smaller key
            bound = min(maps[i][0][min(pos[i] + block, len(maps[i][0])) - 1] for i in live)
            parts = []
            for i in live:
                k, c = maps[i]
                end = pos[i] + int(np.searchsorted(k[pos[i]:], bound, side="right"))
                parts.append((np.asarray(k[pos[i]:end]), np.asarray(c[pos[i]:end])))
                pos[i] = end
            keys, counts = _merge_arrays(parts)
            kf.write(keys.astype("<u8").tobytes())
            cf.write(counts.astype("<u4").tobytes())
            written += len(keys)
    return written


def _center_spans(n: int, shards: int, chunk: int) -> list[list[tuple[int, int]]]:
    shards = max(1, min(shards, max(n, 1)))
    bounds = np.linspace(0, n, shards + 1).astype(np.int64)
    spans = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        spans.append([(int(s), int(min(s + chunk, b))) for s in range(int(a), int(b), chunk)])
    return spans


def _count(kernel, ids, extra, radius, shards, threads, chunk, memory_budget_mb, spill_dir):
    spans = _center_spans(len(ids), shards, chunk)

    def run_shard(shard_spans):
        acc = RunAccumulator(None)
        for a, b in shard_spans:
            acc.add_keys(kernel(ids, a, b, radius, *extra))
        return acc.finalize()

    acc = RunAccumulator(memory_budget_mb, spill_dir)
    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for keys, counts in pool.map(run_shard, spans):
                acc.add_run(keys, counts)
    else:
        for shard_spans in spans:
            for a, b in shard_spans:
                acc.add_keys(kernel(ids, a, b, radius, *extra))
    return acc.finalize()


# -- count stores -----------------------------------------------------------------

@dataclass
class PairCounts:
    keys: np.ndarray
    counts: np.ndarray
    vocab_size: int
    vocab_hash: str
    radius: int

    @cached_property
    def words(self) -> np.ndarray:
        return (np.asarray(self.keys) >> KEY_SHIFT).astype(np.int64)

    @cached_property
    def contexts(self) -> np.ndarray:
        return (np.asarray(self.keys) & LOW_MASK).astype(np.int64)

    @cached_property
    def row_marginals(self) -> np.ndarray:
        return np.bincount(self.words, weights=self.counts, minlength=self.vocab_size).astype(np.int64)

    @cached_property
    def column_marginals(self) -> np.ndarray:
        return np.bincount(self.contexts, weights=self.counts, minlength=self.vocab_size).astype(np.int64)

    @property
    def total(self) -> int:
        return int(np.sum(self.counts, dtype=np.uint64))

    def __len__(self) -> int:
        return len(self.keys)

    def get(self, word: int, context: int) -> int:
        key = np.uint64(word) << KEY_SHIFT | np.uint64(context)
        i = np.searchsorted(self.keys, key)
        return int(self.counts[i]) if i < len(self.keys) and self.keys[i] == key else 0

    def to_csr(self) -> sp.csr_matrix:
        m = sp.csr_matrix((np.asarray(self.counts, dtype=np.float64), (self.words, self.contexts)),
                          shape=(self.vocab_size, self.vocab_size))
        m.sum_duplicates()
        return m

    def as_dict(self) -> dict[tuple[int, int], int]:
        return {(int(w), int(c)): int(n) for w, c, n in zip(self.words, self.contexts, self.counts)}


@dataclass
class TripletCounts:
    keys: np.ndarray
    counts: np.ndarray
    universe: np.ndarray
    center_counts: np.ndarray  # N(w_k as center), length |V|
    vocab_size: int
    vocab_hash: str
    radius: int

    @cached_property
    def index(self) -> PairIndex:
        return PairIndex(np.asarray(self.universe, dtype=np.int64), self.vocab_size)

    @cached_property
    def _pair_groups(self):
        l = (np.asarray(self.keys) >> KEY_SHIFT).astype(np.int64)
        if len(l) == 0:
            return np.zeros(0, np.int64), np.zeros(1, np.int64), np.zeros(0, np.int64)
        starts = np.flatnonzero(np.concatenate(([True], l[1:] != l[:-1])))
        indptr = np.append(starts, len(l))
        totals = np.add.reduceat(np.asarray(self.counts, dtype=np.int64), starts)
        return l[starts], indptr, totals

    @property
    def pair_ids(self) -> np.ndarray:
        """Sorted column ids of pairs with N(W) > 0."""
        return self._pair_groups[0]

    @property
    def pair_indptr(self) -> np.ndarray:
        return self._pair_groups[1]

    @property
    def pair_totals(self) -> np.ndarray:
        return self._pair_groups[2]

    @property
    def total(self) -> int:
        return int(np.sum(self.counts, dtype=np.uint64))

    @property
    def total_centers(self) -> int:
        return int(self.center_counts.sum())

    def __len__(self) -> int:
        return len(self.keys)

    def _slot(self, wi: int, wj: int) -> int:
        """Position of the pair in ``pair_ids`` or -1."""
        if not self.index.contains(wi, wj):
            return -1
        l = self.index.index(wi, wj)
        s = int(np.searchsorted(self.pair_ids, l))
        return s if s < len(self.pair_ids) and self.pair_ids[s] == l else -1

    def pair_total(self, wi: int, wj: int) -> int:
        """N(W_ij): the number of centered windows hosting both words."""
        s = self._slot(wi, wj)
        return 0 if s < 0 else int(self.pair_totals[s])

    def is_well_defined(self, wi: int, wj: int) -> bool:
        return self.pair_total(wi, wj) > 0

    def center_records(self, wi: int, wj: int) -> tuple[np.ndarray, np.ndarray]:
        """(center ids, counts) of the stored records for the pair."""
        s = self._slot(wi, wj)
        if s < 0:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        a, b = self.pair_indptr[s], self.pair_indptr[s + 1]
        centers = (np.asarray(self.keys[a:b]) & LOW_MASK).astype(np.int64)
        return centers, np.asarray(self.counts[a:b], dtype=np.int64)

    def vector(self, wi: int, wj: int) -> np.ndarray:
        """Dense N(w_i, w_j, ·) over all center ids."""
        out = np.zeros(self.vocab_size, dtype=np.int64)
        centers, counts = self.center_records(wi, wj)
        out[centers] = counts
        return out

    def get(self, wi: int, wj: int, wk: int) -> int:
        if not self.index.contains(wi, wj):
            return 0
        key = np.uint64(self.index.index(wi, wj)) << KEY_SHIFT | np.uint64(wk)
        i = np.searchsorted(self.keys, key)
        return int(self.counts[i]) if i < len(self.keys) and self.keys[i] == key else 0

    def as_dict(self) -> dict[tuple[int, int, int], int]:
        out = {}
        l = (np.asarray(self.keys) >> KEY_SHIFT).astype(np.int64)
        k = (np.asarray(self.keys) & LOW_MASK).astype(np.int64)
        lo, hi = pair_from_index(l)
        u = np.asarray(self.universe)
        for wi, wj, wk, n in zip(u[lo], u[hi], k, self.counts):
            out[(int(wi), int(wj), int(wk))] = int(n)
        return out


# -- operations -------------------------------------------------------------------

def count_pairs(tokens: TokenStream, window_radius: int = 5, *, shards: int = 1,
                threads: int = 1, memory_budget_mb: float | None = None,
                spill_dir=None, chunk: int = 1 << 20) -> PairCounts:
    """Count (center, context) position pairs within a fixed symmetric window."""
    if window_radius < 1:
        raise ValueError("window_radius must be >= 1")
    ids = np.ascontiguousarray(tokens.ids, dtype=np.int32)
    keys, counts = _count(_pair_keys, ids, (), window_radius, shards, threads, chunk,
                          memory_budget_mb, spill_dir)
    return PairCounts(keys, counts, tokens.vocab_size, tokens.vocab_hash, window_radius)


def count_triplets(tokens: TokenStream, pair_universe, window_radius: int = 5, *,
                   shards: int = 1, threads: int = 1, memory_budget_mb: float | None = None,
                   spill_dir=None, chunk: int = 1 << 18) -> TripletCounts:
    """Count N(w_i, w_j, w_k): distinct universe words at two distinct
    positions inside the window centered on w_k (the center excluded)."""
    if window_radius < 1:
        raise ValueError("window_radius must be >= 1")
    universe = np.unique(np.asarray(pair_universe, dtype=np.int64))
    if len(universe) > MAX_UNIVERSE:
        raise IndexWidthError(f"pair universe of {len(universe)} ids exceeds {MAX_UNIVERSE}")
    if len(universe) and (universe[0] < 0 or universe[-1] >= tokens.vocab_size):
        raise ValueError("pair universe contains ids outside the vocabulary")
    index = PairIndex(universe, tokens.vocab_size)
    ids = np.ascontiguousarray(tokens.ids, dtype=np.int32)
    keys, counts = _count(_triplet_keys, ids, (index.rank,), window_radius, shards, threads,
                          chunk, memory_budget_mb, spill_dir)
    centers = np.bincount(ids, minlength=tokens.vocab_size).astype(np.int64)
    return TripletCounts(keys, counts, universe, centers, tokens.vocab_size,
                         tokens.vocab_hash, window_radius)


def merge(a, b):
    """Keywise sum of two count stores built over the same vocabulary."""
    if type(a) is not type(b):
        raise IncompatibleCountsError("cannot merge pair counts with triplet counts")
    if a.vocab_hash != b.vocab_hash or a.vocab_size != b.vocab_size:
        raise IncompatibleCountsError("vocabulary hash mismatch")
    if a.radius != b.radius:
        raise IncompatibleCountsError("window radius mismatch")
    keys, counts = _merge_arrays([(a.keys, a.counts), (b.keys, b.counts)])
    if isinstance(a, PairCounts):
        return PairCounts(keys, counts, a.vocab_size, a.vocab_hash, a.radius)
    if not np.array_equal(a.universe, b.universe):
        raise IncompatibleCountsError("pair universe mismatch")
    return TripletCounts(keys, counts, a.universe, a.center_counts + b.center_counts,
                         a.vocab_size, a.vocab_hash, a.radius)


def well_defined_fraction(triplets: TripletCounts, candidate_pairs) -> float:
    """Fraction of candidate pairs that share at least one centered window."""
    pairs = list(candidate_pairs)
    if not pairs:
        raise UndefinedFractionError("no candidate pairs")
    hits = sum(1 for wi, wj in pairs if triplets.is_well_defined(wi, wj))
    return hits / len(pairs)


# -- persistence ---------------------------------------------------------------------

def save_counts(counts, path) -> None:
    """Header + little-endian ``[u64 key][u32 count]`` records; marginals in a sidecar."""
    kind = _KIND_TRIPLETS if isinstance(counts, TripletCounts) else _KIND_PAIRS
    universe = len(counts.universe) if kind == _KIND_TRIPLETS else 0
    header = _HEADER.pack(_MAGIC, _VERSION, kind, bytes.fromhex(counts.vocab_hash)[:16].ljust(16, b"\0"),
                          counts.vocab_size, counts.radius, universe, len(counts.keys))
    rec = np.empty(len(counts.keys), dtype=RECORD_DTYPE)
    rec["key"] = counts.keys
    rec["count"] = counts.counts
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rec.tobytes())
    if kind == _KIND_TRIPLETS:
        side = {"universe": np.asarray(counts.universe, dtype="<i8"),
                "center_counts": np.asarray(counts.center_counts, dtype="<i8"),
                "pair_ids": counts.pair_ids.astype("<i8"),
                "pair_totals": counts.pair_totals.astype("<i8")}
    else:
        side = {"row_marginals": counts.row_marginals.astype("<i8"),
                "column_marginals": counts.column_marginals.astype("<i8")}
    with open(os.fspath(path) + ".marginals.npz", "wb") as fh:
        np.savez(fh, **side)


def load_counts(path, mmap: bool = False):
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    magic, version, kind, vhash, vsize, radius, usize, n = _HEADER.unpack(raw)
    if magic != _MAGIC or version != _VERSION:
        raise CountsError(f"{path}: not a count file (magic={magic!r}, version={version})")
    if mmap:
        rec = np.memmap(path, dtype=RECORD_DTYPE, mode="r", offset=_HEADER.size, shape=(n,))
    else:
        rec = np.fromfile(path, dtype=RECORD_DTYPE, offset=_HEADER.size, count=n)
    keys = np.ascontiguousarray(rec["key"]).astype(np.uint64, copy=False)
    counts = np.ascontiguousarray(rec["count"]).astype(np.uint32, copy=False)
    vocab_hash = vhash.hex()
    side = np.load(os.fspath(path) + ".marginals.npz")
    if kind == _KIND_PAIRS:
        return PairCounts(keys, counts, vsize, vocab_hash, radius)
    universe = side["universe"].astype(np.int64)
    if len(universe) != usize:
        raise CountsError(f"{path}: universe sidecar does not match header")
    return TripletCounts(keys, counts, universe, side["center_counts"].astype(np.int64),
                         vsize, vocab_hash, radius)
