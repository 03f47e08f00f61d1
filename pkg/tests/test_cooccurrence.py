from collections import Counter
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from paraphrase_analogies.cooccurrence import (IncompatibleCountsError, IndexWidthError, PairIndex,
                                               UndefinedFractionError, count_pairs, count_triplets,
                                               load_counts, merge, pair_from_index, pair_index,
                                               save_counts, well_defined_fraction)

from conftest import stream


def brute_pairs(ids, r):
    out = Counter()
    for t in range(len(ids)):
        for u in range(max(0, t - r), min(len(ids), t + r + 1)):
            if u != t:
                out[(int(ids[t]), int(ids[u]))] += 1
    return out


def brute_triplets(ids, r, universe):
    uni = set(int(u) for u in universe)
    out = Counter()
    for t in range(len(ids)):
        ctx = [u for u in range(max(0, t - r), min(len(ids), t + r + 1)) if u != t]
        for p, q in combinations(ctx, 2):
            wi, wj = int(ids[p]), int(ids[q])
            if wi != wj and wi in uni and wj in uni:
                out[(min(wi, wj), max(wi, wj), int(ids[t]))] += 1
    return out


corpora = st.tuples(st.lists(st.integers(0, 7), min_size=0, max_size=60), st.integers(1, 4))


@given(corpora)
def test_pair_counts_match_enumeration(case):
    ids, r = case
    ids = np.array(ids + [7], dtype=np.int32)
    pc = count_pairs(stream(ids, 8), r)
    assert pc.as_dict() == dict(brute_pairs(ids, r))


@given(corpora, st.sets(st.integers(0, 7), min_size=2))
def test_triplet_counts_match_enumeration(case, universe):
    ids, r = case
    ids = np.array(ids + [7], dtype=np.int32)
    tc = count_triplets(stream(ids, 8), sorted(universe), r)
    assert tc.as_dict() == dict(brute_triplets(ids, r, universe))
    np.testing.assert_array_equal(tc.center_counts, np.bincount(ids, minlength=8))


@given(corpora)
def test_pair_counts_are_symmetric(case):
    ids, r = case
    pc = count_pairs(stream(np.array(ids + [7]), 8), r)
    m = pc.to_csr().toarray()
    np.testing.assert_array_equal(m, m.T)
    np.testing.assert_array_equal(pc.row_marginals, pc.column_marginals)


@pytest.mark.parametrize("n,r", [(1, 1), (3, 1), (10, 2), (50, 5), (4, 5)])
def test_pair_total_closed_form(n, r):
    # sum over positions of window size, clipped at the corpus ends
    ids = np.zeros(n, dtype=np.int32)
    expect = sum(min(n - 1, t + r) - max(0, t - r) for t in range(n))
    assert count_pairs(stream(ids, 1), r).total == expect


def test_triplet_total_closed_form_all_distinct():
    n, r = 40, 3
    ids = np.arange(n, dtype=np.int32)
    tc = count_triplets(stream(ids, n), np.arange(n), r)
    expect = 0
    for t in range(n):
        m = min(n - 1, t + r) - max(0, t - r)
        expect += m * (m - 1) // 2
    assert tc.total == expect


def test_repeated_word_is_never_its_own_pair():
    tc = count_triplets(stream([0, 0, 0, 0, 0], 1), [0], 2)
    assert tc.total == 0


def test_sharded_threaded_spilled_equals_serial(tmp_path, rng):
    ids = rng.integers(0, 25, size=3000).astype(np.int32)
    s = stream(ids, 25)
    a = count_pairs(s, 3)
    b = count_pairs(s, 3, shards=8, threads=4, memory_budget_mb=0.001, spill_dir=tmp_path, chunk=37)
    assert a.as_dict() == b.as_dict()
    ta = count_triplets(s, np.arange(12), 3)
    tb = count_triplets(s, np.arange(12), 3, shards=5, threads=3, memory_budget_mb=0.001,
                        spill_dir=tmp_path, chunk=41)
    assert ta.as_dict() == tb.as_dict()


def test_merge_of_halves_equals_whole(rng):
    ids = rng.integers(0, 10, size=400).astype(np.int32)
    x = count_pairs(stream(ids[:200], 10), 2)
    y = count_pairs(stream(ids[200:], 10), 2)
    m = merge(x, y)
    expect = brute_pairs(ids[:200], 2) + brute_pairs(ids[200:], 2)
    assert m.as_dict() == dict(expect)


def test_merge_rejects_mismatches(rng):
    ids = rng.integers(0, 5, size=50)
    a = count_pairs(stream(ids, 5), 2)
    with pytest.raises(IncompatibleCountsError):
        merge(a, count_pairs(stream(ids, 5), 3))
    with pytest.raises(IncompatibleCountsError):
        merge(a, count_pairs(stream(ids, 5, "cd" * 16), 2))
    with pytest.raises(IncompatibleCountsError):
        merge(a, count_triplets(stream(ids, 5), [0, 1], 2))


def test_persistence_roundtrip(tmp_path, rng):
    ids = rng.integers(0, 30, size=800).astype(np.int32)
    s = stream(ids, 30)
    for counts, name in ((count_pairs(s, 4), "p.bin"), (count_triplets(s, np.arange(20), 4), "t.bin")):
        save_counts(counts, tmp_path / name)
        for mmap in (False, True):
            back = load_counts(tmp_path / name, mmap=mmap)
            assert type(back) is type(counts)
            np.testing.assert_array_equal(back.keys, counts.keys)
            np.testing.assert_array_equal(back.counts, counts.counts)
            assert back.vocab_hash == counts.vocab_hash and back.radius == counts.radius


@given(st.integers(0, 2000), st.integers(0, 2000))
def test_pair_index_bijection(a, b):
    if a == b:
        return
    lo, hi = pair_from_index(pair_index(a, b))
    assert (int(lo), int(hi)) == (min(a, b), max(a, b))


def test_pair_index_dense_and_pairs_with():
    idx = PairIndex(np.array([2, 5, 7, 9]), 10)
    got = sorted(idx.index(a, b) for a, b in combinations([2, 5, 7, 9], 2))
    assert got == list(range(idx.size))
    assert {idx.pair(l) for l in idx.pairs_with(7)} == {(2, 7), (5, 7), (7, 9)}
    assert not idx.contains(2, 3) and not idx.contains(5, 5)


def test_universe_too_wide():
    s = stream([0, 1], 70000)
    with pytest.raises(IndexWidthError):
        count_triplets(s, np.arange(65537), 1)


def test_well_defined_fraction():
    tc = count_triplets(stream([0, 1, 2, 9, 9, 9, 9, 3], 10), [0, 1, 2, 3], 1)
    assert tc.is_well_defined(0, 2) and not tc.is_well_defined(0, 3)
    assert well_defined_fraction(tc, [(0, 2), (0, 3)]) == 0.5
    with pytest.raises(UndefinedFractionError):
        well_defined_fraction(tc, [])


def test_unknown_triplet_is_zero():
    tc = count_triplets(stream([0, 1, 2], 4), [0, 1, 2, 3], 1)
    assert tc.get(0, 3, 1) == 0 and tc.get(0, 2, 1) == 1
