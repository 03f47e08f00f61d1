"""Corpus streaming, tokenization and vocabulary construction.

Tokens are maximal runs of non-whitespace bytes (the text8 convention: one
long line of space separated lowercase words).  Word ids are dense and
assigned by descending frequency, ties broken lexicographically, so the
``k`` lowest ids are always the ``k`` most frequent words.
"""

from __future__ import annotations

import hashlib
import io
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Iterator

import numpy as np

BLOCK_SIZE = 1 << 24
_WHITESPACE = b" \t\n\r\x0b\x0c"


class CorpusError(Exception):
    pass


class CorpusReadError(CorpusError, OSError):
    """The corpus stream could not be read or decoded."""

    def __init__(self, offset: int, reason: str):
        super().__init__(f"corpus unreadable at byte offset {offset}: {reason}")
        self.offset = offset


class EmptyVocabularyError(CorpusError, ValueError):
    pass


class VocabularyBoundsError(CorpusError, IndexError):
    pass


def _decode(raw: bytes, offset: int) -> list[str]:
    try:
        return raw.decode("utf-8").split()
    except UnicodeDecodeError as exc:
        raise CorpusReadError(offset + exc.start, "invalid utf-8") from exc


def iter_tokens(stream: BinaryIO, block_size: int = BLOCK_SIZE,
                max_bytes: int | None = None) -> Iterator[str]:
    """Yield tokens from a binary stream without loading it whole.

    ``max_bytes`` truncates the corpus at the last whitespace boundary at or
    before that many bytes, so no token is ever cut in half.
    """
    offset = 0
    carry = b""
    carry_offset = 0
    remaining = max_bytes
    truncated = False
    while True:
        want = block_size if remaining is None else min(block_size, remaining)
        if want <= 0:
            truncated = True
            break
        try:
            block = stream.read(want)
        except OSError as exc:
            raise CorpusReadError(offset, str(exc)) from exc
        if not block:
            break
        offset += len(block)
        if remaining is not None:
            remaining -= len(block)
        data = carry + block
        # a token may straddle the block boundary
        cut = max(data.rfind(c) for c in _WHITESPACE) + 1
        yield from _decode(data[:cut], carry_offset)
        carry = data[cut:]
        carry_offset = offset - len(carry)
    if carry and truncated:
        try:
            nxt = stream.read(1)
        except OSError as exc:
            raise CorpusReadError(offset, str(exc)) from exc
        if nxt and nxt not in _WHITESPACE:
            carry = b""  # cut mid-token by the byte limit
    if carry:
        yield from _decode(carry, carry_offset)


def tokenize(raw: bytes | BinaryIO) -> list[str]:
    """Split raw corpus bytes (or a binary stream) into tokens."""
    if isinstance(raw, (bytes, bytearray, memoryview)):
        raw = io.BytesIO(bytes(raw))
    return list(iter_tokens(raw))


def read_tokens(path: str | os.PathLike, max_bytes: int | None = None) -> list[str]:
    try:
        with open(path, "rb") as fh:
            return list(iter_tokens(fh, max_bytes=max_bytes))
    except CorpusReadError:
        raise
    except OSError as exc:
        raise CorpusReadError(0, str(exc)) from exc


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    counts: dict[str, int]
    total_tokens: int
    min_count: int = 1
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        return self.index[token]

    def get(self, token: str, default: int | None = None) -> int | None:
        return self.index.get(token, default)

    def frequencies(self) -> np.ndarray:
        return np.array([self.counts[t] for t in self.tokens], dtype=np.int64)

    @property
    def fingerprint(self) -> str:
        """Stable 16-byte hex digest of the id→(token, count) map."""
        h = hashlib.sha256()
        for t in self.tokens:
            h.update(t.encode("utf-8"))
            h.update(b"\t%d\n" % self.counts[t])
        return h.hexdigest()[:32]

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"#vocab\ttotal_tokens={self.total_tokens}\tmin_count={self.min_count}\n")
            for t in self.tokens:
                fh.write(f"{t}\t{self.counts[t]}\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Vocabulary":
        tokens, counts = [], {}
        total, min_count = None, 1
        with open(path, encoding="utf-8", newline="\n") as fh:
            for lineno, line in enumerate(fh):
                line = line.rstrip("\n")
                if lineno == 0 and line.startswith("#vocab\t"):
                    meta = dict(kv.split("=", 1) for kv in line.split("\t")[1:])
                    total = int(meta["total_tokens"])
                    min_count = int(meta.get("min_count", 1))
                    continue
                token, count = line.rsplit("\t", 1)
                tokens.append(token)
                counts[token] = int(count)
        if total is None:
            total = sum(counts.values())
        return cls(tuple(tokens), counts, total, min_count)


def vocabulary_from_counts(counts: Counter | dict[str, int], total_tokens: int,
                           min_count: int = 5) -> Vocabulary:
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    if total_tokens == 0 or not counts:
        raise EmptyVocabularyError("cannot build a vocabulary from an empty token sequence")
    kept = [(t, c) for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda tc: (-tc[1], tc[0]))
    return Vocabulary(tuple(t for t, _ in kept), {t: c for t, c in kept},
                      total_tokens, min_count)


def build_vocabulary(tokens: Iterable[str], min_count: int = 5) -> Vocabulary:
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter()
    total = 0
    for t in tokens:
        counts[t] += 1
        total += 1
    return vocabulary_from_counts(counts, total, min_count)


def top_k(vocab: Vocabulary, k: int) -> np.ndarray:
    """Ids of the ``k`` most frequent words, which are simply ``0..k-1``."""
    if k < 1 or k > len(vocab):
        raise VocabularyBoundsError(f"k={k} outside 1..{len(vocab)}")
    return np.arange(k, dtype=np.int64)


# -- sharded counting ---------------------------------------------------------

def shard_byte_ranges(path: str | os.PathLike, shards: int) -> list[tuple[int, int]]:
    """Split a file into ``shards`` byte ranges whose cuts fall on whitespace."""
    size = os.path.getsize(path)
    if shards <= 1 or size == 0:
        return [(0, size)]
    cuts = [0]
    with open(path, "rb") as fh:
        for s in range(1, shards):
            pos = max(size * s // shards, cuts[-1])
            fh.seek(pos)
            # advance to the first whitespace byte at or after pos
            while pos < size:
                chunk = fh.read(4096)
                if not chunk:
                    pos = size
                    break
                hits = [i for i in (chunk.find(c) for c in _WHITESPACE) if i >= 0]
                if hits:
                    pos += min(hits)
                    break
                pos += len(chunk)
            cuts.append(pos)
    cuts.append(size)
    return [(a, b) for a, b in zip(cuts[:-1], cuts[1:])]


def _count_range(args) -> tuple[Counter, int]:
    path, start, stop = args
    counts = Counter()
    total = 0
    with open(path, "rb") as fh:
        fh.seek(start)
        for tok in iter_tokens(fh, max_bytes=stop - start):
            counts[tok] += 1
            total += 1
    return counts, total


def count_file(path: str | os.PathLike, shards: int = 1,
               max_bytes: int | None = None) -> tuple[Counter, int]:
    """Token tally of a corpus file, optionally computed over byte shards."""
    if max_bytes is not None:
        with open(path, "rb") as fh:
            counts = Counter(iter_tokens(fh, max_bytes=max_bytes))
        return counts, sum(counts.values())
    ranges = shard_byte_ranges(path, shards)
    jobs = [(os.fspath(path), a, b) for a, b in ranges]
    if len(jobs) == 1:
        return _count_range(jobs[0])
    merged, total = Counter(), 0
    with ProcessPoolExecutor(max_workers=min(len(jobs), os.cpu_count() or 1)) as pool:
        for counts, n in pool.map(_count_range, jobs):
            merged.update(counts)
            total += n
    return merged, total


# -- encoded stream -----------------------------------------------------------

@dataclass(frozen=True)
class TokenStream:
    ids: np.ndarray
    source_length: int
    vocab_size: int
    vocab_hash: str

    def __len__(self) -> int:
        return len(self.ids)


def encode(tokens: Iterable[str], vocab: Vocabulary) -> TokenStream:
    """Map tokens to ids, dropping out-of-vocabulary tokens."""
    index = vocab.index
    raw = np.fromiter((index.get(t, -1) for t in tokens), dtype=np.int32)
    ids = raw[raw >= 0]
    return TokenStream(np.ascontiguousarray(ids), len(raw), len(vocab), vocab.fingerprint)


def encode_file(path: str | os.PathLike, vocab: Vocabulary, max_bytes: int | None = None,
                chunk: int = 1 << 20) -> TokenStream:
    """Stream a corpus file into ids without holding every token string."""
    index = vocab.index
    parts, buf, seen = [], [], 0
    with open(path, "rb") as fh:
        for tok in iter_tokens(fh, max_bytes=max_bytes):
            buf.append(index.get(tok, -1))
            if len(buf) >= chunk:
                parts.append(np.array(buf, dtype=np.int32))
                seen += len(buf)
                buf = []
    parts.append(np.array(buf, dtype=np.int32))
    seen += len(buf)
    raw = np.concatenate(parts)
    return TokenStream(np.ascontiguousarray(raw[raw >= 0]), seen, len(vocab), vocab.fingerprint)
