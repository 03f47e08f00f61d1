"""BATS loading, analogy enumeration and 3CosAdd evaluation."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Vocabulary
from .cooccurrence import canonical
from .sgns import EmbeddingPair

_CODE = re.compile(r"\b([IDEL]\d\d)\b")


class BatsParseError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


class DegenerateQueryError(ValueError):
    pass


class EmptyAnalogySetError(ValueError):
    pass


@dataclass(frozen=True)
class BatsRecord:
    source: str
    targets: tuple[str, ...]
    oov: bool = False

    @property
    def target(self) -> str:
        return self.targets[0]


@dataclass(frozen=True)
class BatsCategory:
    code: str
    name: str
    records: tuple[BatsRecord, ...]


@dataclass(frozen=True)
class AnalogyInstance:
    """a - a* + b* = b, from records (a -> b) and (a* -> b*)."""

    a: int
    a_star: int
    b: int
    b_star: int
    targets: frozenset[int]  # every acceptable answer for b
    category: str = ""

    @property
    def W(self) -> tuple[int, int]:
        return canonical(self.a, self.b_star)

    @property
    def W_star(self) -> tuple[int, int]:
        return canonical(self.a_star, self.b)

    @property
    def query(self) -> tuple[int, int, int]:
        return self.a, self.a_star, self.b_star


def parse_bats_file(path, vocab: Vocabulary | None = None) -> BatsCategory:
    path = Path(path)
    m = _CODE.search(path.stem)
    code = m.group(1) if m else path.stem
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip():
                raise BatsParseError(path, lineno, f"expected 'word<TAB>targets', got {line!r}")
            targets = tuple(t.strip() for t in parts[1].split("/") if t.strip())
            if not targets:
                raise BatsParseError(path, lineno, "record has no target")
            source = parts[0].strip()
            oov = vocab is not None and (source not in vocab or targets[0] not in vocab)
            records.append(BatsRecord(source, targets, oov))
    return BatsCategory(code, path.stem, tuple(records))


def load_bats(directory, vocab: Vocabulary | None = None) -> list[BatsCategory]:
    """Parse every ``*.txt`` category file under ``directory``, sorted by code."""
    files = sorted(p for p in Path(directory).rglob("*.txt") if p.is_file())
    cats = [parse_bats_file(p, vocab) for p in files]
    return sorted(cats, key=lambda c: c.code)


def enumerate_analogies(category: BatsCategory, vocab: Vocabulary) -> list[AnalogyInstance]:
    """All ordered pairs of distinct in-vocabulary records."""
    recs = [r for r in category.records if r.source in vocab and r.target in vocab]
    out = []
    for i, r1 in enumerate(recs):
        targets = frozenset(vocab.id(t) for t in r1.targets if t in vocab)
        for j, r2 in enumerate(recs):
            if i != j:
                out.append(AnalogyInstance(vocab.id(r1.source), vocab.id(r2.source),
                                           vocab.id(r1.target), vocab.id(r2.target),
                                           targets, category.code))
    return out


class AnalogySolver:
    """3CosAdd over length-normalized word vectors."""

    def __init__(self, embeddings: EmbeddingPair | np.ndarray):
        vecs = embeddings.word if isinstance(embeddings, EmbeddingPair) else embeddings
        vecs = np.asarray(vecs, dtype=np.float64)
        norms = np.linalg.norm(vecs, axis=1)
        self.zero = norms == 0
        with np.errstate(invalid="ignore", divide="ignore"):
            self.unit = vecs / norms[:, None]
        self.unit[self.zero] = 0.0

    def predict_many(self, queries: np.ndarray, batch: int = 512) -> np.ndarray:
        """queries: (n, 3) rows of (a, a*, b*) ids."""
        queries = np.asarray(queries, dtype=np.int64).reshape(-1, 3)
        if self.zero[queries].any():
            raise DegenerateQueryError("zero-norm vector among analogy query words")
        out = np.empty(len(queries), dtype=np.int64)
        for s in range(0, len(queries), batch):
            q = queries[s:s + batch]
            target = self.unit[q[:, 0]] - self.unit[q[:, 1]] + self.unit[q[:, 2]]
            tn = np.linalg.norm(target, axis=1)
            if (tn < 1e-12).any():  # sum of unit vectors: rounding-level means zero
                raise DegenerateQueryError("a - a* + b* is the zero vector")
            sims = (target / tn[:, None]) @ self.unit.T
            rows = np.arange(len(q))[:, None]
            sims[rows, q] = -np.inf
            out[s:s + batch] = np.argmax(sims, axis=1)
        return out

    def predict(self, a: int, a_star: int, b_star: int) -> int:
        return int(self.predict_many(np.array([[a, a_star, b_star]]))[0])


def three_cos_add(embeddings, a: int, a_star: int, b_star: int) -> int:
    """argmax_x cos(w_x, w_a - w_a* + w_b*) over x not in {a, a*, b*}."""
    return AnalogySolver(embeddings).predict(a, a_star, b_star)


def evaluate_category(embeddings, category: BatsCategory, vocab: Vocabulary,
                      solver: AnalogySolver | None = None) -> float:
    analogies = enumerate_analogies(category, vocab)
    if not analogies:
        raise EmptyAnalogySetError(f"category {category.code} has no enumerable analogy")
    return evaluate_analogies(solver or AnalogySolver(embeddings), analogies)


def evaluate_analogies(solver: AnalogySolver, analogies: list[AnalogyInstance]) -> float:
    if not analogies:
        raise EmptyAnalogySetError("no analogies to evaluate")
    pred = solver.predict_many(np.array([x.query for x in analogies]))
    return float(np.mean([p in x.targets for p, x in zip(pred, analogies)]))


def write_accuracy_tsv(path, rows) -> None:
    """rows: iterable of (category, n_analogies, accuracy or None)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#category\tn_analogies\taccuracy\n")
        for code, n, acc in rows:
            fh.write(f"{code}\t{n}\t{'nan' if acc is None else format(acc, '.6f')}\n")


def bats_paraphrase_pairs(categories, vocab: Vocabulary) -> list[tuple[int, int]]:
    """Distinct canonical paraphrase sets W and W* over all analogies."""
    seen = set()
    for cat in categories:
        for x in enumerate_analogies(cat, vocab):
            for p in (x.W, x.W_star):
                if p[0] != p[1]:
                    seen.add(p)
    return sorted(seen)


def is_bats_dir(directory) -> bool:
    return os.path.isdir(directory) and any(Path(directory).rglob("*.txt"))
