"""Stage orchestration with a hash-keyed artifact manifest.

Every stage declares its upstream stages, the config keys it depends on and
the files it writes.  A stage is skipped on re-run only when the manifest
holds an entry whose config hash (own keys plus upstream artifact hashes)
matches and whose artifacts still hash to the recorded values.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import shutil
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import analogy_bats as ab
from . import plotting
from .cooccurrence import (count_pairs, count_triplets, load_counts, save_counts,
                           well_defined_fraction)
from .corpus import TokenStream, Vocabulary, count_file, encode_file, top_k, vocabulary_from_counts
from .paraphrase_errors import (ParaphraseEstimator, category_norm_table, write_norm_detail,
                                write_norm_table)
from .pci_rank import build_pci, category_rank_table, write_rank_detail, write_rank_table
from .pmi_linearity import (CorrelationReport, SparsePmiMatrix, approximate_embedding, build_pmi,
                            correlation_report, pseudo_inverse)
from .sgns import EmbeddingPair, SgnsConfig, train

log = logging.getLogger(__name__)

MINI_PRESET = {"max_corpus_bytes": 10_000_000, "top_k": 2000, "epochs": 1}


class PipelineError(Exception):
    exit_code = 1


class ConfigError(PipelineError):
    exit_code = 2


class EmptyReportError(ConfigError):
    pass


class DependencyError(PipelineError):
    exit_code = 3


class NumericError(PipelineError):
    exit_code = 4


@dataclass
class PipelineConfig:
    corpus: str = ""
    bats: str = ""
    output_dir: str = "paa-out"
    window_radius: int = 5
    min_count: int = 5
    top_k: int = 10000
    dim: int = 500
    negative: int = 1
    noise_exponent: float = 1.0
    epochs: int = 5
    alpha: float = 0.025
    sample: float = 0.0
    seed: int = 1
    epsilon: float = 1e-15
    memory_budget_mb: float = 2048.0
    threads: int = 1
    shards: int = 1
    deterministic: bool = False
    mini: bool = False
    max_corpus_bytes: int = 0
    positive_values_only: bool = False
    restrict_to_wstar_words: bool = False
    probe_word: str = "king"

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, values: dict) -> "PipelineConfig":
        """Build from string or typed values; the mini preset fills unset keys."""
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            kw[key] = _coerce(key, raw, types[key])
        if kw.get("mini"):
            for key, value in MINI_PRESET.items():
                kw.setdefault(key, value)
        if kw.get("deterministic"):
            kw["threads"] = 1
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        checks = [
            (self.window_radius >= 1, "window_radius must be >= 1"),
            (self.min_count >= 1, "min_count must be >= 1"),
            (1 <= self.top_k <= 1 << 16, "top_k must lie in 1..65536"),
            (self.dim >= 1, "dim must be >= 1"),
            (self.negative >= 1, "negative must be >= 1"),
            (0.0 <= self.noise_exponent <= 1.0, "noise_exponent must lie in [0, 1]"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.alpha > 0, "alpha must be > 0"),
            (self.sample >= 0, "sample must be >= 0"),
            (0 < self.epsilon < 1, "epsilon must lie in (0, 1)"),
            (self.memory_budget_mb > 0, "memory_budget_mb must be > 0"),
            (self.threads >= 1 and self.shards >= 1, "threads and shards must be >= 1"),
            (self.max_corpus_bytes >= 0, "max_corpus_bytes must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if self.corpus and not os.path.isfile(self.corpus):
            raise ConfigError(f"corpus file not found: {self.corpus}")
        if self.bats and not os.path.isdir(self.bats):
            raise ConfigError(f"BATS directory not found: {self.bats}")

    def sgns(self) -> SgnsConfig:
        return SgnsConfig(dim=self.dim, negative=self.negative, noise_exponent=self.noise_exponent,
                          window_radius=self.window_radius, epochs=self.epochs, alpha=self.alpha,
                          sample=self.sample, seed=self.seed,
                          threads=1 if self.deterministic else self.threads)

    @property
    def out(self) -> Path:
        return Path(self.output_dir).absolute()


def _coerce(key, raw, typ):
    if not isinstance(raw, str):
        return raw
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            return parse_bool(raw)
        if typ == "int":
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if typ == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    s = str(raw).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` (or ``key value``) lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = (s.strip() for s in line.split("=", 1))
        else:
            parts = line.split(None, 1)
            if len(parts) != 2:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = parts
        out[key.replace("-", "_")] = value
    return out


# -- hashing & manifest -----------------------------------------------------------------

def file_hash(path, limit: int | None = None) -> str:
    h = hashlib.sha256()
    remaining = limit
    with open(path, "rb") as fh:
        while True:
            want = 1 << 22 if remaining is None else min(1 << 22, remaining)
            if want == 0:
                break
            chunk = fh.read(want)
            if not chunk:
                break
            h.update(chunk)
            if remaining is not None:
                remaining -= len(chunk)
    return h.hexdigest()


def dir_hash(path) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(path).rglob("*.txt")):
        h.update(str(p.relative_to(path)).encode())
        h.update(file_hash(p).encode())
    return h.hexdigest()


@dataclass
class ManifestEntry:
    stage: str
    artifacts: dict[str, dict]  # name -> {"path", "sha256"}
    config_hash: str
    timestamp: float
    seconds: float = 0.0


@dataclass
class Manifest:
    path: Path
    entries: dict[str, ManifestEntry] = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        if not path.exists():
            return cls(path)
        raw = json.loads(path.read_text(encoding="utf-8"))
        return cls(path, {k: ManifestEntry(**v) for k, v in raw.get("stages", {}).items()})

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        data = {"version": 1, "stages": {k: dataclasses.asdict(v) for k, v in sorted(self.entries.items())}}
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(data, indent=2, sort_keys=True), encoding="utf-8")
        os.replace(tmp, self.path)

    def valid(self, stage: str) -> bool:
        e = self.entries.get(stage)
        if e is None:
            return False
        for art in e.artifacts.values():
            if not os.path.exists(art["path"]) or file_hash(art["path"]) != art["sha256"]:
                return False
        return True


# -- stages -----------------------------------------------------------------------------

@dataclass(frozen=True)
class Stage:
    name: str
    deps: tuple[str, ...]
    keys: tuple[str, ...]
    run: Callable[["Context"], dict[str, Path]]


class Context:
    """Gives stage functions access to config and upstream artifacts."""

    def __init__(self, config: PipelineConfig, manifest: Manifest):
        self.config = config
        self.manifest = manifest
        self._cache = {}

    def path(self, name: str) -> Path:
        return self.config.out / name

    def artifact(self, stage: str, name: str) -> Path:
        return Path(self.manifest.entries[stage].artifacts[name]["path"])

    def _cached(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def vocab(self) -> Vocabulary:
        return self._cached("vocab", lambda: Vocabulary.load(self.artifact("ingest", "vocab")))

    def tokens(self) -> TokenStream:
        def load():
            v = self.vocab()
            ids = np.load(self.artifact("ingest", "tokens"))
            meta = json.loads(self.artifact("ingest", "stream").read_text())
            return TokenStream(ids, meta["source_length"], len(v), v.fingerprint)
        return self._cached("tokens", load)

    def pairs(self):
        return self._cached("pairs", lambda: load_counts(self.artifact("count-pairs", "pairs")))

    def triplets(self):
        return self._cached("triplets", lambda: load_counts(self.artifact("count-triplets", "triplets")))

    def pmi(self) -> SparsePmiMatrix:
        return self._cached("pmi", lambda: SparsePmiMatrix.load(self.artifact("build-pmi", "pmi")))

    def embeddings(self) -> EmbeddingPair:
        def load():
            with np.load(self.artifact("train-sgns", "matrices")) as z:
                return EmbeddingPair(z["word"], z["context"], self.vocab().tokens)
        return self._cached("emb", load)

    def categories(self) -> list[ab.BatsCategory]:
        def load():
            if not self.config.bats:
                raise ConfigError("no BATS directory configured (--bats)")
            cats = ab.load_bats(self.config.bats, self.vocab())
            if not cats:
                raise EmptyReportError(f"BATS directory {self.config.bats} holds no category files")
            return cats
        return self._cached("bats", load)

    def analogies(self) -> dict[str, list[ab.AnalogyInstance]]:
        return self._cached("analogies", lambda: {c.code: ab.enumerate_analogies(c, self.vocab())
                                                  for c in self.categories()})

    def universe_size(self) -> int:
        return min(self.config.top_k, len(self.vocab()))

    def spill_dir(self, stage: str) -> Path:
        return self.config.out / f".spill-{stage}"


def _ingest(ctx: Context):
    cfg = ctx.config
    if not cfg.corpus:
        raise ConfigError("no corpus configured (--corpus)")
    limit = cfg.max_corpus_bytes or None
    counts, total = count_file(cfg.corpus, shards=cfg.shards if limit is None else 1, max_bytes=limit)
    try:
        vocab = vocabulary_from_counts(counts, total, cfg.min_count)
    except ValueError as exc:
        raise ConfigError(f"corpus {cfg.corpus}: {exc}") from exc
    if len(vocab) == 0:
        raise ConfigError(f"min_count={cfg.min_count} removes every token of the corpus")
    stream = encode_file(cfg.corpus, vocab, max_bytes=limit)
    paths = {"vocab": ctx.path("vocab.tsv"), "tokens": ctx.path("tokens.npy"),
             "stream": ctx.path("tokens.json")}
    vocab.save(paths["vocab"])
    np.save(paths["tokens"], stream.ids)
    paths["stream"].write_text(json.dumps({"source_length": stream.source_length,
                                           "kept": len(stream.ids)}), encoding="utf-8")
    log.info("ingest: %d tokens, |V| = %d", total, len(vocab))
    return paths


def _count_pairs(ctx: Context):
    cfg = ctx.config
    spill = ctx.spill_dir("pairs")
    pc = count_pairs(ctx.tokens(), cfg.window_radius, shards=max(cfg.shards, cfg.threads),
                     threads=cfg.threads, memory_budget_mb=cfg.memory_budget_mb, spill_dir=spill)
    path = ctx.path("pairs.bin")
    save_counts(pc, path)
    shutil.rmtree(spill, ignore_errors=True)
    return {"pairs": path}


def _count_triplets(ctx: Context):
    cfg = ctx.config
    spill = ctx.spill_dir("triplets")
    universe = top_k(ctx.vocab(), ctx.universe_size())
    tc = count_triplets(ctx.tokens(), universe, cfg.window_radius, shards=max(cfg.shards, cfg.threads),
                        threads=cfg.threads, memory_budget_mb=cfg.memory_budget_mb, spill_dir=spill)
    path = ctx.path("triplets.bin")
    save_counts(tc, path)
    shutil.rmtree(spill, ignore_errors=True)
    return {"triplets": path}


def _train_sgns(ctx: Context):
    try:
        emb = train(ctx.tokens(), ctx.vocab(), ctx.config.sgns())
    except FloatingPointError as exc:
        raise NumericError(str(exc)) from exc
    paths = {"W": ctx.path("W.txt"), "C": ctx.path("C.txt"), "matrices": ctx.path("embeddings.npz")}
    emb.save(paths["W"], paths["C"])
    with open(paths["matrices"], "wb") as fh:
        np.savez(fh, word=emb.word, context=emb.context)
    return paths


def _build_pmi(ctx: Context):
    try:
        pmi = build_pmi(ctx.pairs())
    except ValueError as exc:
        raise NumericError(str(exc)) from exc
    path = ctx.path("pmi.bin")
    pmi.save(path)
    return {"pmi": path}


def run_linearity(emb: EmbeddingPair, pmi: SparsePmiMatrix, word_ids, tokens, out_dir: Path,
                  probe_word: str | None = None) -> dict[str, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    pinv = pseudo_inverse(emb.C)
    report = correlation_report(emb, pmi, word_ids, pinv=pinv)
    if not np.isfinite(report.mean):
        raise NumericError("no word has a defined Pearson correlation")
    paths = {"correlations": out_dir / "correlations.tsv", "histogram": out_dir / "histogram.tsv",
             "probe": out_dir / "probe.tsv"}
    report.write_tsv(paths["correlations"], tokens)
    report.write_histogram(paths["histogram"])
    with open(paths["probe"], "w", encoding="utf-8", newline="\n") as fh:
        index = {t: i for i, t in enumerate(tokens)}
        if probe_word and probe_word in index:
            wid = index[probe_word]
            approx = approximate_embedding(pinv, pmi.matrix[[wid]])
            vec = emb.word[wid].astype(np.float64)
            fh.write(f"#probe\t{probe_word}\n#dim\tword_vector\tapproximation\n")
            for d, (a, b) in enumerate(zip(vec, approx)):
                fh.write(f"{d}\t{a:.8g}\t{b:.8g}\n")
        else:
            fh.write(f"#probe\t{probe_word or ''}\tabsent\n")
    return paths


def _linearity(ctx: Context):
    ids = top_k(ctx.vocab(), ctx.universe_size())
    return run_linearity(ctx.embeddings(), ctx.pmi(), ids, ctx.vocab().tokens,
                         ctx.path("linearity"), ctx.config.probe_word)


def _errors(ctx: Context):
    cfg = ctx.config
    vocab, trip = ctx.vocab(), ctx.triplets()
    analogies = ctx.analogies()
    est = ParaphraseEstimator(trip, ctx.pairs())
    table = category_norm_table(analogies, est, cfg.epsilon)
    out = ctx.path("errors")
    out.mkdir(parents=True, exist_ok=True)
    paths = {"norms": out / "error_norms.tsv", "detail": out / "errors_detail.tsv",
             "well_defined": out / "well_defined.tsv"}
    write_norm_table(paths["norms"], table)
    write_norm_detail(paths["detail"], table, vocab.tokens)

    pairs = ab.bats_paraphrase_pairs(ctx.categories(), vocab)
    in_universe = [p for p in pairs if trip.index.contains(*p)]
    with open(paths["well_defined"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#statistic\tvalue\n")
        fh.write(f"n_paraphrase_sets\t{len(pairs)}\n")
        fh.write(f"n_in_pair_universe\t{len(in_universe)}\n")
        frac_u = well_defined_fraction(trip, in_universe) if in_universe else float("nan")
        frac_all = well_defined_fraction(trip, pairs) if pairs else float("nan")
        fh.write(f"n_well_defined\t{sum(trip.is_well_defined(*p) for p in in_universe)}\n")
        fh.write(f"well_defined_fraction\t{frac_u:.6f}\n")
        fh.write(f"well_defined_fraction_all_vocab\t{frac_all:.6f}\n")
    return paths


def _pci_rank(ctx: Context):
    cfg = ctx.config
    pci = build_pci(ctx.triplets(), cfg.positive_values_only)
    table = category_rank_table(ctx.analogies(), pci, cfg.restrict_to_wstar_words)
    out = ctx.path("pci")
    out.mkdir(parents=True, exist_ok=True)
    paths = {"pci": out / "pci.bin", "ranks": out / "paraphrase_ranks.tsv", "detail": out / "ranks_detail.tsv"}
    pci.save(paths["pci"])
    write_rank_table(paths["ranks"], table)
    write_rank_detail(paths["detail"], table, ctx.vocab().tokens)
    return paths


def _analogy(ctx: Context):
    solver = ab.AnalogySolver(ctx.embeddings())
    rows = []
    for code, analogies in ctx.analogies().items():
        acc = ab.evaluate_analogies(solver, analogies) if analogies else None
        rows.append((code, len(analogies), acc))
    path = ctx.path("analogy.tsv")
    ab.write_accuracy_tsv(path, rows)
    return {"accuracy": path}


def _read_tsv_table(path) -> tuple[list[str], dict[str, list[str]]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].lstrip("#").split("\t")[1:]
    return header, {ln.split("\t")[0]: ln.split("\t")[1:] for ln in lines[1:]}


def _report(ctx: Context):
    out = ctx.path("report")
    out.mkdir(parents=True, exist_ok=True)
    lin = {k: ctx.artifact("linearity", k) for k in ("correlations", "histogram", "probe")}
    copies = {
        "error_norms": ctx.artifact("errors", "norms"),
        "paraphrase_ranks": ctx.artifact("pci-rank", "ranks"),
        "correlation_histogram": lin["histogram"],
        "correlations": lin["correlations"],
        "well_defined": ctx.artifact("errors", "well_defined"),
        "analogy": ctx.artifact("analogy", "accuracy"),
    }
    paths = {}
    for name, src in copies.items():
        dst = out / f"{name}.tsv"
        shutil.copyfile(src, dst)
        paths[name] = dst

    corr_lines = lin["correlations"].read_text(encoding="utf-8").splitlines()
    summary = dict(kv.split("=", 1) for kv in corr_lines[-1].split("\t")[1:])
    wd = dict(ln.split("\t") for ln in copies["well_defined"].read_text().splitlines()[1:])
    vocab = ctx.vocab()
    rows = [("vocab_size", len(vocab)), ("total_tokens", vocab.total_tokens),
            ("pair_universe", ctx.universe_size()), ("window_radius", ctx.config.window_radius),
            ("well_defined_fraction", wd["well_defined_fraction"]),
            ("mean_pearson_r", summary["mean"]), ("variance_pearson_r", summary["variance"]),
            ("pearson_missing", summary["missing"])]
    probe = lin["probe"].read_text(encoding="utf-8").splitlines()
    if len(probe) > 2:
        data = np.array([ln.split("\t")[1:] for ln in probe[2:]], dtype=np.float64)
        r = float(np.corrcoef(data[:, 0], data[:, 1])[0, 1])
        rows.append((f"probe_pearson_r[{ctx.config.probe_word}]", f"{r:.6f}"))
        plotting.plot_word_probe(data[:, 0], data[:, 1], ctx.config.probe_word, out / "probe_scatter.png")
        paths["probe_fig"] = out / "probe_scatter.png"
    acc = [ln.split("\t") for ln in copies["analogy"].read_text().splitlines()[1:]]
    rows.append(("chance_accuracy", f"{1.0 / len(vocab):.3e}"))
    for code, n, a in acc:
        rows.append((f"accuracy[{code}]", a))
    paths["summary"] = out / "summary.tsv"
    with open(paths["summary"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#key\tvalue\n")
        for k, v in rows:
            fh.write(f"{k}\t{v}\n")

    rvals = np.array([ln.split("\t")[1] for ln in corr_lines[1:-1]], dtype=np.float64)
    ok = np.isfinite(rvals)
    rep = CorrelationReport(np.arange(len(rvals)), rvals, float(rvals[ok].mean()) if ok.any() else 0.0,
                            0.0, int((~ok).sum()))
    plotting.plot_correlation_histogram(rep, out / "correlation_histogram.png")
    paths["histogram_fig"] = out / "correlation_histogram.png"

    codes, norms = _read_tsv_table(copies["error_norms"])
    plotting.plot_category_bars(codes, {
        "paraphrase": [float(x) for x in norms["mean_paraphrase_error_norm"]],
        "dependence sum": [float(x) for x in norms["mean_dependence_errors_sum_norm"]],
        "all errors": [float(x) for x in norms["mean_all_errors_sum_norm"]]},
        out / "error_norms.png", "mean L2 norm")
    paths["error_norms_fig"] = out / "error_norms.png"
    codes, ranks = _read_tsv_table(copies["paraphrase_ranks"])
    plotting.plot_category_bars(codes, {
        "average": [float(x) for x in ranks["average_rank"]],
        "median": [float(x) for x in ranks["median_rank"]]},
        out / "paraphrase_ranks.png", "rank of true paraphrase", log=True)
    paths["paraphrase_ranks_fig"] = out / "paraphrase_ranks.png"
    return paths


STAGES: dict[str, Stage] = {s.name: s for s in [
    Stage("ingest", (), ("corpus", "min_count", "max_corpus_bytes"), _ingest),
    Stage("count-pairs", ("ingest",), ("window_radius",), _count_pairs),
    Stage("count-triplets", ("ingest",), ("window_radius", "top_k"), _count_triplets),
    Stage("train-sgns", ("ingest",), ("dim", "negative", "noise_exponent", "window_radius", "epochs",
                                      "alpha", "sample", "seed", "threads", "deterministic"), _train_sgns),
    Stage("build-pmi", ("count-pairs",), (), _build_pmi),
    Stage("linearity", ("train-sgns", "build-pmi"), ("top_k", "probe_word"), _linearity),
    Stage("errors", ("count-pairs", "count-triplets"), ("bats", "epsilon"), _errors),
    Stage("pci-rank", ("count-triplets",), ("bats", "positive_values_only", "restrict_to_wstar_words"),
          _pci_rank),
    Stage("analogy", ("train-sgns",), ("bats",), _analogy),
    Stage("report", ("linearity", "errors", "pci-rank", "analogy"), ("probe_word",), _report),
]}

ORDER = list(STAGES)


def _key_value(config: PipelineConfig, key: str):
    value = getattr(config, key)
    if key == "corpus" and value:
        limit = config.max_corpus_bytes or None
        return {"path": os.path.abspath(value), "sha256": file_hash(value, limit)}
    if key == "bats" and value:
        return {"path": os.path.abspath(value), "sha256": dir_hash(value)}
    return value


def stage_config_hash(stage: Stage, config: PipelineConfig, manifest: Manifest) -> str:
    payload = {"stage": stage.name, "keys": {k: _key_value(config, k) for k in stage.keys},
               "upstream": {d: {n: a["sha256"] for n, a in sorted(manifest.entries[d].artifacts.items())}
                            for d in stage.deps}}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def run_stage(name: str, config: PipelineConfig, manifest: Manifest | None = None,
              force: bool = False) -> tuple[ManifestEntry, bool]:
    """Run one stage (or reuse its cached output). Returns (entry, executed)."""
    if name not in STAGES:
        raise ConfigError(f"unknown stage {name!r}")
    stage = STAGES[name]
    config.out.mkdir(parents=True, exist_ok=True)
    manifest = manifest or Manifest.load(config.out / "manifest.json")
    if any(not manifest.valid(d) for d in stage.deps):
        missing = [s for s in stages_until(name)[:-1] if not manifest.valid(s)]
        raise DependencyError(f"stage '{name}' is missing upstream stages: {', '.join(missing)}; "
                              f"run '{missing[0]}' first")
    chash = stage_config_hash(stage, config, manifest)
    entry = manifest.entries.get(name)
    if not force and entry is not None and entry.config_hash == chash and manifest.valid(name):
        log.info("%s: up to date, skipped", name)
        return entry, False
    t0 = time.time()
    paths = stage.run(Context(config, manifest))
    entry = ManifestEntry(name, {k: {"path": str(p), "sha256": file_hash(p)} for k, p in paths.items()},
                          chash, time.time(), time.time() - t0)
    manifest.entries[name] = entry
    manifest.save()
    log.info("%s: done in %.1fs", name, time.time() - t0)
    return entry, True


def stages_until(name: str) -> list[str]:
    """Topologically ordered closure of ``name`` and its upstream stages."""
    need, todo = set(), [name]
    while todo:
        s = todo.pop()
        if s not in need:
            need.add(s)
            todo.extend(STAGES[s].deps)
    return [s for s in ORDER if s in need]


def run_all(config: PipelineConfig, until: str = "report") -> dict[str, bool]:
    manifest = Manifest.load(config.out / "manifest.json")
    return {s: run_stage(s, config, manifest)[1] for s in stages_until(until)}


def missing_stages(config: PipelineConfig) -> list[str]:
    manifest = Manifest.load(config.out / "manifest.json")
    return [s for s in ORDER if s != "report" and not manifest.valid(s)]
