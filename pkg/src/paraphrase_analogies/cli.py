"""Command line entry point: one subcommand per pipeline stage plus ``all``.

Values come from (lowest to highest precedence) built-in defaults, the
``--mini`` preset, a ``--config`` file and explicit flags.

Exit codes: 0 success, 2 config error, 3 dependency error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .corpus import CorpusError
from .sgns import EmbeddingPair

_HELP = {
    "corpus": "corpus file (whitespace separated tokens)",
    "bats": "BATS directory (category *.txt files)",
    "output_dir": "directory for artifacts and the manifest",
    "window_radius": "symmetric context window radius",
    "min_count": "drop words seen fewer times",
    "top_k": "pair universe and probe set: the k most frequent words",
    "memory_budget_mb": "in-memory budget for counting before spilling runs to disk",
    "threads": "worker threads (1 forces the deterministic path)",
    "deterministic": "single-threaded, bit-reproducible training",
    "mini": "CI preset: first 10 MB of corpus, top-2000 universe, 1 epoch",
    "max_corpus_bytes": "read at most this many corpus bytes (0: all)",
    "positive_values_only": "store only strictly positive PCI entries",
    "restrict_to_wstar_words": "rank only against pairs sharing a word with W*",
    "probe_word": "word whose vector is compared with its PMI image",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    for f in fields(pl.PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        kw = {"dest": f.name, "default": argparse.SUPPRESS, "help": _HELP.get(f.name)}
        if f.type in ("bool", bool):
            p.add_argument(flag, nargs="?", const=True, type=pl.parse_bool, metavar="BOOL", **kw)
        else:
            typ = {"int": int, "float": float}.get(f.type if isinstance(f.type, str) else f.type.__name__, str)
            p.add_argument(flag, type=typ, **kw)
    p.add_argument("--force", action="store_true", default=False, help="re-run even on a cache hit")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="paraphrase-analogies",
                                     description="Co-occurrence statistics, SGNS training and "
                                                 "paraphrase diagnostics for word analogies.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in pl.ORDER + ["all"]:
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "all" else "run every stage")
        _add_config_flags(p)
        if name == "linearity":
            p.add_argument("--embeddings", help="word vectors (word2vec text); standalone mode")
            p.add_argument("--contexts", help="context vectors (word2vec text); standalone mode")
            p.add_argument("--pmi", help="PMI matrix written by build-pmi; standalone mode")
        if name in ("errors", "pci-rank", "analogy", "linearity"):
            p.add_argument("--output", help="also copy the main table to this path")
    return parser


def config_from_args(args: argparse.Namespace) -> pl.PipelineConfig:
    values = pl.read_config_file(args.config) if getattr(args, "config", None) else {}
    for f in fields(pl.PipelineConfig):
        if f.name in args:
            values[f.name] = getattr(args, f.name)
    return pl.PipelineConfig.from_mapping(values)


def _standalone_linearity(args, config: pl.PipelineConfig) -> Path:
    if not (args.embeddings and args.contexts and args.pmi):
        raise pl.ConfigError("standalone linearity needs --embeddings, --contexts and --pmi")
    try:
        emb = EmbeddingPair.load(args.embeddings, args.contexts)
        pmi = pl.SparsePmiMatrix.load(args.pmi)
    except (OSError, ValueError) as exc:
        raise pl.ConfigError(str(exc)) from exc
    if pmi.shape[0] != emb.vocab_size:
        raise pl.ConfigError(f"PMI has {pmi.shape[0]} rows but embeddings cover {emb.vocab_size} words")
    k = min(config.top_k, emb.vocab_size)
    paths = pl.run_linearity(emb, pmi, np.arange(k), emb.tokens, config.out / "linearity",
                             config.probe_word)
    return paths["correlations"]


_MAIN_TABLE = {"errors": ("errors", "norms"), "pci-rank": ("pci-rank", "ranks"),
               "analogy": ("analogy", "accuracy"), "linearity": ("linearity", "correlations")}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(args)
        if args.command == "linearity" and (args.embeddings or args.contexts or args.pmi):
            out = _standalone_linearity(args, config)
        elif args.command == "all":
            for stage, ran in pl.run_all(config).items():
                print(f"{stage}\t{'ran' if ran else 'cached'}")
            out = config.out / "report"
        else:
            entry, ran = pl.run_stage(args.command, config, force=args.force)
            print(f"{args.command}\t{'ran' if ran else 'cached'}")
            for name, art in sorted(entry.artifacts.items()):
                print(f"  {name}\t{art['path']}")
            out = None
            if args.command in _MAIN_TABLE:
                out = Path(entry.artifacts[_MAIN_TABLE[args.command][1]]["path"])
        if getattr(args, "output", None) and out is not None:
            shutil.copyfile(out, args.output)
    except pl.PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (CorpusError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
