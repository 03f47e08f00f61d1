"""Paraphrase diagnostics for word analogies in SGNS embeddings."""

from .analogy_bats import AnalogyInstance, AnalogySolver, enumerate_analogies, load_bats, three_cos_add
from .cooccurrence import PairCounts, TripletCounts, count_pairs, count_triplets, load_counts, save_counts
from .corpus import Vocabulary, build_vocabulary, encode, tokenize
from .paraphrase_errors import ErrorDecomposition, ParaphraseEstimator, decompose, decomposition_residual
from .pci_rank import PciMatrix, build_pci, rank_true_paraphrase
from .pmi_linearity import build_pmi, correlation_report, pseudo_inverse
from .sgns import EmbeddingPair, SgnsConfig, train

__version__ = "0.1.0"

__all__ = [
    "AnalogyInstance", "AnalogySolver", "enumerate_analogies", "load_bats", "three_cos_add",
    "PairCounts", "TripletCounts", "count_pairs", "count_triplets", "load_counts", "save_counts",
    "Vocabulary", "build_vocabulary", "encode", "tokenize",
    "ErrorDecomposition", "ParaphraseEstimator", "decompose", "decomposition_residual",
    "PciMatrix", "build_pci", "rank_true_paraphrase",
    "build_pmi", "correlation_report", "pseudo_inverse",
    "EmbeddingPair", "SgnsConfig", "train",
]
