"""Accelerated spherical K-means for sparse, high-dimensional document sets."""

from .cluster import ALGORITHMS, RunConfig, RunResult, run
from .corpus import Corpus, RawCorpus, build_features, load_corpus, read_bag_of_words, read_cache, write_cache
from .index import StructuralParams

__all__ = [
    "ALGORITHMS",
    "Corpus",
    "RawCorpus",
    "RunConfig",
    "RunResult",
    "StructuralParams",
    "build_features",
    "load_corpus",
    "read_bag_of_words",
    "read_cache",
    "run",
    "write_cache",
]
