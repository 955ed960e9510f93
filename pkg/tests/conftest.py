import numpy as np
import pytest
import scipy.sparse as sp

from esicp.corpus import Corpus, build_features
from esicp.synth import generate_raw


def make_corpus(n=300, d=120, alpha=1.0, seed=0, doc_len=30, n_topics=None):
    return build_features(generate_raw(n, d, n_topics=n_topics, alpha=alpha, seed=seed, doc_len=doc_len))


def dense(corpus):
    """Dense (N, D) matrix via scipy, independent of the package's kernels."""
    m = sp.csr_matrix((corpus.values, corpus.terms, corpus.indptr), shape=(corpus.n_docs, corpus.n_terms))
    return m.toarray()


def corpus_from_dense(X):
    """Corpus wrapping the rows of ``X`` as they are (no weighting, no renumbering)."""
    X = np.asarray(X, dtype=np.float64)
    m = sp.csr_matrix(X)
    m.sort_indices()
    n, d = X.shape
    return Corpus(
        n_docs=n,
        n_terms=d,
        indptr=m.indptr.astype(np.int64),
        terms=m.indices.astype(np.int32),
        values=m.data.astype(np.float64),
        df=np.asarray((X != 0).sum(axis=0)).astype(np.int64),
        term_map=np.arange(1, d + 1, dtype=np.int64),
        doc_ids=np.arange(1, n + 1, dtype=np.int64),
    )


def random_means(rng, k, d, density=0.3):
    m = rng.random((k, d)) * (rng.random((k, d)) < density)
    m[np.arange(k), rng.integers(0, d, k)] += 1.0  # no all-zero rows
    return m / np.linalg.norm(m, axis=1, keepdims=True)


@pytest.fixture(scope="session")
def small_corpus():
    return make_corpus(300, 120, seed=3)


@pytest.fixture(scope="session")
def mid_corpus():
    return make_corpus(1500, 600, seed=11, doc_len=50)


# One line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
