"""Topic-mixture document generator with Zipfian term marginals.

Each document draws a topic, then draws its tokens from a blend of a global
Zipf distribution over the vocabulary and a small topic-specific distribution
over a handful of signature terms. The signature terms give cluster means a few
dominant feature values, which is what makes the threshold filters effective.
"""

from __future__ import annotations

import numpy as np

from .corpus import RawCorpus


def zipf_weights(n, alpha):
    w = np.arange(1, n + 1, dtype=np.float64) ** -float(alpha)
    return w / w.sum()


def generate_raw(
    n_docs,
    n_terms,
    n_topics=None,
    alpha=1.0,
    seed=0,
    doc_len=60,
    topic_weight=0.35,
    n_signature=8,
) -> RawCorpus:
    """Generate a deterministic synthetic corpus of raw term counts."""
    if n_docs < 1 or n_terms < 2:
        raise ValueError("need n_docs >= 1 and n_terms >= 2")
    rng = np.random.default_rng(seed)
    if n_topics is None:
        n_topics = max(2, int(np.sqrt(n_docs) / 2))
    n_signature = min(n_signature, n_terms)

    # global Zipf marginal over a random permutation of the vocabulary
    ranks = rng.permutation(n_terms)
    p_global = np.empty(n_terms)
    p_global[ranks] = zipf_weights(n_terms, alpha)
    cdf_global = np.cumsum(p_global)

    sig_w = zipf_weights(n_signature, 1.2)
    topic_terms = np.stack([rng.choice(n_terms, n_signature, replace=False) for _ in range(n_topics)])
    topic_p = zipf_weights(n_topics, 0.5)

    topics = rng.choice(n_topics, size=n_docs, p=topic_p)
    lengths = 1 + rng.poisson(doc_len - 1, size=n_docs)
    total = int(lengths.sum())
    from_topic = rng.random(total) < topic_weight
    g = np.searchsorted(cdf_global, rng.random(total) * cdf_global[-1], side="right")
    g = np.minimum(g, n_terms - 1)
    doc_of = np.repeat(np.arange(n_docs), lengths)
    sig_idx = rng.choice(n_signature, size=total, p=sig_w)
    tok = np.where(from_topic, topic_terms[topics[doc_of], sig_idx], g)

    key = doc_of.astype(np.int64) * n_terms + tok
    uniq, counts = np.unique(key, return_counts=True)
    docs = uniq // n_terms
    terms = uniq % n_terms
    indptr = np.zeros(n_docs + 1, dtype=np.int64)
    np.cumsum(np.bincount(docs, minlength=n_docs), out=indptr[1:])
    return RawCorpus(
        n_docs=n_docs,
        n_terms=n_terms,
        indptr=indptr,
        terms=terms.astype(np.int64),
        counts=counts.astype(np.int64),
        doc_ids=np.arange(1, n_docs + 1, dtype=np.int64),
        df=np.bincount(terms, minlength=n_terms).astype(np.int64),
        tf=np.bincount(terms, weights=counts, minlength=n_terms).astype(np.int64),
    )
