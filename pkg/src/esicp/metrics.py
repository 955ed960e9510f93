"""Clustering quality and corpus-structure statistics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus

log = logging.getLogger(__name__)


def cpr(candidates, n, k):
    """Candidate ratio: verified centroids per object-centroid pair."""
    return candidates / (n * k)


def objective(corpus: Corpus, assign, means):
    """Sum of similarities between every object and its assigned mean."""
    assign = np.asarray(assign)
    rows = corpus.row_ids()
    return float(np.sum(corpus.values * means[assign[rows], corpus.terms]))


def coefficient_of_variation(values):
    """Population standard deviation over mean."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise ValueError("coefficient of variation needs at least two samples")
    m = v.mean()
    if m == 0.0:
        raise ValueError("coefficient of variation undefined for zero mean")
    return float(v.std() / m)


# ---------------------------------------------------------------------------
# Normalised mutual information
# ---------------------------------------------------------------------------


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def nmi(a, b):
    """I(a; b) / sqrt(H(a) H(b)) with natural logarithms.

    Two single-cluster labelings score 1. A single-cluster labeling against a
    non-trivial one is undefined and raises.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("labelings differ in length")
    n = len(a)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    ka, kb = ai.max() + 1, bi.max() + 1
    joint = np.bincount(ai * kb + bi, minlength=ka * kb).reshape(ka, kb).astype(np.float64)
    ca = joint.sum(axis=1)
    cb = joint.sum(axis=0)
    ha = _entropy(ca, n)
    hb = _entropy(cb, n)
    if ha == 0.0 and hb == 0.0:
        return 1.0
    if ha == 0.0 or hb == 0.0:
        raise ValueError("NMI undefined when exactly one labeling has a single cluster")
    nz = joint > 0
    pij = joint[nz] / n
    outer = np.outer(ca, cb)[nz] / (n * n)
    mi = float(np.sum(pij * np.log(pij / outer)))
    return mi / math.sqrt(ha * hb)


def pairwise_nmi(labelings):
    """NMI of every unordered pair, in (i, j) lexicographic order."""
    out = []
    for i in range(len(labelings)):
        for j in range(i + 1, len(labelings)):
            out.append(nmi(labelings[i], labelings[j]))
    return np.asarray(out)


# ---------------------------------------------------------------------------
# Rank-frequency fits
# ---------------------------------------------------------------------------


@dataclass
class ZipfFit:
    alpha: float
    intercept: float
    lo: int
    hi: int
    degenerate: bool = False


def zipf_fit(freqs, lo=10, hi=10_000) -> ZipfFit:
    """Least-squares fit of log f = c - alpha log r over ranks [lo, hi].

    The window is clipped to the available ranks; zero frequencies are ignored.
    """
    f = np.sort(np.asarray(freqs, dtype=np.float64))[::-1]
    f = f[f > 0]
    if len(f) == 0:
        return ZipfFit(0.0, 0.0, 0, 0, degenerate=True)
    if np.all(f == f[0]):
        return ZipfFit(0.0, float(np.log10(f[0])), 1, len(f), degenerate=True)
    lo_c = max(1, min(lo, len(f)))
    hi_c = min(hi, len(f))
    if hi_c - lo_c < 1:
        lo_c, hi_c = 1, len(f)
    r = np.arange(lo_c, hi_c + 1, dtype=np.float64)
    y = f[lo_c - 1 : hi_c]
    slope, intercept = np.polyfit(np.log10(r), np.log10(y), 1)
    return ZipfFit(float(-slope), float(intercept), lo_c, hi_c)


def rank_frequency(freqs):
    """(rank, frequency) pairs sorted by descending frequency."""
    f = np.sort(np.asarray(freqs))[::-1]
    return np.arange(1, len(f) + 1), f


def df_mf_scatter(df, mf):
    """Mean of mf over all terms sharing each df value."""
    df = np.asarray(df)
    mf = np.asarray(mf, dtype=np.float64)
    keys, inv = np.unique(df, return_inverse=True)
    sums = np.bincount(inv, weights=mf)
    counts = np.bincount(inv)
    return keys, sums / counts


# ---------------------------------------------------------------------------
# Cumulative partial similarity
# ---------------------------------------------------------------------------


@dataclass
class CPSProfile:
    nr: np.ndarray  # normalised rank grid
    mean: np.ndarray
    std: np.ndarray
    n_objects: int
    excluded: np.ndarray  # objects with zero similarity to their mean


def cps_object(values, mean_values):
    """Cumulative share of the similarity over partials sorted descending.

    Returns an array of length nt + 1 starting at 0; the last entry is 1.
    """
    partial = np.sort(np.asarray(values) * np.asarray(mean_values))[::-1]
    c = np.concatenate(([0.0], np.cumsum(partial)))
    total = c[-1]
    if total <= 0.0:
        raise ValueError("object has zero similarity to its mean")
    return c / total


def cps_profile(corpus: Corpus, assign, means, step=0.01) -> CPSProfile:
    """Average and spread of the cumulative partial similarity over a grid of
    normalised ranks h / nt, with linear interpolation between ranks."""
    nbins = int(round(1.0 / step))
    nr = np.arange(nbins + 1) * step
    nr[-1] = 1.0
    curves = []
    excluded = []
    for i in range(corpus.n_docs):
        v = corpus.vector(i)
        mv = means[assign[i], v.terms]
        try:
            c = cps_object(v.values, mv)
        except ValueError:
            excluded.append(i)
            continue
        nt = len(v.terms)
        curves.append(np.interp(nr * nt, np.arange(nt + 1), c))
    if excluded:
        log.warning("%d object(s) with zero similarity excluded from the profile", len(excluded))
    if not curves:
        raise ValueError("no object has positive similarity to its mean")
    arr = np.asarray(curves)
    return CPSProfile(nr, arr.mean(axis=0), arr.std(axis=0), len(curves), np.asarray(excluded, dtype=np.int64))
