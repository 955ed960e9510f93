"""Upper-bound filters for the assignment step.

Three families share the gather / verify pattern: compute a cheap upper bound
on every centroid's similarity, keep the centroids whose bound exceeds the
current best, then compute their exact similarities.

* Region bound: exact Region-1 and Region-2 partials plus the object's L1
  mass left over for the remaining terms times ``v_th``. Needs no
  multiplication because the object carries a pre-scaled copy of its values.
* Threshold-algorithm bound: partial sums over descending-sorted lists cut at
  ``v_ta = rho_max / ||x||_1`` plus ``v_ta`` times the leftover L1 mass.
* Cauchy-Schwarz bound: exact Region-1 partial plus
  ``||x_high|| * ||mu_high||`` over the high-ID terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as kern
from ._parallel import run_chunks
from .corpus import Corpus
from .index import (
    MeanInvertedIndex,
    PartialMeanIndex,
    StructuralParams,
    build_inverted_index,
    build_partial_index,
)


@dataclass
class AssignOutput:
    assign: np.ndarray  # int64
    rho: np.ndarray  # similarity to the chosen centroid
    counters: np.ndarray  # (N, 6) per-object operation counts

    def totals(self):
        return self.counters.sum(axis=0)


def _alloc(n):
    return np.empty(n, np.int64), np.empty(n, np.float64), np.zeros((n, kern.N_COUNTERS), np.int64)


def _prep(corpus, a_in, rho_in, xstate):
    a_in = np.ascontiguousarray(a_in, dtype=np.int64)
    rho_in = np.ascontiguousarray(rho_in, dtype=np.float64)
    if xstate is None:
        xstate = np.zeros(corpus.n_docs, dtype=np.bool_)
    return a_in, rho_in, np.ascontiguousarray(xstate, dtype=np.bool_)


def _max_terms(corpus):
    return int(np.diff(corpus.indptr).max())


# ---------------------------------------------------------------------------
# Region bound
# ---------------------------------------------------------------------------


@dataclass
class RegionFilterIndex:
    inv: MeanInvertedIndex
    partial: PartialMeanIndex

    @property
    def params(self):
        return self.inv.params


def build_region_index(means, params: StructuralParams, moving=None) -> RegionFilterIndex:
    return RegionFilterIndex(
        inv=build_inverted_index(means, params, moving),
        partial=build_partial_index(means, params.t_th, params.v_th),
    )


def scaled_values(corpus: Corpus, v_th):
    """Object values pre-multiplied by v_th, computed once per parameter change."""
    return corpus.values * float(v_th)


def upper_bound_es(rho12, y):
    """Region bound: exact partial plus leftover scaled L1 mass. No multiplication."""
    return rho12 + y


@dataclass
class Gathered:
    z: np.ndarray
    rho1: np.ndarray  # exact Region-1 partial per centroid
    rho2: np.ndarray  # exact Region-2 (or sorted-prefix) partial
    y: np.ndarray  # leftover L1 mass (scaled by v_th for the region bound)
    bound: np.ndarray
    mult_region1: int
    mult_region2: int
    products: np.ndarray | None = None  # stored Region-2 products per (term position, centroid)


def gather_es(corpus: Corpus, i, index: RegionFilterIndex, rho_max, yvals=None, moving_only=False) -> Gathered:
    """Candidate set of object ``i`` under the region bound."""
    inv = index.inv
    K = inv.k
    if yvals is None:
        yvals = scaled_values(corpus, inv.params.v_th)
    p0, p1 = int(corpus.indptr[i]), int(corpus.indptr[i + 1])
    psplit = int(kern._split(corpus.terms, p0, p1, inv.params.t_th))
    rho1, rho2, y = np.zeros(K), np.zeros(K), np.zeros(K)
    P = np.zeros((max(p1 - psplit, 1), K))
    ids = inv.moving_ids
    n1, n2 = kern.es_gather(
        p0, psplit, p1, corpus.terms, corpus.values, yvals, inv.ptr, inv.cid, inv.val,
        inv.mf_high, inv.mf_moving, ids, bool(moving_only), rho1, rho2, y, P,
    )
    pool = ids if moving_only else np.arange(K)
    bound = np.full(K, -np.inf)
    bound[pool] = upper_bound_es(rho1[pool] + rho2[pool], y[pool])
    z = pool[bound[pool] > rho_max - kern.BOUND_GUARD].astype(np.int32)
    return Gathered(z, rho1, rho2, y, bound, int(n1), int(n2), P)


def complete_similarities(corpus: Corpus, i, gathered: Gathered, partial: PartialMeanIndex):
    """Exact similarities of the candidates (other entries hold partial sums) and
    the multiplication count of the completion."""
    p0, p1 = int(corpus.indptr[i]), int(corpus.indptr[i + 1])
    psplit = int(kern._split(corpus.terms, p0, p1, partial.t_th))
    exact = gathered.rho1.copy()
    z = gathered.z
    if partial.v_th is None:
        n3 = kern._verify_rows(corpus.terms, corpus.values, psplit, p1, partial.t_th, partial.rows, z, len(z), exact)
    else:
        n3 = kern.es_verify(corpus.terms, corpus.values, psplit, p1, partial.t_th, partial.rows, gathered.products, z, len(z), exact)
    return exact, int(n3)


def verify(corpus: Corpus, i, gathered: Gathered, partial: PartialMeanIndex, rho_max, a_prev):
    """Exact similarities for the candidates; returns (assignment, rho_max, multiplications)."""
    exact, n3 = complete_similarities(corpus, i, gathered, partial)
    best, rmax = a_prev, rho_max
    for j in gathered.z:
        if exact[j] > rmax:
            best, rmax = int(j), exact[j]
    return best, rmax, n3


def assign_es(
    corpus: Corpus, index: RegionFilterIndex, a_in, rho_in, xstate=None, use_moving=True, yvals=None, workers=1
) -> AssignOutput:
    inv = index.inv
    a_in, rho_in, xstate = _prep(corpus, a_in, rho_in, xstate)
    if yvals is None:
        yvals = scaled_values(corpus, inv.params.v_th)
    a_out, rho_out, cnt = _alloc(corpus.n_docs)
    ids = inv.moving_ids
    ntmax = _max_terms(corpus)

    def work(lo, hi):
        kern.es_chunk(
            lo, hi, corpus.indptr, corpus.terms, corpus.values, yvals, inv.ptr, inv.cid, inv.val,
            inv.mf_high, inv.mf_moving, ids, inv.k, inv.params.t_th, index.partial.rows, ntmax,
            bool(use_moving), xstate, a_in, rho_in, a_out, rho_out, cnt,
        )

    run_chunks(corpus.n_docs, workers, work)
    return AssignOutput(a_out, rho_out, cnt)


def es_bound_matrix(corpus: Corpus, index: RegionFilterIndex, rows=None, yvals=None):
    inv = index.inv
    if rows is None:
        rows = np.arange(corpus.n_docs)
    if yvals is None:
        yvals = scaled_values(corpus, inv.params.v_th)
    return kern.es_bound_rows(
        np.ascontiguousarray(rows, dtype=np.int64), corpus.indptr, corpus.terms, corpus.values, yvals,
        inv.ptr, inv.cid, inv.val, inv.mf_high, inv.mf_moving, inv.k, inv.params.t_th, _max_terms(corpus),
    )


# ---------------------------------------------------------------------------
# Threshold-algorithm bound
# ---------------------------------------------------------------------------


@dataclass
class ThresholdIndex:
    """Lists over all centroids and over moving centroids only.

    Terms ``s >= t_th`` are sorted by value descending; the dense rows hold
    every mean value for those terms.
    """

    ptr_all: np.ndarray
    cid_all: np.ndarray
    val_all: np.ndarray
    ptr_mov: np.ndarray
    cid_mov: np.ndarray
    val_mov: np.ndarray
    partial: PartialMeanIndex
    moving: np.ndarray
    k: int
    t_th: int

    @property
    def moving_ids(self):
        return np.flatnonzero(self.moving).astype(np.int32)


def build_threshold_index(means, t_th, moving=None) -> ThresholdIndex:
    means = np.asarray(means, dtype=np.float64)
    k = means.shape[0]
    if moving is None:
        moving = np.ones(k, dtype=bool)
    moving = np.ascontiguousarray(moving, dtype=np.bool_)
    meansT = np.ascontiguousarray(means.T)
    pa, ca, va = kern.build_sorted_index(meansT, int(t_th), np.ones(k, dtype=np.bool_))
    pm, cm, vm = kern.build_sorted_index(meansT, int(t_th), moving)
    return ThresholdIndex(pa, ca, va, pm, cm, vm, build_partial_index(means, t_th), moving, k, int(t_th))


def l1_norms(corpus: Corpus):
    return np.add.reduceat(corpus.values, corpus.indptr[:-1])


def gather_ta(corpus: Corpus, i, index: ThresholdIndex, rho_max, moving_only=False) -> Gathered:
    K = index.k
    p0, p1 = int(corpus.indptr[i]), int(corpus.indptr[i + 1])
    psplit = int(kern._split(corpus.terms, p0, p1, index.t_th))
    l1 = corpus.values[p0:p1].sum()
    v_ta = rho_max / l1
    rho1, rho2, y = np.zeros(K), np.zeros(K), np.zeros(K)
    P = np.zeros((max(p1 - psplit, 1), K))
    ids = index.moving_ids
    if moving_only:
        lists = (index.ptr_mov, index.cid_mov, index.val_mov)
    else:
        lists = (index.ptr_all, index.cid_all, index.val_all)
    n1, n2 = kern.ta_gather(p0, psplit, p1, corpus.terms, corpus.values, *lists, v_ta, rho1, rho2, y, P, ids, bool(moving_only))
    pool = ids if moving_only else np.arange(K)
    bound = np.full(K, -np.inf)
    bound[pool] = rho1[pool] + rho2[pool] + v_ta * y[pool]
    live = pool[(rho1[pool] + rho2[pool]) != 0.0]
    z = live[bound[live] > rho_max - kern.BOUND_GUARD].astype(np.int32)
    return Gathered(z, rho1, rho2, y, bound, int(n1), int(n2))


def assign_ta(corpus: Corpus, index: ThresholdIndex, a_in, rho_in, xstate=None, use_moving=True, workers=1) -> AssignOutput:
    a_in, rho_in, xstate = _prep(corpus, a_in, rho_in, xstate)
    a_out, rho_out, cnt = _alloc(corpus.n_docs)
    l1 = l1_norms(corpus)
    ids = index.moving_ids
    ntmax = _max_terms(corpus)

    def work(lo, hi):
        kern.ta_chunk(
            lo, hi, corpus.indptr, corpus.terms, corpus.values, l1,
            index.ptr_all, index.cid_all, index.val_all, index.ptr_mov, index.cid_mov, index.val_mov,
            ids, index.k, index.t_th, index.partial.rows, ntmax,
            bool(use_moving), xstate, a_in, rho_in, a_out, rho_out, cnt,
        )

    run_chunks(corpus.n_docs, workers, work)
    return AssignOutput(a_out, rho_out, cnt)


def ta_bound_matrix(corpus: Corpus, index: ThresholdIndex, rho_max, rows=None):
    if rows is None:
        rows = np.arange(corpus.n_docs)
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    rho_max = np.ascontiguousarray(rho_max, dtype=np.float64)
    return kern.ta_bound_rows(
        rows, corpus.indptr, corpus.terms, corpus.values, l1_norms(corpus), rho_max,
        index.ptr_all, index.cid_all, index.val_all, index.k, index.t_th, _max_terms(corpus),
    )


# ---------------------------------------------------------------------------
# Cauchy-Schwarz bound
# ---------------------------------------------------------------------------


@dataclass
class NormFilterIndex:
    """Moving-first lists over all terms plus squared values and dense rows."""

    inv: MeanInvertedIndex
    sq: np.ndarray
    partial: PartialMeanIndex
    t_th: int

    @property
    def k(self):
        return self.inv.k


def build_norm_index(means, t_th, moving=None) -> NormFilterIndex:
    means = np.asarray(means, dtype=np.float64)
    inv = build_inverted_index(means, StructuralParams(t_th=means.shape[1], v_th=1.0), moving)
    return NormFilterIndex(inv=inv, sq=inv.val * inv.val, partial=build_partial_index(means, t_th), t_th=int(t_th))


def high_norms(corpus: Corpus, t_th):
    return kern.partial_norms(corpus.indptr, corpus.terms, corpus.values, int(t_th))


def gather_cs(corpus: Corpus, i, index: NormFilterIndex, rho_max, moving_only=False) -> Gathered:
    inv = index.inv
    K = inv.k
    p0, p1 = int(corpus.indptr[i]), int(corpus.indptr[i + 1])
    psplit = int(kern._split(corpus.terms, p0, p1, index.t_th))
    rho1, musq = np.zeros(K), np.zeros(K)
    n1 = kern.cs_gather(p0, psplit, p1, corpus.terms, corpus.values, inv.ptr, inv.cid, inv.val, index.sq, inv.mf_moving, bool(moving_only), rho1, musq)
    xn = kern.partial_norms(np.array([p0, p1], dtype=np.int64), corpus.terms, corpus.values, index.t_th)[0]
    pool = inv.moving_ids if moving_only else np.arange(K)
    bound = np.full(K, -np.inf)
    bound[pool] = rho1[pool] + xn * np.sqrt(musq[pool])
    z = pool[bound[pool] > rho_max - kern.BOUND_GUARD].astype(np.int32)
    return Gathered(z, rho1, np.zeros(K), musq, bound, int(n1), 0)


def assign_cs(corpus: Corpus, index: NormFilterIndex, a_in, rho_in, xstate=None, use_moving=True, workers=1, xnorm=None) -> AssignOutput:
    inv = index.inv
    a_in, rho_in, xstate = _prep(corpus, a_in, rho_in, xstate)
    a_out, rho_out, cnt = _alloc(corpus.n_docs)
    if xnorm is None:
        xnorm = high_norms(corpus, index.t_th)
    ids = inv.moving_ids

    def work(lo, hi):
        kern.cs_chunk(
            lo, hi, corpus.indptr, corpus.terms, corpus.values, xnorm, inv.ptr, inv.cid, inv.val, index.sq,
            inv.mf_moving, ids, inv.k, index.t_th, index.partial.rows,
            bool(use_moving), xstate, a_in, rho_in, a_out, rho_out, cnt,
        )

    run_chunks(corpus.n_docs, workers, work)
    return AssignOutput(a_out, rho_out, cnt)


def cs_bound_matrix(corpus: Corpus, index: NormFilterIndex, rows=None):
    inv = index.inv
    if rows is None:
        rows = np.arange(corpus.n_docs)
    return kern.cs_bound_rows(
        np.ascontiguousarray(rows, dtype=np.int64), corpus.indptr, corpus.terms, corpus.values,
        high_norms(corpus, index.t_th), inv.ptr, inv.cid, inv.val, index.sq, inv.mf_moving, inv.k, index.t_th,
    )
