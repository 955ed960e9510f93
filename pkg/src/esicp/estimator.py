"""Choice of the structural parameters (t_th, v_th) by minimising an
approximate multiplication count.

For a candidate pair (s', v_h) the estimate is

    J = sum_{s < s'} df_s mf_s + sum_{s >= s'} df_s mfH_s(v_h)
        + sum_i ntH_i * K * P_i

where ntH_i counts object i's terms with ID >= s' and P_i is the modelled
probability that a centroid survives the region bound. P_i grows with the gap
between the bound and the average similarity, expressed relative to the gap
between the assigned similarity and the average similarity:

    P(x) = (1/K) (K/e)^x,   x = (rho_ub_bar - rho_bar) / (rho_a - rho_bar),

clamped to [min(1/K, 1/e), 1]. Objects with rho_a <= rho_bar are treated as
unfilterable (P = 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as kern
from ._parallel import run_chunks
from .corpus import Corpus
from .index import MeanInvertedIndex, ObjectInvertedIndex, StructuralParams, build_object_index


class EstimatorError(ValueError):
    pass


def prob_pass(delta_rho_bar, rho_assigned, rho_bar, K):
    """Modelled probability that a centroid survives the region bound.

    Equals 1/K when the bound adds nothing over the average similarity and 1/e
    when it reaches the assigned similarity.
    """
    gap = rho_assigned - rho_bar
    if gap <= 0.0:
        raise EstimatorError("assigned similarity must exceed the average similarity")
    return float(kern.pass_probability(delta_rho_bar / gap, K))


def mean_column_sums(index: MeanInvertedIndex):
    """V_s: sum of all mean values at each term."""
    return index.column_sums()


def avg_similarity(terms, values, column_sums, K):
    """Average similarity of one object to all K centroids."""
    return float(np.dot(values, column_sums[terms]) / K)


@dataclass
class EstimatorGrid:
    """Candidate value thresholds and the range of candidate threshold terms."""

    v_candidates: np.ndarray
    s_min: int
    s_max: int | None = None  # inclusive upper bound on s'; None means D - 1

    def validate(self, n_terms):
        v = np.asarray(self.v_candidates, dtype=np.float64)
        if v.size == 0:
            raise EstimatorError("empty value-threshold grid")
        if np.any(np.diff(v) <= 0) or v[0] <= 0.0 or v[-1] > 1.0:
            raise EstimatorError("value thresholds must be strictly increasing within (0, 1]")
        if not 0 <= self.s_min <= n_terms - 1:
            raise EstimatorError(f"s_min={self.s_min} outside [0, {n_terms - 1}]")
        if self.s_max is not None and self.s_max < self.s_min:
            raise EstimatorError("s_max below s_min")

    def term_range(self, n_terms):
        hi = n_terms - 1 if self.s_max is None else min(self.s_max, n_terms - 1)
        return self.s_min, hi


def default_grid(index: MeanInvertedIndex, smin_frac=0.85, n_values=41, lo_pct=50.0, hi_pct=99.9) -> EstimatorGrid:
    """41 value candidates spanning the middle-to-top percentiles of mean values."""
    vals = index.val
    lo, hi = np.percentile(vals, [lo_pct, hi_pct]) if len(vals) else (1.0, 1.0)
    v = np.unique(np.clip(np.linspace(lo, hi, n_values), np.finfo(float).tiny, 1.0))
    d = index.n_terms
    s_min = min(max(math.ceil(smin_frac * d) - 1, 0), d - 1)
    return EstimatorGrid(v_candidates=v, s_min=s_min)


def average_similarities(corpus: Corpus, column_sums, K):
    """rho_bar_i: mean similarity of object i to all K centroids."""
    contrib = corpus.values * column_sums[corpus.terms]
    return np.add.reduceat(contrib, corpus.indptr[:-1]) / K


@dataclass
class CostBreakdown:
    phi1: float  # Region-1 multiplications
    phi2: float  # Region-2 multiplications
    phi3: float  # expected verification multiplications
    total: float


@dataclass
class EstimateResult:
    params: StructuralParams
    objective: float
    grid: EstimatorGrid
    J: np.ndarray  # (len(v_candidates), s_max - s_min + 1); J[h, s' - s_min]


def _full_cost(index, df):
    return int(np.sum(df * index.mf))


def est_params(
    corpus: Corpus,
    index: MeanInvertedIndex,
    rho_assigned,
    grid: EstimatorGrid | None = None,
    obj_index: ObjectInvertedIndex | None = None,
    workers=1,
) -> EstimateResult:
    """Grid search over (s', v_h) using the incremental sweep over s'.

    Sweeps for different v_h are independent and may run on separate workers.
    Ties go to the smaller value threshold, then to the larger s'.
    """
    if grid is None:
        grid = default_grid(index)
    K = index.k
    D = index.n_terms
    grid.validate(D)
    s_lo, s_hi = grid.term_range(D)
    if obj_index is None or obj_index.s_lo > s_lo:
        obj_index = build_object_index(corpus, s_lo)
    rho_a = np.ascontiguousarray(rho_assigned, dtype=np.float64)
    rho_bar = average_similarities(corpus, index.column_sums(), K)
    phi_full = _full_cost(index, corpus.df)
    vs = np.asarray(grid.v_candidates, dtype=np.float64)
    J = np.empty((len(vs), s_hi - s_lo + 1))

    def sweep(lo, hi):
        buf = np.empty(D - s_lo)
        for h in range(lo, hi):
            kern.estimate_sweep(
                float(vs[h]), K, s_lo, index.ptr, index.val, corpus.df,
                obj_index.ptr, obj_index.oid, obj_index.val, rho_a, rho_bar, phi_full, buf,
            )
            J[h] = buf[: s_hi - s_lo + 1]

    run_chunks(len(vs), workers, sweep)
    best = None
    for h in range(len(vs)):
        for c in range(J.shape[1] - 1, -1, -1):
            if best is None or J[h, c] < J[best]:
                best = (h, c)
    h, c = best
    return EstimateResult(
        params=StructuralParams(t_th=s_lo + c, v_th=float(vs[h])),
        objective=float(J[h, c]),
        grid=grid,
        J=J,
    )


def objective(corpus: Corpus, index: MeanInvertedIndex, rho_assigned, s_prime, v_h) -> CostBreakdown:
    """Direct evaluation of the estimate at one grid point (no recurrences)."""
    K = index.k
    D = index.n_terms
    mf = index.mf
    term_of = np.repeat(np.arange(D), mf)
    high = index.val >= v_h
    mfH = np.bincount(term_of[high], minlength=D)
    sumL = np.bincount(term_of[~high], weights=v_h - index.val[~high], minlength=D)
    dvbar = (sumL + (K - mf) * v_h) / K

    df = corpus.df
    s = np.arange(D)
    phi1 = float(np.sum((df * mf)[s < s_prime]))
    phi2 = float(np.sum((df * mfH)[s >= s_prime]))

    in_high = corpus.terms >= s_prime
    rows = corpus.row_ids()
    ntH = np.bincount(rows[in_high], minlength=corpus.n_docs)
    E = np.bincount(rows[in_high], weights=corpus.values[in_high] * dvbar[corpus.terms[in_high]], minlength=corpus.n_docs)
    rho_bar = average_similarities(corpus, index.column_sums(), K)
    gap = np.asarray(rho_assigned) - rho_bar
    ok = gap > 0.0
    x = np.where(ok, E / np.where(ok, gap, 1.0), 0.0)
    with np.errstate(over="ignore"):
        p = np.exp(x * (math.log(K) - 1.0)) / K
    p = np.where(x == 0.0, 1.0 / K, np.where(x == 1.0, math.exp(-1.0), p))
    p = np.clip(p, min(1.0 / K, math.exp(-1.0)), 1.0)
    p = np.where(ok, p, 1.0)
    phi3 = float(np.sum(ntH * K * p))
    return CostBreakdown(phi1, phi2, phi3, phi1 + phi2 + phi3)
