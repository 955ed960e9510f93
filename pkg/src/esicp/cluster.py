"""Spherical K-means driver and the two exhaustive baselines.

Every algorithm here produces the same assignment sequence as the plain
mean-inverted-index baseline from the same seeds; they differ only in how many
similarity multiplications they spend. Iteration 1 always runs the baseline.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kern
from ._parallel import run_chunks
from .corpus import Corpus
from .estimator import EstimateResult, default_grid, est_params
from .filters import (
    AssignOutput,
    assign_cs,
    assign_es,
    assign_ta,
    build_norm_index,
    build_region_index,
    build_threshold_index,
    high_norms,
    scaled_values,
)
from .index import (
    MeanInvertedIndex,
    MeanSet,
    ObjectInvertedIndex,
    StructuralParams,
    assigned_similarities,
    build_inverted_index,
    build_object_index,
    compute_means,
)

log = logging.getLogger(__name__)

ALGORITHMS = ("mivi", "divi", "icp", "es-icp", "ta-icp", "cs-icp", "es", "thv", "tht")
REGION_FAMILY = ("es-icp", "es", "thv", "tht")
USES_MOVING = ("icp", "es-icp", "ta-icp", "cs-icp")


class ConfigError(ValueError):
    pass


class InvariantViolation(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


def _alloc(n):
    return np.empty(n, np.int64), np.empty(n, np.float64), np.zeros((n, kern.N_COUNTERS), np.int64)


def assign_mivi(corpus: Corpus, index: MeanInvertedIndex, a_in, rho_in, workers=1) -> AssignOutput:
    """Term-at-a-time accumulation over every centroid list, then an argmax
    with strict '>' so the incumbent keeps ties."""
    a_in = np.ascontiguousarray(a_in, dtype=np.int64)
    rho_in = np.ascontiguousarray(rho_in, dtype=np.float64)
    a_out, rho_out, cnt = _alloc(corpus.n_docs)

    def work(lo, hi):
        kern.mivi_chunk(lo, hi, corpus.indptr, corpus.terms, corpus.values, index.ptr, index.cid, index.val,
                        index.k, a_in, rho_in, a_out, rho_out, cnt)

    run_chunks(corpus.n_docs, workers, work)
    return AssignOutput(a_out, rho_out, cnt)


def assign_icp(corpus: Corpus, index: MeanInvertedIndex, a_in, rho_in, xstate, workers=1) -> AssignOutput:
    """Baseline restricted to moving centroids for objects whose assigned
    similarity did not drop. ``index`` must have moving-first lists on every term."""
    a_in = np.ascontiguousarray(a_in, dtype=np.int64)
    rho_in = np.ascontiguousarray(rho_in, dtype=np.float64)
    xstate = np.ascontiguousarray(xstate, dtype=np.bool_)
    a_out, rho_out, cnt = _alloc(corpus.n_docs)
    ids = index.moving_ids

    def work(lo, hi):
        kern.icp_chunk(lo, hi, corpus.indptr, corpus.terms, corpus.values, index.ptr, index.cid, index.val,
                       index.mf_moving, ids, index.k, xstate, a_in, rho_in, a_out, rho_out, cnt)

    run_chunks(corpus.n_docs, workers, work)
    return AssignOutput(a_out, rho_out, cnt)


def assign_divi(corpus: Corpus, means, a_in, rho_in, obj_index: ObjectInvertedIndex | None = None, workers=1) -> AssignOutput:
    """Mean-at-a-time accumulation over an object-inverted index."""
    if obj_index is None:
        obj_index = build_object_index(corpus)
    means = np.asarray(means)
    K = means.shape[0]
    a_in = np.ascontiguousarray(a_in, dtype=np.int64)
    rho_in = np.ascontiguousarray(rho_in, dtype=np.float64)
    rows, cols = np.nonzero(means)
    mptr = np.zeros(K + 1, np.int64)
    np.cumsum(np.bincount(rows, minlength=K), out=mptr[1:])
    mterms = cols.astype(np.int64)
    mvals = means[rows, cols]
    S = np.zeros((K, corpus.n_docs))
    counts = run_chunks(K, workers, lambda lo, hi: kern.divi_sims(lo, hi, mptr, mterms, mvals, obj_index.ptr,
                                                                   obj_index.oid, obj_index.val, S))
    a_out, rho_out, cnt = _alloc(corpus.n_docs)
    run_chunks(corpus.n_docs, workers, lambda lo, hi: kern.divi_select(lo, hi, S, a_in, rho_in, a_out, rho_out))
    # per-object attribution of the mean-major work: sum_p mf_{t(i,p)}
    mf = np.bincount(mterms, minlength=corpus.n_terms)
    cnt[:, kern.C_R1] = np.add.reduceat(mf[corpus.terms], corpus.indptr[:-1])
    cnt[:, kern.C_CAND] = K
    if int(cnt[:, kern.C_R1].sum()) != sum(counts):
        raise InvariantViolation("object-inverted multiplication count does not match its attribution")
    return AssignOutput(a_out, rho_out, cnt)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    k: int
    seed: int = 0
    algorithm: str = "es-icp"
    max_iters: int = 100
    # 'estimate', 'fixed', or None for the algorithm's default
    param_policy: str | None = None
    t_th: int | None = None
    v_th: float | None = None
    tth_frac: float | None = None
    vth_grid: tuple | None = None  # explicit value candidates for estimation
    smin_frac: float = 0.85
    workers: int = 1
    estimate_iters: tuple = (1, 2)

    def resolved_policy(self):
        if self.param_policy is not None:
            return self.param_policy
        if self.algorithm in REGION_FAMILY:
            return "fixed" if (self.t_th is not None or self.tth_frac is not None) and self.v_th is not None else "estimate"
        if self.algorithm in ("ta-icp", "cs-icp"):
            return "fixed"
        return "none"


@dataclass
class IterationRecord:
    iteration: int
    mult_region1: int
    mult_region2: int
    mult_region3: int
    mult_bound: int
    sqrt: int
    candidates: int
    changes: int
    n_moving: int
    objective: float
    t_th: int | None
    v_th: float | None
    assign_seconds: float
    update_seconds: float

    @property
    def mult(self):
        return self.mult_region1 + self.mult_region2 + self.mult_region3 + self.mult_bound

    def cpr(self, n, k):
        return self.candidates / (n * k)


@dataclass
class ClusterState:
    """Snapshot handed to an observer after every update step."""

    iteration: int
    means: np.ndarray
    assign: np.ndarray
    rho_assigned: np.ndarray  # similarity to own centroid under the new means
    rho_assigned_prev: np.ndarray  # the same under the previous means
    moving: np.ndarray  # centroids whose mean changed in this update
    params: StructuralParams | None


@dataclass
class RunResult:
    config: RunConfig
    seeds: np.ndarray
    assign: np.ndarray
    means: MeanSet
    history: list = field(default_factory=list)  # assignment after each iteration
    iterations: list = field(default_factory=list)
    estimates: list = field(default_factory=list)  # (iteration, EstimateResult)
    converged: bool = False
    params: StructuralParams | None = None

    @property
    def total_mult(self):
        return sum(r.mult for r in self.iterations)

    @property
    def objective(self):
        return self.iterations[-1].objective if self.iterations else float("nan")


def seed_initial(corpus: Corpus, k, seed):
    """K distinct objects drawn uniformly; returns (object IDs, dense means)."""
    if not 1 <= k <= corpus.n_docs:
        raise ConfigError(f"K={k} must lie in [1, N={corpus.n_docs}]")
    rng = np.random.default_rng(seed)
    ids = rng.choice(corpus.n_docs, size=k, replace=False)
    means = np.zeros((k, corpus.n_terms))
    for j, i in enumerate(ids):
        v = corpus.vector(i)
        means[j, v.terms] = v.values
    return ids.astype(np.int64), means


def tth_from_frac(frac, n_terms):
    return int(min(max(math.ceil(frac * n_terms) - 1, 0), n_terms))


def _initial_params(cfg: RunConfig, d):
    algo = cfg.algorithm
    t_th = cfg.t_th
    if t_th is None and cfg.tth_frac is not None:
        t_th = tth_from_frac(cfg.tth_frac, d)
    if algo == "thv":
        t_th = 0
    if algo in ("ta-icp", "cs-icp") and t_th is None:
        t_th = tth_from_frac(0.9, d)
    v_th = 1.0 if algo == "tht" else cfg.v_th
    if t_th is None:
        return None
    return StructuralParams(t_th=int(t_th), v_th=float(v_th) if v_th is not None else 1.0)


def _grid_for(cfg: RunConfig, index: MeanInvertedIndex):
    grid = default_grid(index, smin_frac=cfg.smin_frac)
    if cfg.vth_grid is not None:
        grid.v_candidates = np.asarray(cfg.vth_grid, dtype=np.float64)
    if cfg.algorithm == "thv":
        grid.s_min, grid.s_max = 0, 0
    elif cfg.algorithm == "tht":
        grid.v_candidates = np.array([1.0])
    return grid


def validate_config(cfg: RunConfig, corpus: Corpus):
    if cfg.algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {cfg.algorithm!r}; choose from {', '.join(ALGORITHMS)}")
    if not 1 <= cfg.k <= corpus.n_docs:
        raise ConfigError(f"K={cfg.k} must lie in [1, N={corpus.n_docs}]")
    if cfg.max_iters < 1:
        raise ConfigError("max_iters must be positive")
    if cfg.workers < 1:
        raise ConfigError("workers must be positive")
    policy = cfg.resolved_policy()
    if policy not in ("estimate", "fixed", "none"):
        raise ConfigError(f"unknown parameter policy {policy!r}")
    if policy == "fixed" and cfg.algorithm in REGION_FAMILY + ("ta-icp", "cs-icp"):
        p = _initial_params(cfg, corpus.n_terms)
        if p is None:
            raise ConfigError("fixed parameters need t_th (or a fraction) and v_th")
        if cfg.algorithm in REGION_FAMILY and cfg.algorithm != "tht" and cfg.v_th is None:
            raise ConfigError("fixed parameters need v_th")
        try:
            p.validate(corpus.n_terms)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if cfg.vth_grid is not None:
        g = np.asarray(cfg.vth_grid, dtype=np.float64)
        if g.size == 0 or np.any(g <= 0) or np.any(g > 1):
            raise ConfigError("value-threshold grid must be non-empty within (0, 1]")
    if not 0.0 <= cfg.smin_frac <= 1.0:
        raise ConfigError("smin_frac must lie in [0, 1]")


def run(corpus: Corpus, cfg: RunConfig, observer=None) -> RunResult:
    validate_config(cfg, corpus)
    algo = cfg.algorithm
    policy = cfg.resolved_policy()
    N, D, K = corpus.n_docs, corpus.n_terms, cfg.k

    seeds, means = seed_initial(corpus, K, cfg.seed)
    params = _initial_params(cfg, D) if policy == "fixed" else None
    a = np.full(N, -1, np.int64)
    rho_in = np.full(N, -1.0)
    xstate = np.zeros(N, np.bool_)
    moving = np.ones(K, np.bool_)
    obj_index_full = build_object_index(corpus) if algo == "divi" else None
    obj_index_est = None
    yvals = None
    yvals_for = None
    xnorm = None
    xnorm_for = None

    result = RunResult(config=cfg, seeds=seeds, assign=a, means=None, params=params)
    mset = None
    last_empty = 0
    for r in range(1, cfg.max_iters + 1):
        t0 = time.perf_counter()
        used = params if (r > 1 and algo not in ("mivi", "divi", "icp")) else None
        if r == 2:
            moving = np.ones(K, np.bool_)
        if r == 1 or algo == "mivi":
            out = assign_mivi(corpus, build_inverted_index(means), a, rho_in, cfg.workers)
        elif algo == "divi":
            out = assign_divi(corpus, means, a, rho_in, obj_index_full, cfg.workers)
        elif algo == "icp":
            out = assign_icp(corpus, build_inverted_index(means, None, moving), a, rho_in, xstate, cfg.workers)
        elif algo in REGION_FAMILY:
            if yvals_for != params.v_th:
                yvals, yvals_for = scaled_values(corpus, params.v_th), params.v_th
            index = build_region_index(means, params, moving)
            out = assign_es(corpus, index, a, rho_in, xstate, algo == "es-icp", yvals, cfg.workers)
        elif algo == "ta-icp":
            index = build_threshold_index(means, params.t_th, moving)
            out = assign_ta(corpus, index, a, rho_in, xstate, True, cfg.workers)
        elif algo == "cs-icp":
            if xnorm_for != params.t_th:
                xnorm, xnorm_for = high_norms(corpus, params.t_th), params.t_th
            index = build_norm_index(means, params.t_th, moving)
            out = assign_cs(corpus, index, a, rho_in, xstate, True, cfg.workers, xnorm)
        else:  # pragma: no cover
            raise ConfigError(algo)
        t1 = time.perf_counter()

        changes = int(np.count_nonzero(out.assign != a))
        prev = a
        a = out.assign
        rho_final = out.rho
        mset = compute_means(corpus, a, means, prev_assign=prev if r > 1 else None)
        n_empty = int(np.count_nonzero(mset.sizes == 0))
        if n_empty > last_empty:
            log.warning("iteration %d: %d empty cluster(s) keep their previous mean", r, n_empty)
        last_empty = n_empty
        rho_a = assigned_similarities(corpus, a, mset.means)
        moving_next = ~mset.invariant
        xstate = rho_a >= rho_final

        if policy == "estimate" and r in cfg.estimate_iters and algo not in ("mivi", "divi", "icp"):
            plain = build_inverted_index(mset.means)
            grid = _grid_for(cfg, plain)
            if obj_index_est is None or obj_index_est.s_lo > grid.s_min:
                obj_index_est = build_object_index(corpus, grid.s_min)
            est: EstimateResult = est_params(corpus, plain, rho_a, grid, obj_index_est, cfg.workers)
            params = est.params
            if algo in ("ta-icp", "cs-icp"):
                params = StructuralParams(t_th=params.t_th, v_th=1.0)
            result.estimates.append((r, est))
            log.info("iteration %d: estimated t_th=%d v_th=%.6g", r, params.t_th, params.v_th)
        t2 = time.perf_counter()

        tot = out.totals()
        result.iterations.append(
            IterationRecord(
                iteration=r,
                mult_region1=int(tot[kern.C_R1]),
                mult_region2=int(tot[kern.C_R2]),
                mult_region3=int(tot[kern.C_R3]),
                mult_bound=int(tot[kern.C_BOUND]),
                sqrt=int(tot[kern.C_SQRT]),
                candidates=int(tot[kern.C_CAND]),
                changes=changes,
                n_moving=int(moving.sum()),
                objective=float(rho_a.sum()),
                t_th=None if used is None else used.t_th,
                v_th=None if used is None else used.v_th,
                assign_seconds=t1 - t0,
                update_seconds=t2 - t1,
            )
        )
        result.history.append(a.copy())
        if observer is not None:
            observer(ClusterState(r, mset.means, a, rho_a, rho_final, moving_next, params))
        means = mset.means
        rho_in = rho_a
        moving = moving_next
        if changes == 0:
            result.converged = True
            break

    result.assign = a
    result.means = mset
    result.params = params
    return result
