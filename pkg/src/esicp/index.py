"""Cluster means and the mean-inverted index.

Term IDs are 0-based canonical IDs. A threshold term ``t_th`` splits the
vocabulary: terms ``s < t_th`` form Region 1, and for ``s >= t_th`` an entry
belongs to Region 2 when its value is at least ``v_th`` and to Region 3
otherwise. ``t_th = 0`` puts every term in Regions 2 and 3; ``t_th = D`` puts
every term in Region 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels as kern
from .corpus import Corpus


@dataclass(frozen=True)
class StructuralParams:
    t_th: int
    v_th: float

    def validate(self, n_terms):
        if not 0 <= self.t_th <= n_terms:
            raise ValueError(f"t_th={self.t_th} outside [0, {n_terms}]")
        if not 0.0 < self.v_th <= 1.0:
            raise ValueError(f"v_th={self.v_th} outside (0, 1]")


@dataclass
class MeanSet:
    """Dense unit-length means (scaled by 1/v_th when v_th != 1)."""

    means: np.ndarray  # (K, D)
    sizes: np.ndarray  # members per cluster
    invariant: np.ndarray  # bool per cluster; mean unchanged from previous iteration

    @property
    def k(self):
        return self.means.shape[0]

    @property
    def n_terms(self):
        return self.means.shape[1]


def compute_means(corpus: Corpus, assign, prev_means, v_th=1.0, prev_assign=None) -> MeanSet:
    """Recompute means from ``assign``.

    Members are summed in ascending object order. An empty cluster keeps its
    previous mean and is flagged invariant. A cluster whose membership did not
    change between ``prev_assign`` and ``assign`` is also flagged invariant.
    """
    assign = np.ascontiguousarray(assign, dtype=np.int64)
    prev_means = np.ascontiguousarray(prev_means, dtype=np.float64)
    lam, cnt = kern.accumulate_means(corpus.indptr, corpus.terms, corpus.values, assign, prev_means, float(v_th))
    invariant = cnt == 0
    if prev_assign is not None:
        invariant |= ~membership_changed(assign, prev_assign, prev_means.shape[0])
    return MeanSet(means=lam, sizes=cnt, invariant=invariant)


def membership_changed(assign, prev_assign, k):
    moved = np.flatnonzero(np.asarray(assign) != np.asarray(prev_assign))
    changed = np.zeros(k, dtype=bool)
    changed[np.asarray(assign)[moved]] = True
    changed[np.asarray(prev_assign)[moved]] = True
    return changed


def assigned_similarities(corpus: Corpus, assign, means):
    return kern.assigned_similarities(
        corpus.indptr, corpus.terms, corpus.values, np.ascontiguousarray(assign, dtype=np.int64), means
    )


@dataclass
class MeanInvertedIndex:
    """Per-term centroid lists in the region layout.

    For term ``s`` the entries ``ptr[s]:ptr[s+1]`` are ordered
    ``[moving | invariant]`` when ``s < t_th`` and
    ``[moving, v>=v_th | invariant, v>=v_th | v<v_th]`` otherwise, each block in
    ascending centroid ID. ``mf_high[s]`` counts the entries with ``v >= v_th``
    (only meaningful for ``s >= t_th``) and ``mf_moving[s]`` the leading moving
    block.
    """

    ptr: np.ndarray
    cid: np.ndarray
    val: np.ndarray
    mf_high: np.ndarray
    mf_moving: np.ndarray
    params: StructuralParams
    k: int
    moving: np.ndarray  # bool per centroid

    @property
    def n_terms(self):
        return len(self.ptr) - 1

    @property
    def mf(self):
        return np.diff(self.ptr)

    @property
    def moving_ids(self):
        return np.flatnonzero(self.moving).astype(np.int32)

    def entries(self, s):
        a, b = self.ptr[s], self.ptr[s + 1]
        return self.cid[a:b], self.val[a:b]

    def column_sums(self):
        """Sum of all mean values per term."""
        return np.add.reduceat(np.append(self.val, 0.0), self.ptr[:-1]) * (self.mf > 0)

    def dump_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["term", "mf", "mf_high", "mf_moving", "region"])
            t_th = self.params.t_th
            for s in range(self.n_terms):
                w.writerow([s, int(self.mf[s]), int(self.mf_high[s]), int(self.mf_moving[s]), 1 if s < t_th else 23])


def build_inverted_index(means, params: StructuralParams | None = None, moving=None) -> MeanInvertedIndex:
    means = np.asarray(means, dtype=np.float64)
    k, d = means.shape
    if params is None:
        params = StructuralParams(t_th=d, v_th=1.0)
    if moving is None:
        moving = np.ones(k, dtype=bool)
    moving = np.ascontiguousarray(moving, dtype=np.bool_)
    meansT = np.ascontiguousarray(means.T)
    ptr, cid, val, mfH, mfM = kern.build_index(meansT, int(params.t_th), float(params.v_th), moving)
    return MeanInvertedIndex(ptr, cid, val, mfH, mfM, params, k, moving)


@dataclass
class PartialMeanIndex:
    """Dense rows ``rows[s - t_th, j]`` for the terms ``s >= t_th``.

    With ``v_th`` set the rows hold only Region-3 values (below ``v_th``, zero
    elsewhere); with ``v_th`` None they hold every mean value.
    """

    rows: np.ndarray
    t_th: int
    v_th: float | None = None


def build_partial_index(means, t_th, v_th=None) -> PartialMeanIndex:
    means = np.asarray(means, dtype=np.float64)
    rows = np.array(means[:, t_th:].T, order="C", copy=True)
    if v_th is not None:
        rows[rows >= v_th] = 0.0
    return PartialMeanIndex(rows=rows, t_th=int(t_th), v_th=None if v_th is None else float(v_th))


@dataclass
class ObjectInvertedIndex:
    """Per-term object lists for terms ``s >= s_lo`` (ascending object ID)."""

    ptr: np.ndarray  # length D + 1; empty ranges below s_lo
    oid: np.ndarray
    val: np.ndarray
    s_lo: int


def build_object_index(corpus: Corpus, s_lo=0) -> ObjectInvertedIndex:
    rows = corpus.row_ids()
    sel = corpus.terms >= s_lo
    t = corpus.terms[sel]
    order = np.argsort(t, kind="stable")
    ptr = np.zeros(corpus.n_terms + 1, dtype=np.int64)
    np.cumsum(np.bincount(t, minlength=corpus.n_terms), out=ptr[1:])
    return ObjectInvertedIndex(ptr=ptr, oid=rows[sel][order], val=corpus.values[sel][order], s_lo=int(s_lo))
