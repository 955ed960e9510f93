import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esicp import _kernels as kern
from esicp.cluster import assign_mivi
from esicp.filters import (
    assign_cs,
    assign_es,
    assign_ta,
    build_norm_index,
    build_region_index,
    build_threshold_index,
    complete_similarities,
    cs_bound_matrix,
    es_bound_matrix,
    gather_cs,
    gather_es,
    gather_ta,
    l1_norms,
    ta_bound_matrix,
    verify,
)
from esicp.index import StructuralParams, build_inverted_index

from conftest import corpus_from_dense, dense, make_corpus, random_means


def _state(corpus, means, rng):
    """Random previous assignment with its exact similarity under ``means``."""
    S = dense(corpus) @ means.T
    a = rng.integers(0, means.shape[0], corpus.n_docs)
    return S, a, S[np.arange(corpus.n_docs), a]


def _mivi(corpus, means, a, rho):
    return assign_mivi(corpus, build_inverted_index(means), a, rho)


# ---------------------------------------------------------------------------
# Region bound
# ---------------------------------------------------------------------------


class TestRegionBound:
    def test_no_high_terms_bound_is_exact(self):
        c = corpus_from_dense([[0.6, 0.8, 0.0, 0.0]])
        means = np.array([[0.8, 0.6, 0.0, 0.0], [0.0, 0.0, 0.6, 0.8]])
        idx = build_region_index(means, StructuralParams(t_th=2, v_th=0.5))
        g = gather_es(c, 0, idx, -1.0)
        assert g.y.tolist() == [0.0, 0.0]
        assert g.bound[0] == pytest.approx(0.96, abs=1e-15)
        assert g.bound[1] == 0.0

    def test_hand_evaluated_bound(self):
        c = corpus_from_dense([[0.0, 0.0, 1.0]])
        h = math.sqrt(0.5)
        means = np.array([[0.0, h, h]])
        # 1-based threshold term 3 is 0-based 2
        idx = build_region_index(means, StructuralParams(t_th=2, v_th=0.5))
        g = gather_es(c, 0, idx, -1.0)
        assert g.rho2[0] == h
        assert g.y[0] == 0.0
        assert g.bound[0] == pytest.approx(0.7071, abs=1e-4)
        assert g.bound[0] == h

    def test_all_invariant_keeps_assignment(self, small_corpus):
        rng = np.random.default_rng(0)
        means = random_means(rng, 6, small_corpus.n_terms)
        _, a, rho = _state(small_corpus, means, rng)
        idx = build_region_index(means, StructuralParams(60, 0.2), moving=np.zeros(6, bool))
        out = assign_es(small_corpus, idx, a, rho, np.ones(small_corpus.n_docs, bool))
        assert np.array_equal(out.assign, a)
        tot = out.totals()
        assert tot[kern.C_CAND] == 0 and tot[kern.C_R3] == 0

    def test_region2_empty_gives_l1_bound(self, small_corpus):
        rng = np.random.default_rng(1)
        means = random_means(rng, 5, small_corpus.n_terms, density=0.6)
        assert means.max() < 1.0
        idx = build_region_index(means, StructuralParams(0, 1.0))
        B = es_bound_matrix(small_corpus, idx)
        l1 = l1_norms(small_corpus)
        assert np.allclose(B, l1[:, None], atol=1e-12)

    def test_no_false_prune(self):
        rng = np.random.default_rng(2)
        c = make_corpus(200, 90, seed=2)
        means = random_means(rng, 8, c.n_terms)
        S, a, rho = _state(c, means, rng)
        idx = build_region_index(means, StructuralParams(50, 0.3))
        for i in range(c.n_docs):
            g = gather_es(c, i, idx, rho[i])
            top = int(np.argmax(S[i]))
            assert top == a[i] or top in g.z or S[i, top] <= rho[i] + 1e-12

    def test_verify_empty_and_single(self):
        c = corpus_from_dense([[0.6, 0.8]])
        means = np.array([[1.0, 0.0], [0.0, 1.0]])
        idx = build_region_index(means, StructuralParams(1, 0.9))
        g = gather_es(c, 0, idx, 2.0)
        assert len(g.z) == 0
        assert verify(c, 0, g, idx.partial, 2.0, 0) == (0, 2.0, 0)
        # every term in Region 1: bounds are exact, only centroid 1 beats 0.7
        idx = build_region_index(means, StructuralParams(2, 0.9))
        g = gather_es(c, 0, idx, 0.7)
        assert g.z.tolist() == [1]
        assert verify(c, 0, g, idx.partial, 0.7, 0) == (1, 0.8, 0)

    def test_completed_similarities_match_dense(self, small_corpus):
        rng = np.random.default_rng(3)
        means = random_means(rng, 7, small_corpus.n_terms)
        S = dense(small_corpus) @ means.T
        idx = build_region_index(means, StructuralParams(70, 0.15))
        for i in range(0, small_corpus.n_docs, 3):
            g = gather_es(small_corpus, i, idx, -1.0)
            exact, n3 = complete_similarities(small_corpus, i, g, idx.partial)
            assert np.max(np.abs(exact[g.z] - S[i, g.z])) <= 1e-10
            nth = int(np.count_nonzero(small_corpus.vector(i).terms >= 70))
            assert n3 == nth * len(g.z)


# ---------------------------------------------------------------------------
# Threshold-algorithm and Cauchy-Schwarz bounds
# ---------------------------------------------------------------------------


class TestThresholdBound:
    def test_max_rho_prunes_everything(self, small_corpus):
        rng = np.random.default_rng(4)
        means = random_means(rng, 5, small_corpus.n_terms)
        idx = build_threshold_index(means, 0)
        l1 = l1_norms(small_corpus)
        for i in range(10):
            g = gather_ta(small_corpus, i, idx, l1[i])
            assert np.all(g.rho2 == 0.0)
            assert len(g.z) == 0

    def test_single_term_bound_exact(self):
        c = corpus_from_dense([[0.0, 1.0]])
        means = np.array([[0.0, 1.0], [1.0, 0.0]])
        idx = build_threshold_index(means, 0)
        g = gather_ta(c, 0, idx, 0.5)
        assert g.rho2[0] == 1.0
        assert g.y[0] == 0.0
        assert g.bound[0] == 1.0


class TestNormBound:
    def test_single_shared_term_is_tight(self):
        c = corpus_from_dense([[0.6, 0.0, 0.8, 0.0]])
        means = np.array([[0.8, 0.6, 0.0, 0.0], [0.0, 0.6, 0.8, 0.0]])
        idx = build_norm_index(means, 2)
        g = gather_cs(c, 0, idx, -1.0)
        S = np.array([[0.6, 0.0, 0.8, 0.0]]) @ means.T
        assert g.bound[0] == pytest.approx(S[0, 0], abs=1e-15)  # no high-ID overlap
        assert g.bound[1] == pytest.approx(S[0, 1], abs=1e-15)  # one shared high term

    def test_no_overlap_gives_partial(self):
        c = corpus_from_dense([[0.6, 0.8, 0.0]])
        means = np.array([[1.0, 0.0, 0.0]])
        idx = build_norm_index(means, 1)
        g = gather_cs(c, 0, idx, -1.0)
        assert g.bound[0] == g.rho1[0] == 0.6


# ---------------------------------------------------------------------------
# Bound soundness and assignment equality against dense oracles
# ---------------------------------------------------------------------------


def test_bound_matrices_sound():
    rng = np.random.default_rng(6)
    c = make_corpus(400, 200, seed=6)
    means = random_means(rng, 12, c.n_terms)
    S, a, rho = _state(c, means, rng)
    for t_th, v_th in ((0, 0.05), (100, 0.2), (170, 0.6), (c.n_terms, 1.0)):
        B = es_bound_matrix(c, build_region_index(means, StructuralParams(t_th, v_th)))
        assert np.all(B >= S - 1e-12)
        T = ta_bound_matrix(c, build_threshold_index(means, t_th), rho)
        assert np.all(T >= S - 1e-12)
        C = cs_bound_matrix(c, build_norm_index(means, t_th))
        assert np.all(C >= S - 1e-12)


def test_candidate_counts_match_recount():
    rng = np.random.default_rng(7)
    c = make_corpus(150, 80, seed=7)
    means = random_means(rng, 6, c.n_terms)
    _, a, rho = _state(c, means, rng)
    idx = build_region_index(means, StructuralParams(40, 0.25))
    out = assign_es(c, idx, a, rho, use_moving=False)
    recount = [len(gather_es(c, i, idx, rho[i]).z) for i in range(c.n_docs)]
    assert out.counters[:, kern.C_CAND].tolist() == recount
    assert np.all(out.counters[:, kern.C_BOUND] == 0)


@pytest.mark.parametrize("workers", [2, 4])
def test_counters_independent_of_workers(workers):
    rng = np.random.default_rng(8)
    c = make_corpus(300, 150, seed=8)
    means = random_means(rng, 9, c.n_terms)
    _, a, rho = _state(c, means, rng)
    idx = build_region_index(means, StructuralParams(90, 0.2))
    one = assign_es(c, idx, a, rho, use_moving=False, workers=1)
    many = assign_es(c, idx, a, rho, use_moving=False, workers=workers)
    assert np.array_equal(one.assign, many.assign)
    assert np.array_equal(one.rho, many.rho)
    assert np.array_equal(one.counters, many.counters)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(0, 2**31 - 1),
    st.integers(1, 12),
    st.floats(0.0, 1.0),
    st.floats(0.01, 1.0),
)
def test_filters_match_mivi(seed, k, tfrac, v_th):
    rng = np.random.default_rng(seed)
    c = make_corpus(60, 40, seed=seed % 1000, doc_len=12)
    means = random_means(rng, k, c.n_terms, density=float(rng.uniform(0.1, 0.7)))
    _, a, rho = _state(c, means, rng)
    ref = _mivi(c, means, a, rho)
    t_th = int(round(tfrac * c.n_terms))
    es = assign_es(c, build_region_index(means, StructuralParams(t_th, v_th)), a, rho, use_moving=False)
    ta = assign_ta(c, build_threshold_index(means, t_th), a, rho, use_moving=False)
    cs = assign_cs(c, build_norm_index(means, t_th), a, rho, use_moving=False)
    for out in (es, ta, cs):
        assert np.array_equal(out.assign, ref.assign)
        assert np.array_equal(out.rho, ref.rho)
    # MIVI itself against the dense oracle with the strict-improvement rule
    S = dense(c) @ means.T
    best = S.max(axis=1)
    chosen = S[np.arange(c.n_docs), ref.assign]
    assert np.all(chosen >= best - 1e-12)
    assert np.all((ref.assign == a) | (chosen > rho - 1e-12))
