import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esicp.index import (
    StructuralParams,
    assigned_similarities,
    build_inverted_index,
    build_object_index,
    build_partial_index,
    compute_means,
    membership_changed,
)

from conftest import corpus_from_dense, dense, random_means


class TestComputeMeans:
    def test_two_orthogonal_members(self):
        c = corpus_from_dense([[1.0, 0.0], [0.0, 1.0]])
        ms = compute_means(c, np.array([0, 0]), np.zeros((1, 2)))
        assert np.allclose(ms.means[0], [1 / math.sqrt(2)] * 2, atol=1e-15)
        assert ms.sizes.tolist() == [2]

    def test_scaled_single_member(self):
        c = corpus_from_dense([[1.0, 0.0]])
        ms = compute_means(c, np.array([0]), np.zeros((1, 2)), v_th=0.5)
        assert ms.means[0].tolist() == [2.0, 0.0]

    def test_random_cluster_matches_dense(self):
        rng = np.random.default_rng(4)
        X = random_means(rng, 20, 40)
        c = corpus_from_dense(X)
        ms = compute_means(c, np.zeros(20, np.int64), np.zeros((1, 40)))
        m = X.sum(axis=0) / 20
        m /= np.linalg.norm(m)
        assert np.max(np.abs(ms.means[0] - m)) <= 1e-12

    def test_empty_cluster_keeps_previous(self):
        c = corpus_from_dense([[1.0, 0.0], [0.6, 0.8]])
        prev = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]])
        ms = compute_means(c, np.array([0, 2]), prev, prev_assign=np.array([0, 1]))
        assert ms.sizes.tolist() == [1, 0, 1]
        assert ms.means[1].tolist() == [0.0, 1.0]
        # cluster 0 kept its member, 1 is empty, 2 gained a member
        assert ms.invariant.tolist() == [True, True, False]

    def test_membership_changed(self):
        ch = membership_changed(np.array([0, 1, 1, 3]), np.array([0, 1, 2, 3]), 4)
        assert ch.tolist() == [False, True, True, False]


class TestInvertedIndex:
    def test_two_centroid_classification(self):
        means = np.array([[0.6, 0.8], [math.sqrt(1 - 0.09), 0.3]])
        inv = build_inverted_index(means, StructuralParams(t_th=1, v_th=0.5), moving=np.array([False, False]))
        cid, val = inv.entries(1)
        assert cid.tolist() == [0, 1]
        assert inv.mf_high[1] == 1
        assert inv.mf_moving[1] == 0
        part = build_partial_index(means, 1, 0.5)
        assert part.rows[0, 0] == 0.0
        assert part.rows[0, 1] == 0.3

    def test_all_moving_blocks(self):
        rng = np.random.default_rng(0)
        means = random_means(rng, 10, 25)
        inv = build_inverted_index(means, StructuralParams(t_th=12, v_th=0.3))
        s = np.arange(25)
        assert np.array_equal(inv.mf_moving[s < 12], inv.mf[s < 12])
        assert np.array_equal(inv.mf_moving[s >= 12], inv.mf_high[s >= 12])

    def test_default_params_all_region1(self):
        rng = np.random.default_rng(1)
        means = random_means(rng, 5, 9)
        inv = build_inverted_index(means)
        assert inv.params.t_th == 9
        for s in range(9):
            cid, val = inv.entries(s)
            assert cid.tolist() == np.flatnonzero(means[:, s]).tolist()
            assert np.array_equal(val, means[cid, s])

    def test_column_sums(self):
        means = np.zeros((2, 3))
        means[0, 1], means[1, 1] = 0.3, 0.7
        means[0, 0] = means[1, 0] = 1.0
        inv = build_inverted_index(means)
        v = inv.column_sums()
        assert v[2] == 0.0
        assert v[1] == pytest.approx(1.0, abs=1e-15)

    def test_dump_csv(self, tmp_path):
        rng = np.random.default_rng(2)
        inv = build_inverted_index(random_means(rng, 4, 6), StructuralParams(3, 0.5))
        p = tmp_path / "idx.csv"
        inv.dump_csv(p)
        lines = p.read_text().splitlines()
        assert lines[0] == "term,mf,mf_high,mf_moving,region"
        assert len(lines) == 7


def _check_layout(means, inv, part, t_th, v_th, moving):
    k, d = means.shape
    rebuilt = np.zeros_like(means)
    for s in range(d):
        cid, val = inv.entries(s)
        assert np.array_equal(val, means[cid, s])
        assert len(cid) == np.count_nonzero(means[:, s])
        rebuilt[cid, s] = val
        mv = moving[cid]
        nm = inv.mf_moving[s]
        if s < t_th:
            blocks = [cid[:nm], cid[nm:]]
            assert mv[:nm].all() and not mv[nm:].any()
        else:
            nh = inv.mf_high[s]
            assert np.all(val[:nh] >= v_th) and np.all(val[nh:] < v_th)
            assert mv[:nm].all() and not mv[nm:nh].any()
            blocks = [cid[:nm], cid[nm:nh], cid[nh:]]
        for b in blocks:
            assert np.all(np.diff(b) > 0)
    assert np.array_equal(rebuilt, means)
    # the partial rows hold exactly the Region-3 values
    hi = means[:, t_th:]
    expect = np.where(hi < v_th, hi, 0.0).T
    assert np.array_equal(part.rows, expect)


def test_random_reconstruction():
    rng = np.random.default_rng(8)
    means = random_means(rng, 8, 30)
    moving = rng.random(8) < 0.5
    inv = build_inverted_index(means, StructuralParams(t_th=11, v_th=0.25), moving)
    part = build_partial_index(means, 11, 0.25)
    _check_layout(means, inv, part, 11, 0.25, moving)


@settings(max_examples=80, deadline=None)
@given(
    st.integers(1, 9),
    st.integers(1, 15),
    st.floats(0.01, 1.0),
    st.integers(0, 2**31 - 1),
    st.floats(0.05, 1.0),
)
def test_layout_property(k, d, v_th, seed, density):
    rng = np.random.default_rng(seed)
    means = random_means(rng, k, d, density)
    t_th = int(rng.integers(0, d + 1))
    moving = rng.random(k) < 0.5
    inv = build_inverted_index(means, StructuralParams(t_th, v_th), moving)
    part = build_partial_index(means, t_th, v_th)
    _check_layout(means, inv, part, t_th, v_th, moving)
    assert inv.moving_ids.tolist() == np.flatnonzero(moving).tolist()


class TestSimilarity:
    def test_self_similarity(self):
        x = np.array([[0.6, 0.0, 0.8]])
        c = corpus_from_dense(x)
        assert assigned_similarities(c, np.array([0]), x)[0] == pytest.approx(1.0, abs=1e-15)

    def test_disjoint(self):
        c = corpus_from_dense([[1.0, 0.0]])
        assert assigned_similarities(c, np.array([0]), np.array([[0.0, 1.0]]))[0] == 0.0

    def test_random_dense(self, small_corpus):
        rng = np.random.default_rng(5)
        means = random_means(rng, 6, small_corpus.n_terms)
        a = rng.integers(0, 6, small_corpus.n_docs)
        got = assigned_similarities(small_corpus, a, means)
        X = dense(small_corpus)
        expect = np.einsum("ij,ij->i", X, means[a])
        assert np.max(np.abs(got - expect)) <= 1e-10


def test_structural_params_validate():
    StructuralParams(0, 1.0).validate(10)
    StructuralParams(10, 0.01).validate(10)
    with pytest.raises(ValueError):
        StructuralParams(11, 0.5).validate(10)
    with pytest.raises(ValueError):
        StructuralParams(3, 0.0).validate(10)
    with pytest.raises(ValueError):
        StructuralParams(3, 1.5).validate(10)


def test_object_index_lengths(small_corpus):
    oi = build_object_index(small_corpus)
    assert np.array_equal(np.diff(oi.ptr), small_corpus.df)
    X = dense(small_corpus)
    for s in (0, small_corpus.n_terms // 2, small_corpus.n_terms - 1):
        ids = oi.oid[oi.ptr[s] : oi.ptr[s + 1]]
        assert ids.tolist() == np.flatnonzero(X[:, s]).tolist()
        assert np.array_equal(oi.val[oi.ptr[s] : oi.ptr[s + 1]], X[ids, s])
    lo = build_object_index(small_corpus, s_lo=50)
    assert np.all(np.diff(lo.ptr)[:50] == 0)
    assert np.array_equal(np.diff(lo.ptr)[50:], small_corpus.df[50:])
