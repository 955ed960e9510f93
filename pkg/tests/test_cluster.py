import numpy as np
import pytest

from esicp.cluster import (
    ALGORITHMS,
    ConfigError,
    RunConfig,
    assign_divi,
    assign_mivi,
    run,
    seed_initial,
)
from esicp.index import build_inverted_index
from esicp.metrics import objective as clustering_objective

from conftest import corpus_from_dense, dense, make_corpus, random_means


class TestSeeding:
    def test_k_equals_n(self, small_corpus):
        ids, means = seed_initial(small_corpus, small_corpus.n_docs, 0)
        assert sorted(ids.tolist()) == list(range(small_corpus.n_docs))

    def test_same_seed(self, small_corpus):
        a, _ = seed_initial(small_corpus, 10, 42)
        b, _ = seed_initial(small_corpus, 10, 42)
        assert np.array_equal(a, b)

    def test_different_seeds(self):
        c = make_corpus(1000, 150, seed=1, doc_len=10)
        a, _ = seed_initial(c, 10, 1)
        b, _ = seed_initial(c, 10, 2)
        assert len(set(a.tolist())) == 10
        assert not np.array_equal(a, b)

    def test_means_are_seed_vectors(self, small_corpus):
        ids, means = seed_initial(small_corpus, 5, 3)
        assert np.array_equal(means, dense(small_corpus)[ids])

    def test_k_above_n(self, small_corpus):
        with pytest.raises(ConfigError):
            run(small_corpus, RunConfig(k=small_corpus.n_docs + 1))


class TestAssignment:
    def test_matches_identical_centroid(self):
        x = np.array([[0.0, 0.6, 0.8, 0.0]])
        means = np.array([[1.0, 0, 0, 0], [0, 0, 0, 1.0], [0.0, 0.6, 0.8, 0.0], [0, 1.0, 0, 0]])
        out = assign_mivi(corpus_from_dense(x), build_inverted_index(means), np.array([-1]), np.array([-1.0]))
        assert out.assign.tolist() == [2]

    def test_ties_keep_assignment(self):
        x = np.array([[0.6, 0.8]])
        means = np.array([[0.6, 0.8], [0.6, 0.8], [0.6, 0.8]])
        c = corpus_from_dense(x)
        rho = float(x[0] @ means[0])
        out = assign_mivi(c, build_inverted_index(means), np.array([1]), np.array([rho]))
        assert out.assign.tolist() == [1]

    def test_divi_equals_mivi(self, small_corpus):
        rng = np.random.default_rng(3)
        means = random_means(rng, 9, small_corpus.n_terms)
        a = rng.integers(0, 9, small_corpus.n_docs)
        rho = (dense(small_corpus) @ means.T)[np.arange(small_corpus.n_docs), a]
        m = assign_mivi(small_corpus, build_inverted_index(means), a, rho)
        d = assign_divi(small_corpus, means, a, rho)
        assert np.array_equal(m.assign, d.assign)
        assert np.array_equal(m.rho, d.rho)
        assert m.totals()[0] == d.totals()[0]

    def test_driver_matches_dense_lloyd(self):
        c = make_corpus(200, 50, seed=5, doc_len=12)
        X = dense(c)
        cfg = RunConfig(k=8, seed=2, algorithm="mivi", max_iters=30)
        res = run(c, cfg)
        _, means = seed_initial(c, 8, 2)
        a = np.full(c.n_docs, -1)
        rho = np.full(c.n_docs, -1.0)
        for r, hist in enumerate(res.history):
            S = X @ means.T
            new = a.copy()
            for i in range(c.n_docs):
                j = int(np.argmax(S[i]))
                if S[i, j] > rho[i] + 1e-12:
                    new[i] = j
            assert np.array_equal(new, hist), f"iteration {r + 1}"
            a = new
            for j in range(8):
                members = X[a == j]
                if len(members):
                    m = members.sum(axis=0)
                    means[j] = m / np.linalg.norm(m)
            rho = (X @ means.T)[np.arange(c.n_docs), a]


class TestDriver:
    def test_singletons(self):
        c = make_corpus(40, 60, seed=7, doc_len=20)
        X = dense(c)
        assert len(np.unique(X, axis=0)) == c.n_docs
        res = run(c, RunConfig(k=c.n_docs, seed=0, algorithm="mivi"))
        assert res.converged
        assert len(res.iterations) == 2
        assert np.bincount(res.assign, minlength=c.n_docs).tolist() == [1] * c.n_docs
        assert res.objective == pytest.approx(c.n_docs, abs=1e-9)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_all_algorithms_share_history(self, seed):
        c = make_corpus(500, 250, seed=seed + 30, doc_len=30)
        ref = run(c, RunConfig(k=24, seed=seed, algorithm="mivi"))
        for algo in ALGORITHMS[1:]:
            res = run(c, RunConfig(k=24, seed=seed, algorithm=algo))
            assert len(res.history) == len(ref.history), algo
            for r, (x, y) in enumerate(zip(res.history, ref.history)):
                assert np.array_equal(x, y), f"{algo} iteration {r + 1}"

    def test_records(self):
        c = make_corpus(400, 200, seed=9)
        mivi = run(c, RunConfig(k=16, seed=1, algorithm="mivi"))
        icp = run(c, RunConfig(k=16, seed=1, algorithm="icp"))
        es = run(c, RunConfig(k=16, seed=1, algorithm="es-icp"))
        for res in (mivi, icp, es):
            assert len(res.iterations) == len(res.history)
            for rec in res.iterations:
                assert rec.mult == rec.mult_region1 + rec.mult_region2 + rec.mult_region3 + rec.mult_bound
                assert 0.0 <= rec.cpr(c.n_docs, 16) <= 1.0
            obj = [rec.objective for rec in res.iterations]
            assert all(b >= a - 1e-9 for a, b in zip(obj, obj[1:]))
        for m, i in zip(mivi.iterations[2:], icp.iterations[2:]):
            assert i.mult <= m.mult
        assert all(rec.cpr(c.n_docs, 16) == 1.0 for rec in mivi.iterations)
        assert es.iterations[0].t_th is None
        assert es.iterations[1].t_th == es.estimates[0][1].params.t_th
        assert [it for it, _ in es.estimates] == [1, 2]
        assert es.params == es.estimates[-1][1].params
        assert clustering_objective(c, es.assign, es.means.means) == pytest.approx(es.objective, rel=1e-12)

    def test_non_convergence_flagged(self, small_corpus):
        res = run(small_corpus, RunConfig(k=10, seed=0, max_iters=1))
        assert not res.converged
        assert len(res.iterations) == 1

    def test_tht_without_high_terms_is_mivi(self):
        c = make_corpus(300, 150, seed=12)
        ref = run(c, RunConfig(k=12, seed=3, algorithm="mivi"))
        res = run(c, RunConfig(k=12, seed=3, algorithm="es", param_policy="fixed", t_th=c.n_terms, v_th=0.5))
        assert [r.mult for r in res.iterations] == [r.mult for r in ref.iterations]

    def test_fixed_params_used(self):
        c = make_corpus(300, 150, seed=13)
        res = run(c, RunConfig(k=12, seed=3, algorithm="es-icp", param_policy="fixed", t_th=100, v_th=0.1))
        assert all(r.t_th == 100 and r.v_th == 0.1 for r in res.iterations[1:])
        ta = run(c, RunConfig(k=12, seed=3, algorithm="ta-icp", param_policy="fixed", tth_frac=0.5))
        assert ta.params.t_th == int(np.ceil(0.5 * c.n_terms)) - 1

    @pytest.mark.parametrize("workers", [2, 4])
    def test_workers_deterministic(self, workers):
        c = make_corpus(600, 300, seed=14)
        one = run(c, RunConfig(k=20, seed=5, algorithm="es-icp", workers=1))
        many = run(c, RunConfig(k=20, seed=5, algorithm="es-icp", workers=workers))
        assert all(np.array_equal(a, b) for a, b in zip(one.history, many.history))
        strip = lambda rec: (rec.mult_region1, rec.mult_region2, rec.mult_region3, rec.mult_bound,
                             rec.sqrt, rec.candidates, rec.changes, rec.n_moving, rec.objective, rec.t_th, rec.v_th)
        assert [strip(r) for r in one.iterations] == [strip(r) for r in many.iterations]

    @pytest.mark.parametrize(
        "kw",
        [
            dict(algorithm="nope"),
            dict(max_iters=0),
            dict(workers=0),
            dict(algorithm="es-icp", param_policy="fixed", t_th=10),
            dict(algorithm="es-icp", param_policy="fixed", t_th=10_000, v_th=0.1),
            dict(algorithm="es-icp", param_policy="fixed", t_th=10, v_th=1.5),
            dict(vth_grid=()),
            dict(vth_grid=(0.0, 0.5)),
            dict(smin_frac=1.5),
            dict(param_policy="sometimes"),
        ],
    )
    def test_config_errors(self, small_corpus, kw):
        with pytest.raises(ConfigError):
            run(small_corpus, RunConfig(k=5, **kw))
