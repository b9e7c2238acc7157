"""Unit tests for the soft silhouette loss, its gradients, the compiled-core /
numpy-fallback equivalence, and the hard silhouette metric."""

import numpy as np
import pytest

import softsil.sil_loss as sl
from softsil.embedding import EmbeddingBatch, cosine_distance_matrix, l2_normalize_rows, partition_by_class
from softsil.errors import SingleClassBatch, SingletonClass
from softsil.numerics import finite_diff_grad, rel_error, soft_min
from softsil.sil_loss import (
    SilhouetteParams,
    hard_silhouette,
    inter_class_means,
    intra_class_mean,
    soft_silhouette,
    soft_silhouette_embeddings,
    soft_silhouette_grad_embeddings,
)


def _random_case(rng, b=12, c=3):
    y = np.arange(b) % c
    rng.shuffle(y)
    part = partition_by_class(y, c)
    D = rng.uniform(0.0, 2.0, size=(b, b))
    np.fill_diagonal(D, 0.0)
    return D, part


class TestParams:
    def test_rejects_nonpositive(self):
        for kw in ({"tau_s": 0.0}, {"tau_m": -1.0}, {"epsilon": 0.0}):
            with pytest.raises(ValueError):
                SilhouetteParams(**kw)


class TestMeans:
    def test_intra_class_mean(self):
        D, part = _random_case(np.random.default_rng(0))
        i = 0
        others = part.same_class_others(i)
        assert intra_class_mean(D, part, i) == pytest.approx(D[i, others].mean())

    def test_intra_singleton_raises(self):
        y = np.array([0, 1, 1])
        part = partition_by_class(y, 2)
        D = np.ones((3, 3))
        with pytest.raises(SingletonClass):
            intra_class_mean(D, part, 0)

    def test_inter_class_means_values(self):
        D, part = _random_case(np.random.default_rng(1))
        out = inter_class_means(D, part, 0)
        yi = part.labels[0]
        assert sorted(c for c, _ in out) == sorted(int(c) for c in part.present if c != yi)
        for c, m in out:
            assert m == pytest.approx(D[0, part.indices[c]].mean())

    def test_inter_single_class_raises(self):
        part = partition_by_class(np.array([0, 0, 0]), 1)
        with pytest.raises(SingleClassBatch):
            inter_class_means(np.ones((3, 3)), part, 0)


class TestSoftSilhouette:
    def test_terms_consistent_with_definitions(self):
        rng = np.random.default_rng(2)
        D, part = _random_case(rng)
        p = SilhouetteParams(tau_s=0.12, tau_m=0.07)
        res = soft_silhouette(D, part, p, want_terms=True)
        assert res.skipped == 0
        scores = []
        for i, t in enumerate(res.terms):
            assert not t.skipped
            assert t.a == pytest.approx(intra_class_mean(D, part, i), abs=1e-12)
            assert t.b == pytest.approx(soft_min(t.d_ic, p.tau_s), abs=1e-10)
            # smooth max sandwich around the true pair maximum
            assert max(t.a, t.b) - 1e-12 <= t.m_tilde <= max(t.a, t.b) + p.tau_m * np.log(2) + 1e-12
            assert t.s_tilde == pytest.approx((t.b - t.a) / (t.m_tilde + p.epsilon), abs=1e-12)
            scores.append(t.s_tilde)
        assert res.loss == pytest.approx(-np.mean(scores), abs=1e-12)

    def test_grad_D_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        D, part = _random_case(rng, b=9, c=3)
        p = SilhouetteParams()
        analytic = soft_silhouette(D, part, p).grad_D
        numeric = finite_diff_grad(lambda d: soft_silhouette(d, part, p).loss, D.copy())
        assert rel_error(analytic, numeric) < 1e-5

    def test_loss_independent_of_diagonal(self):
        rng = np.random.default_rng(4)
        D, part = _random_case(rng)
        p = SilhouetteParams()
        base = soft_silhouette(D, part, p)
        D2 = D.copy()
        np.fill_diagonal(D2, rng.uniform(0.0, 2.0, size=D.shape[0]))
        res = soft_silhouette(D2, part, p)
        assert res.loss == base.loss
        assert np.array_equal(res.grad_D, base.grad_D)
        assert np.array_equal(np.diag(res.grad_D), np.zeros(D.shape[0]))

    def test_singleton_class_members_skipped_and_counted(self):
        y = np.array([0, 0, 0, 1, 2, 2])
        part = partition_by_class(y, 3)
        rng = np.random.default_rng(5)
        D = rng.uniform(0.0, 2.0, size=(6, 6))
        np.fill_diagonal(D, 0.0)
        res = soft_silhouette(D, part, SilhouetteParams(), want_terms=True)
        assert res.skipped == 1
        assert res.terms[3].skipped
        assert np.array_equal(res.grad_D[3], np.zeros(6))

    def test_single_class_batch_rejected(self):
        part = partition_by_class(np.zeros(4, dtype=np.int64), 1)
        with pytest.raises(SingleClassBatch):
            soft_silhouette(np.ones((4, 4)), part, SilhouetteParams())

    def test_all_singletons_rejected(self):
        part = partition_by_class(np.array([0, 1, 2]), 3)
        with pytest.raises(SingletonClass):
            soft_silhouette(np.ones((3, 3)), part, SilhouetteParams())

    def test_well_separated_clusters_score_high(self):
        # Two tight antipodal clusters: scores near +1, loss near -1.
        rng = np.random.default_rng(6)
        base = np.array([1.0, 0.0])
        z = np.vstack([base + 0.01 * rng.standard_normal((5, 2)),
                       -base + 0.01 * rng.standard_normal((5, 2))])
        batch = l2_normalize_rows(z)
        y = np.array([0] * 5 + [1] * 5)
        part = partition_by_class(y, 2)
        res = soft_silhouette(cosine_distance_matrix(batch), part, SilhouetteParams())
        assert res.loss < -0.95


class TestEmbeddingGradients:
    def test_fused_path_matches_chained_grad_D(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            b, c, d = 10, 3, 5
            y = np.arange(b) % c
            rng.shuffle(y)
            part = partition_by_class(y, c)
            batch = l2_normalize_rows(rng.standard_normal((b, d)) + 0.2)
            p = SilhouetteParams()
            res = soft_silhouette(cosine_distance_matrix(batch), part, p)
            chained = soft_silhouette_grad_embeddings(res.grad_D, batch.z)
            loss, gz, skipped = soft_silhouette_embeddings(batch, part, p)
            assert loss == pytest.approx(res.loss, abs=1e-14)
            assert skipped == res.skipped
            assert np.max(np.abs(gz - chained)) < 1e-12

    def test_embedding_grad_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        b, c, d = 9, 3, 4
        y = np.arange(b) % c
        part = partition_by_class(y, c)
        z = rng.standard_normal((b, d)) + 0.3
        p = SilhouetteParams()

        def f(raw):
            batch = l2_normalize_rows(raw)
            return soft_silhouette_embeddings(batch, part, p)[0]

        batch = l2_normalize_rows(z)
        _, gz, _ = soft_silhouette_embeddings(batch, part, p)
        from softsil.embedding import l2_normalize_backward

        analytic = l2_normalize_backward(z, gz)
        assert rel_error(analytic, finite_diff_grad(f, z.copy())) < 1e-5


@pytest.mark.skipif(sl._silcore is None, reason="compiled core not built")
class TestCompiledCoreEquivalence:
    def test_kernel_and_numpy_fallback_agree(self, monkeypatch):
        rng = np.random.default_rng(9)
        p = SilhouetteParams(tau_s=0.13, tau_m=0.06)
        for k in range(20):
            b = int(rng.integers(6, 20))
            c = int(rng.integers(2, 5))
            y = np.arange(b) % c
            rng.shuffle(y)
            # occasionally plant a singleton class to exercise the skip path
            if k % 5 == 0 and c < b:
                y[0] = c - 1
                y[1:] = np.arange(b - 1) % (c - 1)
            part = partition_by_class(y, c)
            batch = l2_normalize_rows(rng.standard_normal((b, 4)) + 0.2)
            D = cosine_distance_matrix(batch)

            fast = soft_silhouette(D, part, p)
            fast_e = soft_silhouette_embeddings(batch, part, p)
            with monkeypatch.context() as m:
                m.setattr(sl, "_silcore", None)
                slow = soft_silhouette(D, part, p)
                slow_e = soft_silhouette_embeddings(batch, part, p)

            assert fast.loss == pytest.approx(slow.loss, abs=1e-13)
            assert fast.skipped == slow.skipped
            assert np.max(np.abs(fast.grad_D - slow.grad_D)) < 1e-13
            assert fast_e[0] == pytest.approx(slow_e[0], abs=1e-13)
            assert np.max(np.abs(fast_e[1] - slow_e[1])) < 1e-13

    def test_kernel_error_paths_match(self):
        part = partition_by_class(np.zeros(4, dtype=np.int64), 1)
        with pytest.raises(SingleClassBatch):
            soft_silhouette_embeddings(
                EmbeddingBatch(np.eye(4), normalized=True), part, SilhouetteParams()
            )
        part = partition_by_class(np.array([0, 1, 2]), 3)
        with pytest.raises(SingletonClass):
            soft_silhouette_embeddings(
                EmbeddingBatch(np.eye(3), normalized=True), part, SilhouetteParams()
            )


class TestHardSilhouette:
    def test_known_two_cluster_value(self):
        z = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]])
        y = np.array([0, 0, 1, 1])
        mean, per = hard_silhouette(EmbeddingBatch(z, normalized=True), y, 2)
        # a = 0 within each cluster, b = 2 across: score 1 for every sample
        assert mean == pytest.approx(1.0)
        assert np.allclose(per, 1.0)

    def test_singletons_scored_zero_but_counted(self):
        z = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        y = np.array([0, 1, 1])
        mean, per = hard_silhouette(EmbeddingBatch(z, normalized=True), y, 2)
        assert per[0] == 0.0
        assert mean == pytest.approx(per.mean())

    def test_single_class_rejected(self):
        with pytest.raises(SingleClassBatch):
            hard_silhouette(EmbeddingBatch(np.eye(3), normalized=True), np.zeros(3, dtype=int), 1)

    def test_limit_of_soft_version(self):
        # With tiny temperatures and comfortable gaps the relaxation matches.
        rng = np.random.default_rng(10)
        y = np.arange(12) % 3
        part = partition_by_class(y, 3)
        centers = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        batch = l2_normalize_rows(centers[y] + 0.05 * rng.standard_normal((12, 3)))
        res = soft_silhouette(
            cosine_distance_matrix(batch), part,
            SilhouetteParams(tau_s=1e-4, tau_m=1e-4), want_terms=True,
        )
        mean, per = hard_silhouette(batch, y, 3)
        for t, s in zip(res.terms, per):
            assert t.s_tilde == pytest.approx(s, abs=1e-2)
