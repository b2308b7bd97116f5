import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsynth.data import LabelledDataset
from fedsynth.numerics import make_rng
from fedsynth.privacy.dap import (
    DapReport,
    DpParams,
    LossSamples,
    RemovalConfig,
    RemovalKL,
    estimate_dap,
    expected_loss_bound,
    gaussian_sigma,
    nearest_artificial,
    privacy_loss,
    simulate_removal,
)
from fedsynth.privacy.knn import knn_kl_estimate, knn_search
from fedsynth.privacy.similarity import SimilarityMetric, pairwise_distances
from fedsynth.privacy.special import betainc_reg, t_cdf, t_quantile, t_sf, t_upper_quantile

from oracles import brute_force_kl, gaussian_kl, t_upper_quantile_mp


class TestPrimitives:
    def test_privacy_loss(self):
        assert privacy_loss(0.5, 0.5) == 0.0
        q = 0.1
        assert privacy_loss(math.e * q, q) == pytest.approx(1.0, abs=1e-15)

    @settings(max_examples=50)
    @given(st.floats(1e-300, 1.0), st.floats(1e-300, 1.0))
    def test_privacy_loss_antisymmetric(self, p, q):
        assert privacy_loss(p, q) == -privacy_loss(q, p)

    def test_privacy_loss_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            privacy_loss(0.0, 0.5)

    def test_gaussian_sigma(self):
        assert gaussian_sigma(1.0, DpParams(1.0, 1.25 / math.e**2)) == pytest.approx(2.0, rel=1e-15)
        dp = DpParams(0.7, 1e-3)
        assert gaussian_sigma(2.0, dp) == pytest.approx(2 * gaussian_sigma(1.0, dp), rel=1e-15)
        # direct evaluation: sqrt(2 ln(1.25e5)) = 4.84481
        assert gaussian_sigma(1.0, DpParams(1.0, 1e-5)) == pytest.approx(4.844805, abs=1e-6)

    def test_dp_params_validated(self):
        with pytest.raises(ValueError):
            DpParams(-1.0, 0.0)
        with pytest.raises(ValueError):
            DpParams(1.0, 1.0)
        with pytest.raises(ValueError):
            gaussian_sigma(1.0, DpParams(0.0, 0.1))


class TestKnnSearch:
    @pytest.mark.parametrize("d", [2, 12, 40])
    def test_matches_full_sort(self, d):
        rng = make_rng(d)
        data = np.round(rng.normal(size=(300, d)), 1)
        data = np.concatenate([data, data[:50]])  # exact duplicates
        queries = np.concatenate([rng.normal(size=(20, d)), data[:10]])
        dist, idx = knn_search(data, queries, 6)
        full = pairwise_distances(queries, data)
        np.testing.assert_allclose(dist, np.sort(full, axis=1)[:, :6], atol=1e-12)
        np.testing.assert_allclose(full[np.arange(len(queries))[:, None], idx], dist, atol=1e-12)
        assert np.all(dist[20:, 0] == 0.0)

    def test_high_dim_tie_goes_to_lower_index(self):
        data = np.zeros((5, 20))
        data[3] = 1.0
        _, idx = knn_search(data, np.zeros((1, 20)), 4)
        np.testing.assert_array_equal(idx[0], [0, 1, 2, 4])


class TestKlEstimator:
    def test_self_divergence_zero(self):
        x = make_rng(0).normal(size=(10000, 1))
        assert abs(knn_kl_estimate(x, x, k=2)) <= 0.05

    def test_isotropic_scale_2d(self):
        rng = make_rng(1)
        p = rng.normal(size=(10000, 2))
        q = 2.0 * rng.normal(size=(10000, 2))
        truth = gaussian_kl(np.zeros(2), np.eye(2), np.zeros(2), 4 * np.eye(2))
        assert truth == pytest.approx(math.log(4) - 0.75, rel=1e-12)
        assert abs(knn_kl_estimate(p, q, k=2) - truth) <= 0.1

    def test_error_shrinks_with_n(self):
        errs = []
        for n in (1000, 10000):
            e = []
            for seed in range(5):
                rng = make_rng([seed, n])
                e.append(knn_kl_estimate(rng.normal(size=(n, 1)), rng.normal(1.0, 1.0, (n, 1)), k=1) - 0.5)
            errs.append(abs(np.mean(e)) + np.std(e))
        assert errs[1] < errs[0]

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_brute_force(self, seed):
        rng = make_rng(seed)
        d = int(rng.choice([1, 3, 16]))
        p = np.round(rng.normal(size=(int(rng.integers(5, 60)), d)), 1)
        q = np.concatenate([p[: len(p) // 2], rng.normal(size=(int(rng.integers(5, 40)), d))])
        k = int(rng.integers(1, 4))
        assert knn_kl_estimate(p, q, k) == pytest.approx(brute_force_kl(p, q, k), rel=1e-12, abs=1e-12)

    def test_duplicates_are_finite(self):
        x = make_rng(2).normal(size=(50, 2))
        xx = np.concatenate([x, x])
        assert np.isfinite(knn_kl_estimate(xx, xx, k=2))

    def test_errors(self):
        with pytest.raises(ValueError, match="dimension"):
            knn_kl_estimate(np.zeros((5, 2)), np.zeros((5, 3)))
        with pytest.raises(ValueError, match="more than"):
            knn_kl_estimate(np.zeros((2, 1)), np.zeros((5, 1)), k=2)
        with pytest.raises(ValueError, match="at least"):
            knn_kl_estimate(np.zeros((5, 1)), np.zeros((1, 1)), k=2)


class TestRemovalKL:
    @pytest.mark.parametrize("seed", range(10))
    def test_equals_general_estimator(self, seed):
        rng = make_rng([seed, 3])
        d = int(rng.choice([2, 12]))
        x = rng.normal(size=(int(rng.integers(20, 200)), d))
        if seed % 2:
            x = np.concatenate([x, x[:10]])
        knn_k, n_rm = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        kl = RemovalKL(x, knn_k, n_rm)
        removed = np.sort(rng.choice(len(x), n_rm, replace=False))
        keep = np.setdiff1d(np.arange(len(x)), removed)
        assert kl.forward(removed) == pytest.approx(knn_kl_estimate(x, x[keep], knn_k), abs=1e-12)
        assert kl.reverse(removed) == pytest.approx(knn_kl_estimate(x[keep], x, knn_k), abs=1e-12)


def labelled(x, n_classes=2, provenance="real"):
    x = np.clip(x, -1, 1)
    return LabelledDataset(x, np.arange(len(x)) % n_classes, n_classes, provenance)


class TestSimulateRemoval:
    def test_auto_k_from_ratio(self):
        assert RemovalConfig().resolve_k(100, 200) == 2

    def test_k1_removes_argmin(self):
        rng = make_rng(0)
        real = labelled(rng.uniform(-1, 1, (10, 3)))
        art = labelled(rng.uniform(-1, 1, (30, 3)), provenance="artificial")
        out = simulate_removal(real, art, 4, SimilarityMetric(), RemovalConfig(k=1))
        j = np.argmin(((art.features - real.features[4]) ** 2).sum(axis=1))
        assert len(out) == 29
        assert not any(np.array_equal(r, art.features[j]) for r in out.features)

    def test_complement_of_nearest_set(self):
        rng = make_rng(1)
        real = labelled(rng.uniform(-1, 1, (50, 4)))
        art = labelled(np.round(rng.uniform(-1, 1, (1000, 4)), 1), provenance="artificial")
        cfg = RemovalConfig(k=7)
        out = simulate_removal(real, art, 3, SimilarityMetric(), cfg)
        dist = np.sqrt(((art.features - real.features[3]) ** 2).sum(axis=1))
        order = sorted(range(len(art)), key=lambda i: (dist[i], i))
        keep = sorted(order[7:])
        np.testing.assert_array_equal(out.features, art.features[keep])
        np.testing.assert_array_equal(nearest_artificial(real.features[3], art.features, 7),
                                      sorted(order[:7]))

    def test_errors(self):
        real = labelled(np.zeros((3, 2)))
        art = labelled(np.zeros((3, 2)), provenance="artificial")
        with pytest.raises(IndexError):
            simulate_removal(real, art, 3, SimilarityMetric(), RemovalConfig(k=1))
        with pytest.raises(ValueError):
            simulate_removal(real, art, 0, SimilarityMetric(), RemovalConfig(k=3))


class TestTQuantile:
    def test_median(self):
        assert all(t_quantile(df, 0.5) == 0.0 for df in (1, 2, 7, 1000))

    def test_cauchy(self):
        assert t_quantile(1, 0.75) == pytest.approx(1.0, abs=1e-12)
        for p in (0.01, 0.2, 0.9, 0.999):
            assert t_quantile(1, p) == pytest.approx(math.tan(math.pi * (p - 0.5)), abs=1e-8)

    def test_normal_limit(self):
        assert abs(t_quantile(10000, 0.975) - 1.9600) < 1e-3

    def test_table_values(self):
        assert t_quantile(3, 0.95) == pytest.approx(2.353363, abs=1e-6)
        assert t_quantile(10, 0.99) == pytest.approx(2.763769, abs=1e-6)

    @pytest.mark.parametrize("df", [1, 2, 5, 63, 1000])
    @pytest.mark.parametrize("q", [0.4, 0.05, 1e-3, 1e-8, 1e-15])
    def test_against_high_precision(self, df, q):
        ref = t_upper_quantile_mp(df, q)
        got = t_upper_quantile(df, q)
        # absolute 1e-8 where representable; far tails (t ~ 1e14 at df=1) need a relative bound
        assert abs(got - ref) <= 1e-8 * max(1.0, abs(ref) / 1e3)

    @pytest.mark.parametrize("df", [1, 2, 3, 63])
    @pytest.mark.parametrize("q", [1e-100, 1e-300])
    def test_extreme_tail(self, df, q):
        # pdf underflows long before the quantile is reached; compare relatively
        ref = t_upper_quantile_mp(df, q)
        assert t_upper_quantile(df, q) == pytest.approx(ref, rel=1e-12)

    def test_cauchy_far_tail_closed_form(self):
        assert t_upper_quantile(1, 1e-300) == pytest.approx(1 / (math.pi * 1e-300), rel=1e-12)

    def test_monotone_and_antisymmetric(self):
        ps = np.linspace(0.001, 0.999, 200)
        for df in (1, 4, 63):
            qs = np.array([t_quantile(df, p) for p in ps])
            assert np.all(np.diff(qs) > 0)
            np.testing.assert_allclose(qs, -qs[::-1], atol=1e-9)

    def test_cdf_inverse(self):
        for df in (2, 9):
            for p in (0.1, 0.6, 0.95):
                assert t_cdf(t_quantile(df, p), df) == pytest.approx(p, abs=1e-12)
        assert t_sf(0.0, 5) == 0.5

    def test_betainc_symmetry(self):
        for a, b, x in ((0.5, 2.0, 0.3), (3.0, 0.5, 0.9), (10.0, 10.0, 0.5)):
            assert betainc_reg(a, b, x) + betainc_reg(b, a, 1 - x) == pytest.approx(1.0, abs=1e-13)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            t_quantile(3, 1.0)
        with pytest.raises(ValueError):
            t_quantile(0.5, 0.3)


class TestBound:
    def test_constant_samples(self):
        s = LossSamples(np.full(10, 0.7))
        assert expected_loss_bound(s, 1e-15) == pytest.approx(0.7, abs=1e-15)

    def test_gamma_half_is_mean(self):
        s = LossSamples(make_rng(0).normal(size=30))
        assert expected_loss_bound(s, 0.5) == s.mean

    def test_hand_example(self):
        s = LossSamples(np.array([0.0, 1.0, 2.0, 3.0]))
        assert s.mean == 1.5 and s.std == pytest.approx(math.sqrt(1.25))
        assert expected_loss_bound(s, 0.05) == pytest.approx(3.019, abs=5e-4)

    def test_monotone_in_gamma(self):
        s = LossSamples(make_rng(1).normal(size=20))
        mus = [expected_loss_bound(s, g) for g in (1e-15, 1e-6, 0.01, 0.2, 0.49)]
        assert all(a > b for a, b in zip(mus, mus[1:]))
        assert all(m >= s.mean for m in mus)

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            LossSamples(np.array([1.0]))


@pytest.fixture(scope="module")
def dap_sets():
    rng = make_rng(4)
    real = labelled(rng.normal(scale=0.3, size=(200, 2)))
    art = labelled(rng.normal(scale=0.3, size=(400, 2)), provenance="artificial")
    return real, art


class TestEstimateDap:
    def test_report_contract(self, dap_sets):
        real, art = dap_sets
        rep = estimate_dap(real, art, SimilarityMetric(), RemovalConfig(trials=32, seed=1))
        assert rep.gamma == 1e-15 and rep.k == 2 and rep.trials == 32
        assert len(set(rep.real_indices)) == 32  # without replacement
        assert rep.mu == pytest.approx(rep.bound_from_samples(), rel=1e-15)
        assert rep.negative_samples == sum(v < 0 for v in rep.samples)
        assert np.isfinite(rep.mu)

    def test_samples_use_simulated_removal(self, dap_sets):
        real, art = dap_sets
        rep = estimate_dap(real, art, SimilarityMetric(), RemovalConfig(trials=4, seed=2))
        for i, v in zip(rep.real_indices, rep.samples):
            reduced = simulate_removal(real, art, i, SimilarityMetric(), RemovalConfig())
            assert v == pytest.approx(knn_kl_estimate(art.features, reduced.features, 2), abs=1e-12)

    def test_deterministic(self, dap_sets):
        real, art = dap_sets
        a = estimate_dap(real, art, SimilarityMetric(), RemovalConfig(trials=8, seed=3))
        b = estimate_dap(real, art, SimilarityMetric(), RemovalConfig(trials=8, seed=3))
        assert a.to_dict() == b.to_dict()

    def test_duplicated_artificial_set(self, dap_sets):
        real, art = dap_sets
        doubled = LabelledDataset.concat([art, art])
        rep = estimate_dap(real, doubled, SimilarityMetric(), RemovalConfig(trials=8))
        assert rep.k == 4 and np.isfinite(rep.mu)

    @pytest.mark.parametrize("direction", ["reverse", "symmetric"])
    def test_directions(self, dap_sets, direction):
        real, art = dap_sets
        rep = estimate_dap(real, art, SimilarityMetric(), RemovalConfig(trials=8), direction=direction)
        assert rep.direction == direction and np.isfinite(rep.mu)

    def test_json_round_trip(self, dap_sets, tmp_path):
        real, art = dap_sets
        rep = estimate_dap(real, art, SimilarityMetric(), RemovalConfig(trials=8))
        rep.to_json(tmp_path / "r.json")
        back = DapReport.from_json(tmp_path / "r.json")
        assert back.to_dict() == rep.to_dict()
        assert rep.csv_line().count(",") == DapReport.CSV_HEADER.count(",")


class TestSimilarity:
    def test_default_choice(self):
        assert SimilarityMetric.default_for(32).kind == "euclidean_raw"
        assert SimilarityMetric.default_for(64).kind == "euclidean_embedded"

    def test_pseudo_metric(self):
        sim = SimilarityMetric.random_projection(64, 32, seed=1)
        x = make_rng(0).uniform(-1, 1, (30, 64))
        d = sim.distance(x, x)
        assert np.all(d >= 0)
        np.testing.assert_allclose(d, d.T, atol=1e-12)
        np.testing.assert_allclose(np.diag(d), 0.0, atol=1e-12)
        assert np.all(d[:, :, None] <= d[:, None, :] + d.T[None, :, :] + 1e-9)

    def test_embedding_function(self):
        sim = SimilarityMetric("euclidean_embedded", embed_fn=lambda x: 2 * x, description="x2")
        np.testing.assert_allclose(sim.distance(np.zeros((1, 2)), np.ones((1, 2))), [[2 * math.sqrt(2)]])

    def test_embedded_needs_map(self):
        with pytest.raises(ValueError):
            SimilarityMetric("euclidean_embedded")
