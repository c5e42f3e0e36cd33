import itertools
import math

import numpy as np
import pytest

from blinkfit.dwell import DwellHistogram, auto_threshold, binarize, dwell_histogram
from blinkfit.emitter import EmitterModel, generate_trace
from blinkfit.errors import DegenerateClusterError, InsufficientDataError
from blinkfit.ga import (
    Clustering,
    GaConfig,
    crossover_clone_exchange,
    extract_tau,
    heuristic_estimate,
    kmeans_cluster,
    kmeanspp_init,
    mutate,
    run_ga,
    silhouette,
    spawn_individual,
)

LN2 = math.log(2.0)


def hist(pairs, bin_width=1e-3, state="on"):
    idx, occ = zip(*sorted(pairs.items()))
    return DwellHistogram(state, bin_width, np.array(idx), np.array(occ))


def brute_force_two_partition(points):
    """Oracle: exhaustive optimal 2-partition by total squared distance."""
    pts = np.asarray(points, dtype=float)
    best = None
    n = len(pts)
    for assignment in itertools.product([0, 1], repeat=n):
        if len(set(assignment)) < 2:
            continue
        phi = 0.0
        for j in (0, 1):
            members = pts[np.array(assignment) == j]
            phi += ((members - members.mean(axis=0)) ** 2).sum()
        if best is None or phi < best:
            best = phi
    return best


class TestHeuristic:
    def test_decided_formula(self):
        h = hist({1: 2, 3: 2})
        # c1 = 2 ms, c2 = 3/ln5 ms, c3 = 1 ms (tie broken to shortest)
        expected = np.median([2e-3, 3e-3 / math.log(5.0), 1e-3])
        assert heuristic_estimate(h, (1e-3, 100e-3)) == pytest.approx(expected)

    def test_clamped_to_range(self):
        h = hist({1: 5})
        assert heuristic_estimate(h, (10e-3, 100e-3)) == 10e-3

    def test_long_trace_seed_quality(self):
        model = EmitterModel(tau_on=15e-3, tau_off=45e-3)
        trace = generate_trace(model, 200.0, 1e-3, "poisson", rng=23)
        hist_on, _ = dwell_histogram(binarize(trace, auto_threshold(trace)))
        tau0 = heuristic_estimate(hist_on, (1e-3, 100e-3))
        assert 5e-3 < tau0 < 45e-3

    def test_empty_rejected(self):
        h = DwellHistogram("on", 1e-3, np.array([], dtype=int), np.array([], dtype=int))
        with pytest.raises(ValueError):
            heuristic_estimate(h, (1e-3, 100e-3))


class TestSpawn:
    def test_cardinality(self):
        h = hist({i: 1 for i in range(1, 11)})
        ind = spawn_individual(h, 0.7, np.random.default_rng(0))
        assert len(ind) == 7
        assert len({tuple(p) for p in ind.points}) == 7

    def test_full_fraction(self):
        h = hist({i: 1 for i in range(1, 11)})
        ind = spawn_individual(h, 1.0, np.random.default_rng(0))
        np.testing.assert_array_equal(ind.points, h.pairs())

    def test_seeds_differ(self):
        h = hist({i: 1 for i in range(1, 11)})
        a = spawn_individual(h, 0.7, np.random.default_rng(1))
        b = spawn_individual(h, 0.7, np.random.default_rng(2))
        assert not np.array_equal(a.points, b.points)

    def test_empty_histogram(self):
        h = DwellHistogram("on", 1e-3, np.array([], dtype=int), np.array([], dtype=int))
        with pytest.raises(InsufficientDataError):
            spawn_individual(h, 0.7, np.random.default_rng(0))


class TestKmeansPP:
    def test_saturation(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        centroids = kmeanspp_init(pts, 3, np.random.default_rng(0))
        assert {tuple(c) for c in centroids} == {tuple(p) for p in pts}

    def test_identical_points(self):
        pts = np.ones((5, 2))
        centroids = kmeanspp_init(pts, 3, np.random.default_rng(0))
        np.testing.assert_array_equal(centroids, np.ones((3, 2)))

    def test_separated_blobs_both_seeded(self):
        rng = np.random.default_rng(11)
        blob_a = rng.normal(0.0, 0.05, (20, 2))
        blob_b = rng.normal(5.0, 0.05, (20, 2)) + np.array([5.0, 0.0])
        pts = np.vstack([blob_a, blob_b])
        hits = 0
        runs = 1000
        for seed in range(runs):
            centroids = kmeanspp_init(pts, 2, np.random.default_rng(seed))
            sides = {c[0] > 2.5 for c in centroids}
            hits += len(sides) == 2
        assert hits / runs >= 0.99

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            kmeanspp_init(np.zeros((2, 2)), 3, np.random.default_rng(0))


class TestKmeans:
    def test_two_pair_example(self):
        pts = np.array([[1.0, 10.0], [2.0, 9.0], [10.0, 1.0], [11.0, 2.0]])
        result = kmeans_cluster(pts, 2, np.random.default_rng(0), n_init=8)
        groups = {tuple(sorted(map(tuple, pts[result.assignment == j]))) for j in (0, 1)}
        assert groups == {
            ((1.0, 10.0), (2.0, 9.0)),
            ((10.0, 1.0), (11.0, 2.0)),
        }
        cents = {tuple(c) for c in result.centroids}
        assert cents == {(1.5, 9.5), (10.5, 1.5)}

    def test_single_cluster_closed_form(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(40, 2))
        result = kmeans_cluster(pts, 1, rng)
        np.testing.assert_allclose(result.centroids[0], pts.mean(axis=0))
        assert result.potential == pytest.approx(((pts - pts.mean(axis=0)) ** 2).sum())

    def test_phi_monotone_and_final_below_init(self):
        rng = np.random.default_rng(8)
        for seed in range(20):
            pts = np.random.default_rng(seed).normal(size=(30, 2))
            result = kmeans_cluster(pts, 3, rng)
            phis = result.phi_history
            assert all(b <= a + 1e-9 for a, b in zip(phis, phis[1:]))
            assert result.potential <= phis[0] + 1e-9

    def test_matches_brute_force_on_four_points(self):
        # fixed 100-instance random suite, phi within 1e-9 of exhaustive optimum
        for seed in range(100):
            pts = np.random.default_rng(1000 + seed).uniform(0.0, 10.0, size=(4, 2))
            result = kmeans_cluster(pts, 2, np.random.default_rng(seed), n_init=8)
            assert result.potential == pytest.approx(
                brute_force_two_partition(pts), abs=1e-9
            )


class TestSilhouette:
    def test_two_tight_pairs(self):
        # points 0, 1 vs 10, 11 on a line; hand evaluation of each branch
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [10.0, 0.0], [11.0, 0.0]])
        clustering = Clustering(
            k=2,
            centroids=np.array([[0.5, 0.0], [10.5, 0.0]]),
            assignment=np.array([0, 0, 1, 1]),
            potential=1.0,
            points=pts,
        )
        report = silhouette(clustering)
        assert report.per_point[0] == pytest.approx(1.0 - 1.0 / 10.5)
        assert report.per_point[1] == pytest.approx(1.0 - 1.0 / 9.5)
        expected_mean = np.mean(
            [1 - 1 / 10.5, 1 - 1 / 9.5, 1 - 1 / 9.5, 1 - 1 / 10.5]
        )
        assert report.mean_score == pytest.approx(expected_mean)

    def test_equal_distances_zero(self):
        # a(i) == b(i) for the first point by construction
        pts = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]])
        clustering = Clustering(
            k=2,
            centroids=np.array([[1.0, 0.0], [0.0, 2.0]]),
            assignment=np.array([0, 0, 1]),
            potential=1.0,
            points=pts,
        )
        report = silhouette(clustering)
        assert report.per_point[0] == 0.0  # a = b = 2
        assert report.per_point[2] == 0.0  # singleton cluster

    def test_negative_branch(self):
        # point closer to the other cluster than to its own
        pts = np.array([[0.0, 0.0], [4.0, 0.0], [1.0, 1.0], [2.0, 1.0]])
        clustering = Clustering(
            k=2,
            centroids=np.array([[2.0, 0.0], [1.5, 1.0]]),
            assignment=np.array([0, 0, 1, 1]),
            potential=1.0,
            points=pts,
        )
        report = silhouette(clustering)
        a0 = 4.0
        b0 = (math.sqrt(2.0) + math.sqrt(5.0)) / 2.0
        assert report.per_point[0] == pytest.approx(b0 / a0 - 1.0)
        assert report.per_point[0] < 0

    def test_range_bound_on_random_clusterings(self):
        for seed in range(300):
            rng = np.random.default_rng(seed)
            m = rng.integers(4, 20)
            k = rng.integers(2, 4)
            pts = rng.normal(size=(m, 2))
            labels = rng.integers(0, k, size=m)
            for j in range(k):  # force non-empty clusters
                labels[j % m] = j
            clustering = Clustering(
                k=int(k),
                centroids=np.zeros((k, 2)),
                assignment=labels,
                potential=0.0,
                points=pts,
            )
            s = silhouette(clustering)
            assert np.all(s.per_point >= -1.0 - 1e-12)
            assert np.all(s.per_point <= 1.0 + 1e-12)

    def test_needs_two_clusters(self):
        clustering = Clustering(
            k=1,
            centroids=np.zeros((1, 2)),
            assignment=np.zeros(3, dtype=int),
            potential=0.0,
            points=np.zeros((3, 2)),
        )
        with pytest.raises(ValueError):
            silhouette(clustering)


class TestCrossoverMutate:
    def test_clone_exchange_conserves_points(self):
        h = hist({i: i + 1 for i in range(1, 9)})
        ind = spawn_individual(h, 1.0, np.random.default_rng(0))
        for seed in range(20):
            a, b = crossover_clone_exchange(ind, np.random.default_rng(seed))
            union = sorted(map(tuple, np.vstack([a.points, b.points])))
            expected = sorted(map(tuple, np.vstack([ind.points, ind.points])))
            assert union == expected

    def test_single_point_individual(self):
        from blinkfit.ga import Individual

        ind = Individual(np.array([[3, 5]]))
        a, b = crossover_clone_exchange(ind, np.random.default_rng(0))
        np.testing.assert_array_equal(a.points, ind.points)
        np.testing.assert_array_equal(b.points, ind.points)

    def test_mutate_zero_rate_is_identity(self):
        h = hist({i: 1 for i in range(1, 11)})
        ind = spawn_individual(h, 0.7, np.random.default_rng(3))
        out = mutate(ind, h, 0.0, np.random.default_rng(4))
        np.testing.assert_array_equal(out.points, ind.points)

    def test_mutate_saturated_histogram_is_identity(self):
        h = hist({i: 1 for i in range(1, 6)})
        ind = spawn_individual(h, 1.0, np.random.default_rng(0))
        out = mutate(ind, h, 1.0, np.random.default_rng(1))
        np.testing.assert_array_equal(out.points, ind.points)

    def test_mutate_binomial_mean(self):
        h = hist({i: 1 for i in range(1, 201)})
        ind = spawn_individual(h, 0.5, np.random.default_rng(7))  # 100 points
        total = 0
        runs = 2000
        for seed in range(runs):
            out = mutate(ind, h, 0.05, np.random.default_rng(seed))
            before = {tuple(p) for p in ind.points}
            after = {tuple(p) for p in out.points}
            total += len(after - before)
        assert total / runs == pytest.approx(5.0, abs=0.5)

    def test_mutated_points_stay_in_histogram(self):
        h = hist({i: 2 * i for i in range(1, 20)})
        ind = spawn_individual(h, 0.6, np.random.default_rng(1))
        out = mutate(ind, h, 0.8, np.random.default_rng(2))
        pool = {tuple(p) for p in h.pairs()}
        assert {tuple(p) for p in out.points} <= pool
        assert len({tuple(p) for p in out.points}) == len(ind)


class TestExtractTau:
    def test_halving_counts(self):
        # counts halve from the weighted-median point to the longest point
        pts = np.array([[4.8045, 50.0], [6.0, 25.0]])
        tau = extract_tau(pts, 1e-3)
        assert tau == pytest.approx(4.8045e-3 / (LN2 * LN2), rel=1e-12)

    def test_decade_counts(self):
        pts = np.array([[15.96, 100.0], [20.0, 10.0]])
        tau = extract_tau(pts, 1e-3)
        assert tau == pytest.approx(15.96e-3 / (LN2 * math.log(10.0)), rel=1e-12)
        assert tau == pytest.approx(10e-3, rel=0.01)

    def test_degenerate_counts(self):
        pts = np.array([[3.0, 7.0], [9.0, 7.0]])
        with pytest.raises(DegenerateClusterError):
            extract_tau(pts, 1e-3)

    def test_needs_two_distinct_durations(self):
        with pytest.raises(ValueError):
            extract_tau(np.array([[3.0, 7.0], [3.0, 2.0]]), 1e-3)

    def test_positive_counts_required(self):
        with pytest.raises(ValueError):
            extract_tau(np.array([[3.0, 0.0], [5.0, 2.0]]), 1e-3)

    @pytest.mark.parametrize("tau_ms", [5.0, 15.0, 45.0])
    def test_exponential_histogram_oracle(self, tau_ms):
        # exact decaying histogram; head cluster spanning a factor >= 2 in
        # counts.  Oracle: the generating constant itself.
        tau = tau_ms * 1e-3
        c0 = 100.0
        durations = np.arange(1, int(round(tau_ms)) + 1)
        counts = np.rint(c0 * np.exp(-durations / tau_ms))
        cluster = np.column_stack([durations, counts])
        assert counts[0] / counts[-1] >= 2.0
        est = extract_tau(cluster, 1e-3)
        assert est == pytest.approx(tau, rel=0.2)


class TestRunGa:
    def make_hist(self, duration=200.0, seed=42, state="on"):
        model = EmitterModel(tau_on=15e-3, tau_off=45e-3)
        trace = generate_trace(model, duration, 1e-3, "poisson", rng=seed)
        hist_on, hist_off = dwell_histogram(binarize(trace, auto_threshold(trace)))
        return hist_on if state == "on" else hist_off

    def test_determinism(self):
        h = self.make_hist(duration=20.0)
        cfg = GaConfig(tau_range=(1e-3, 100e-3), max_iterations=120)
        a = run_ga(h, cfg, rng=5)
        b = run_ga(h, cfg, rng=5)
        assert a.tau_hat == b.tau_hat
        assert a.diagnostics["estimate_log"] == b.diagnostics["estimate_log"]

    def test_long_trace_accuracy(self):
        cfg = GaConfig(tau_range=(1e-3, 100e-3))
        errs = []
        for seed in range(8):
            h = self.make_hist(seed=seed)
            est = run_ga(h, cfg, rng=seed)
            errs.append(abs(est.tau_hat - 15e-3) / 15e-3)
        assert np.median(errs) <= 0.15

    def test_estimate_within_range(self):
        cfg = GaConfig(tau_range=(20e-3, 30e-3), max_iterations=60)
        for seed in range(4):
            h = self.make_hist(duration=5.0, seed=seed)
            est = run_ga(h, cfg, rng=seed)
            assert 20e-3 <= est.tau_hat <= 30e-3

    def test_small_histogram_rejected(self):
        h = hist({3: 1})
        with pytest.raises(InsufficientDataError):
            run_ga(h, GaConfig(tau_range=(1e-3, 100e-3)), rng=0)

    def test_config_roundtrip(self, tmp_path):
        cfg = GaConfig(tau_range=(1e-3, 100e-3), k_init=4, mutation_rate=0.1)
        path = tmp_path / "ga.json"
        cfg.to_json(path)
        back = GaConfig.from_json(path)
        assert back == cfg

    def test_estimate_log_csv(self, tmp_path):
        from blinkfit.ga import write_estimate_log

        h = self.make_hist(duration=50.0)
        est = run_ga(h, GaConfig(tau_range=(1e-3, 100e-3), max_iterations=150), rng=3)
        path = tmp_path / "log.csv"
        write_estimate_log(est, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "iteration,tau_s,silhouette,k"
        assert len(lines) == len(est.diagnostics["estimate_log"]) + 1


class TestGaConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            GaConfig(tau_range=(2e-3, 1e-3))
        with pytest.raises(ValueError):
            GaConfig(tau_range=(1e-3, 2e-3), k_init=1)
        with pytest.raises(ValueError):
            GaConfig(tau_range=(1e-3, 2e-3), blend_weights=(0.5, 0.5, 0.5, 0.5))
