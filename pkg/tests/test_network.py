import numpy as np
import pytest

from domfw.network import (
    GraphSchedule,
    MixingConstants,
    WeightMatrix,
    check_mixing,
    constant_schedule,
    metropolis_weights,
    mixing_deviation_series,
    random_connected_schedule,
    transition_product,
    validate,
    write_schedule_csv,
)


class TestMetropolis:
    def test_two_nodes(self):
        wm = metropolis_weights([(0, 1)], 2)
        assert np.allclose(wm.weights, 0.5)
        assert wm.zeta == 0.5

    def test_triangle_uniform(self):
        wm = metropolis_weights([(0, 1), (1, 2), (0, 2)], 3)
        assert np.allclose(wm.weights, 1 / 3)

    def test_star_rows_and_columns(self):
        # hub 0 with three leaves: off-diagonals 1/4, hub diagonal 1/4, leaf diagonal 3/4
        wm = metropolis_weights([(0, 1), (0, 2), (0, 3)], 4)
        a = wm.weights
        assert np.allclose(a[0], [0.25, 0.25, 0.25, 0.25])
        for leaf in (1, 2, 3):
            assert a[leaf, 0] == pytest.approx(0.25)
            assert a[leaf, leaf] == pytest.approx(0.75)
        assert np.allclose(a.sum(axis=0), 1, atol=1e-15)
        assert np.allclose(a.sum(axis=1), 1, atol=1e-15)

    def test_disconnected_rejected(self):
        with pytest.raises(ValueError):
            metropolis_weights([(0, 1)], 4)

    def test_single_node(self):
        wm = metropolis_weights([], 1)
        assert np.array_equal(wm.weights, [[1.0]])


class TestValidate:
    def test_identity_fails_connectivity_only(self):
        report = validate(WeightMatrix(np.eye(3), zeta=1.0))
        assert report.doubly_stochastic
        assert not report.strongly_connected
        assert not report.ok

    def test_uniform_two_agent_passes(self):
        report = validate(WeightMatrix(np.full((2, 2), 0.5), zeta=0.5))
        assert report.ok
        assert report.stochastic_violation <= 1e-15

    def test_row_stochastic_only_fails_column_sums(self):
        report = validate(WeightMatrix(np.array([[0.6, 0.4], [0.5, 0.5]]), zeta=0.4))
        assert not report.doubly_stochastic
        assert report.stochastic_violation == pytest.approx(0.1, abs=1e-15)
        assert report.strongly_connected


class TestRandomSchedule:
    def test_zero_probability_gives_ring(self):
        sched = random_connected_schedule(6, 20, 0.0, seed=3)
        for t in (1, 7, 20):
            a = sched.matrix(t).weights
            off = a.copy()
            np.fill_diagonal(off, 0.0)
            degrees = (off > 0).sum(axis=1)
            assert np.all(degrees == 2)          # a single cycle
            assert np.allclose(off[off > 0], 1 / 3)
            assert validate(sched.matrix(t)).ok

    def test_full_probability_gives_complete_graph(self):
        sched = random_connected_schedule(5, 4, 1.0, seed=0)
        for t in range(1, 5):
            assert np.allclose(sched.matrix(t).weights, 1 / 5)

    def test_long_schedule_every_round_valid(self):
        sched = random_connected_schedule(20, 1000, 0.3, seed=12)
        for t in range(1, 1001):
            wm = sched.matrix(t)
            report = validate(wm)
            assert report.ok, f"round {t}: {report}"
            assert wm.weights[wm.weights > 0].min() >= sched.zeta - 1e-15

    def test_seeded_reproducibility_per_round(self):
        a = random_connected_schedule(8, 10, 0.4, seed=5)
        b = random_connected_schedule(8, 10, 0.4, seed=5)
        # materialize in different orders; rounds are pure functions of (seed, t)
        for t in (9, 2, 5):
            assert np.array_equal(a.matrix(t).weights, b.matrix(t).weights)
        c = random_connected_schedule(8, 10, 0.4, seed=6)
        assert not np.array_equal(a.matrix(1).weights, c.matrix(1).weights)

    def test_round_range_checked(self):
        sched = random_connected_schedule(4, 5, 0.5, seed=1)
        with pytest.raises(ValueError):
            sched.matrix(0)
        with pytest.raises(ValueError):
            sched.matrix(6)


class TestMixingConstants:
    def test_product_is_one(self):
        mc = MixingConstants.from_zeta(0.1, 5)
        assert 0 < mc.rate < 1
        assert mc.coeff > 1
        assert mc.rate * mc.coeff == pytest.approx(1.0, rel=1e-15)
        assert mc.rate == 1 - 0.1 / 100


class TestTransitionProduct:
    def test_empty_range_is_identity(self):
        sched = random_connected_schedule(4, 6, 0.5, seed=2)
        counts = [2] * 6
        assert np.array_equal(transition_product(sched, counts, 3, 4), np.eye(4))

    def test_single_round_single_power(self):
        sched = random_connected_schedule(4, 6, 0.5, seed=2)
        counts = [1] * 6
        assert np.array_equal(transition_product(sched, counts, 2, 2), sched.matrix(2).weights)

    def test_matches_naive_multiplication(self):
        sched = random_connected_schedule(3, 2, 0.6, seed=4)
        counts = [2, 2]
        a1 = sched.matrix(1).weights
        a2 = sched.matrix(2).weights
        naive = a2 @ (a2 @ (a1 @ a1))
        assert np.allclose(transition_product(sched, counts, 2, 1), naive, atol=1e-14)

    def test_product_stays_doubly_stochastic(self):
        sched = random_connected_schedule(10, 40, 0.3, seed=8)
        counts = [3] * 40
        phi = transition_product(sched, counts, 40, 1)
        assert np.abs(phi.sum(axis=0) - 1).max() <= 1e-10
        assert np.abs(phi.sum(axis=1) - 1).max() <= 1e-10

    def test_index_errors(self):
        sched = random_connected_schedule(4, 6, 0.5, seed=2)
        with pytest.raises(ValueError):
            transition_product(sched, [1] * 6, 7, 1)
        with pytest.raises(ValueError):
            transition_product(sched, [1] * 6, 3, 0)
        with pytest.raises(ValueError):
            transition_product(sched, [0] * 6, 3, 1)


class TestCheckMixing:
    def test_complete_graph_exact_averaging(self):
        wm = metropolis_weights([(i, j) for i in range(5) for j in range(i + 1, 5)], 5)
        sched = constant_schedule(wm, 10)
        report = check_mixing(sched, [3] * 10, 4, 1)
        assert report.deviation <= 1e-15
        assert report.holds and report.shifted_holds
        assert report.margin > 0

    def test_ring_positive_margin(self):
        ring = metropolis_weights([(i, (i + 1) % 5) for i in range(5)], 5)
        sched = constant_schedule(ring, 20)
        report = check_mixing(sched, [2] * 20, 11, 1)   # t - s = 10
        assert report.ok
        assert report.margin > 0
        assert report.shifted_margin > 0

    def test_detector_fires_on_non_mixing_matrix(self):
        # doubly stochastic but disconnected: the product never approaches uniform
        sched = constant_schedule(WeightMatrix(np.eye(2), zeta=1.0), 50)
        report = check_mixing(sched, [2] * 50, 50, 1)
        assert report.deviation == pytest.approx(0.5)
        assert not report.holds

    def test_deviation_series_contracts_empirically(self):
        sched = random_connected_schedule(6, 30, 0.2, seed=9)
        series = mixing_deviation_series(sched, [2] * 30, 30)
        assert np.all(np.diff(series) <= 1e-12)
        assert series[-1] < series[0]

    def test_realized_zeta_tightens_the_certificate(self):
        # both the conservative schedule-wide bound and the realized minimum
        # entry give valid certificates; the latter is strictly tighter
        sched = random_connected_schedule(6, 12, 0.3, seed=10)
        counts = [2] * 12
        loose = check_mixing(sched, counts, 8, 1)
        tight = check_mixing(sched, counts, 8, 1, zeta=sched.exact_zeta(range(1, 9)))
        assert loose.ok and tight.ok
        assert tight.bound < loose.bound
        assert tight.deviation == loose.deviation


class TestScheduleCsv:
    def test_dump_shape(self, tmp_path):
        sched = random_connected_schedule(4, 3, 0.5, seed=14)
        path = tmp_path / "network.csv"
        write_schedule_csv(sched, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "round,i,j,weight"
        # every row references a nonzero weight
        for line in lines[1:]:
            t, i, j, w = line.split(",")
            assert float(w) == sched.matrix(int(t)).weights[int(i), int(j)]


class TestGraphScheduleContract:
    def test_builder_size_mismatch_rejected(self):
        bad = GraphSchedule(3, 2, lambda t: metropolis_weights([(0, 1)], 2), zeta=0.5)
        with pytest.raises(ValueError):
            bad.matrix(1)

    def test_exact_zeta_at_least_bound(self):
        sched = random_connected_schedule(6, 8, 0.4, seed=3)
        assert sched.exact_zeta() >= sched.zeta - 1e-15
