import numpy as np
import pytest

from audiokv.budget import (
    AllocationMode,
    BudgetPlan,
    allocate,
    effective_retention_ratio,
    load_plan,
    pyramid_schedule,
    resolve_base_tokens,
    save_plan,
)
from audiokv.errors import BudgetTooSmallError
from audiokv.heads import HeadScoreMatrix


def scores_of(values):
    return HeadScoreMatrix(scores=np.asarray(values, dtype=np.float64), num_samples=1)


class TestAllocate:
    def test_combined_exact_proportional_split(self):
        plan = allocate(scores_of([[0.2, 0.3, 0.5]]), 100, 0, 0, AllocationMode.COMBINED)
        assert plan.capacities.tolist() == [[20, 30, 50]]

    def test_uniform_under_equal_scores_proportional_floor(self):
        plan = allocate(
            scores_of([[1.0, 1.0, 1.0, 1.0]]), 120, 0, 0, AllocationMode.PROPORTIONAL_FLOOR
        )
        assert plan.capacities.tolist() == [[30, 30, 30, 30]]

    def test_combined_includes_window_and_base(self):
        plan = allocate(scores_of([[1.0, 3.0]]), 100, 10, 5, AllocationMode.COMBINED)
        # score budget = 100 - 2*15 = 70 -> floors [17, 52] + leftover 1 to head 1
        assert plan.capacities.tolist() == [[32, 68]]
        assert plan.total == 100

    def test_zero_scores_fall_back_to_uniform(self):
        plan = allocate(scores_of([[0.0, 0.0]]), 50, 0, 0, AllocationMode.COMBINED)
        assert plan.capacities.tolist() == [[25, 25]]

    def test_budget_too_small_for_window(self):
        with pytest.raises(BudgetTooSmallError):
            allocate(scores_of([[1.0, 1.0]]), 10, 8, 0, AllocationMode.COMBINED)

    def test_proportional_floor_applies_window(self):
        plan = allocate(
            scores_of([[0.0, 1.0]]), 100, 12, 0, AllocationMode.PROPORTIONAL_FLOOR
        )
        assert plan.capacities[0, 0] == 12  # floored up to the window
        assert plan.capacities[0, 1] == 100

    def test_leftover_goes_to_highest_scores(self):
        plan = allocate(scores_of([[0.5, 0.3, 0.2]]), 11, 0, 0, AllocationMode.PROPORTIONAL_FLOOR)
        # floors [5, 3, 2] leave 1 unit -> highest score gets it
        assert plan.capacities.tolist() == [[6, 3, 2]]

    def test_pyramid_mode_splits_heads_uniformly(self):
        plan = allocate(scores_of([[1.0, 1.0], [1.0, 1.0]]), 40, 0, 0, AllocationMode.PYRAMID)
        assert plan.capacities.sum() == 40
        layer_totals = plan.capacities.sum(axis=1)
        assert layer_totals[0] >= layer_totals[1]


class TestAllocationLaws:
    MODES = (AllocationMode.COMBINED, AllocationMode.PROPORTIONAL_FLOOR)

    def test_budget_conservation(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            layers, heads = int(rng.integers(1, 4)), int(rng.integers(1, 9))
            n = layers * heads
            budget = int(rng.integers(n, 40 * n))
            matrix = scores_of(rng.random((layers, heads)))
            combined = allocate(matrix, budget, 0, 0, AllocationMode.COMBINED)
            assert combined.total == budget
            floor = allocate(matrix, budget, 0, 0, AllocationMode.PROPORTIONAL_FLOOR)
            assert floor.total == budget

    def test_score_monotonicity(self):
        rng = np.random.default_rng(2)
        for mode in self.MODES:
            for _ in range(200):
                matrix = scores_of(rng.random((2, 4)))
                plan = allocate(matrix, int(rng.integers(8, 400)), 0, 0, mode)
                flat_s = matrix.scores.reshape(-1)
                flat_c = plan.capacities.reshape(-1)
                for i in range(8):
                    for j in range(8):
                        if flat_s[i] > flat_s[j]:
                            assert flat_c[i] >= flat_c[j]

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        for mode in self.MODES:
            for _ in range(200):
                matrix = scores_of(rng.random((2, 3)))
                window = int(rng.integers(0, 3))
                budget = int(rng.integers(6 * (window + 1), 300))
                plan = allocate(matrix, budget, window, 0, mode)
                # powers of two keep the rescaling exact in floating point
                c = float(2.0 ** rng.integers(-3, 9))
                scaled = scores_of(matrix.scores * c)
                again = allocate(scaled, budget, window, 0, mode)
                assert np.array_equal(plan.capacities, again.capacities)

    def test_window_floor(self):
        rng = np.random.default_rng(4)
        for mode in self.MODES:
            for _ in range(100):
                matrix = scores_of(rng.random((2, 3)))
                window = int(rng.integers(1, 8))
                budget = int(rng.integers(6 * window * 3, 1000))
                plan = allocate(matrix, budget, window, 0, mode)
                assert np.all(plan.capacities >= window)


class TestPyramidSchedule:
    def test_no_decay_is_uniform(self):
        assert pyramid_schedule(4, 10, 1.0) == [10, 10, 10, 10]

    def test_two_layer_renormalized_split(self):
        assert pyramid_schedule(2, 10, 0.5) == [13, 7]

    def test_single_layer(self):
        assert pyramid_schedule(1, 17, 0.3) == [17]

    def test_total_always_exact(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            layers = int(rng.integers(1, 12))
            per_layer = int(rng.integers(1, 50))
            decay = float(rng.uniform(0.05, 1.0))
            totals = pyramid_schedule(layers, per_layer, decay)
            assert sum(totals) == layers * per_layer
            assert all(a >= b for a, b in zip(totals, totals[1:]))


class TestEffectiveRetentionRatio:
    def test_full_cache(self):
        plan = BudgetPlan(np.full((2, 2), 50, dtype=np.int64), 0, 0, 200, "uniform")
        assert effective_retention_ratio(plan, 50) == 1.0

    def test_single_head_definition(self):
        plan = BudgetPlan(np.array([[40]], dtype=np.int64), 0, 0, 40, "uniform")
        assert effective_retention_ratio(plan, 100) == pytest.approx(0.4)

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(6)
        caps = rng.integers(0, 120, size=(3, 4))
        plan = BudgetPlan(caps.astype(np.int64), 0, 0, int(caps.sum()), "uniform")
        context = 80
        expected = sum(min(int(c), context) for c in caps.reshape(-1)) / (12 * context)
        assert effective_retention_ratio(plan, context) == pytest.approx(expected)


class TestPlanIo:
    def test_roundtrip(self, tmp_path):
        plan = allocate(scores_of([[0.1, 0.9]]), 64, 4, 2, AllocationMode.COMBINED)
        path = tmp_path / "plan.json"
        save_plan(plan, path)
        loaded = load_plan(path)
        assert np.array_equal(loaded.capacities, plan.capacities)
        assert (loaded.window, loaded.base, loaded.global_budget, loaded.mode) == (
            4,
            2,
            64,
            "combined",
        )

    def test_resolve_base_tokens(self):
        assert resolve_base_tokens(budget=800, num_heads_total=8, base_fraction=0.5) == 50
