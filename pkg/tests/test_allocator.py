import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from incopt.allocator import (
    ScoreTable,
    best_response,
    brute_force,
    dual_value,
    lp_oracle,
    objective,
    solve_budget,
    spend,
)
from incopt.errors import InfeasibleBudgetError, NonFiniteError, NonIntegerCostsError, TooLargeError


def ab_table():
    return ScoreTable.from_curves(["A", "B"], [2.0, 0.1], [0.0, 0.0], [1.0, 5.0])


def random_table(rng, m=None, k=None, linear=False):
    m = m if m is not None else int(rng.integers(1, 11))
    k = k if k is not None else int(rng.integers(1, 5))
    c = np.sort(rng.choice(np.arange(0, 21), size=k, replace=False)).astype(float)
    if linear:
        return ScoreTable.from_curves(np.arange(m), rng.uniform(0.01, 3.0, m), rng.uniform(0, 5, m), c)
    return ScoreTable(np.arange(m), c, rng.uniform(0, 10, size=(m, k)))


class TestTable:
    def test_validation(self):
        with pytest.raises(ValueError):
            ScoreTable([0], [2.0, 1.0], [[1.0, 2.0]])
        with pytest.raises(ValueError):
            ScoreTable([0], [], np.zeros((1, 0)))
        with pytest.raises(NonFiniteError):
            ScoreTable([0], [1.0], [[np.nan]])


class TestBestResponse:
    def test_zero_lambda_takes_max(self):
        t = ScoreTable.from_curves(np.arange(4), [0.5, 1, 2, 3], [1, 0, 2, 0], [1.0, 2.0, 5.0])
        np.testing.assert_array_equal(best_response(t, 0.0), [2, 2, 2, 2])

    def test_threshold(self):
        t = ScoreTable.from_curves(np.arange(3), [0.5, 1.5, 3.0], [0, 0, 0], [1.0, 2.0, 5.0])
        np.testing.assert_array_equal(best_response(t, 1.0), [0, 2, 2])
        np.testing.assert_array_equal(best_response(t, 2.0), [0, 0, 2])

    def test_tie_goes_cheapest(self):
        t = ScoreTable.from_curves([0], [1.5], [2.0], [1.0, 2.0, 5.0])
        assert best_response(t, 1.5)[0] == 0

    @settings(max_examples=50)
    @given(st.integers(0, 2**31), st.floats(0.01, 100))
    def test_scale_equivariance(self, seed, a):
        t = random_table(np.random.default_rng(seed))
        scaled = ScoreTable(t.merchants, t.treatments, t.scores * a)
        for lam in (0.0, 0.3, 1.0, 4.0):
            np.testing.assert_array_equal(best_response(t, lam), best_response(scaled, lam * a))

    @settings(max_examples=50)
    @given(st.integers(0, 2**31))
    def test_spend_non_increasing(self, seed):
        t = random_table(np.random.default_rng(seed))
        spends = [spend(t, best_response(t, lam)) for lam in np.linspace(0, 12, 97)]
        assert all(a >= b for a, b in zip(spends, spends[1:]))


class TestSpend:
    def test_examples(self):
        t = ScoreTable.from_curves(np.arange(3), [1, 1, 1], [0, 0, 0], [0.0, 1.0, 5.0])
        assert spend(t, [0, 0, 0]) == 0
        assert spend(t, [1, 2, 2]) == 11


class TestSolve:
    def test_worked_example(self):
        t = ab_table()
        plan = solve_budget(t, 6.0)
        assert plan.treatments(t).tolist() == [5.0, 1.0]
        assert plan.total_objective == pytest.approx(10.1)
        assert plan.total_spend == 6.0
        # enumeration over {(1,1), (1,5), (5,1), (5,5)}
        best = max((a * 2.0 + b * 0.1, (a, b)) for a, b in itertools.product([1, 5], repeat=2) if a + b <= 6)
        assert best == (pytest.approx(10.1), (5, 1))

    def test_slack_budget(self):
        t = ScoreTable.from_curves(np.arange(3), [1, 2, 3], [0, 1, 0], [1.0, 2.0, 5.0])
        plan = solve_budget(t, 15.0)
        assert plan.lam == 0.0
        np.testing.assert_array_equal(plan.assignment, [2, 2, 2])
        assert plan.gap_bound == pytest.approx(0.0, abs=1e-9)

    def test_infeasible(self):
        t = ScoreTable.from_curves(np.arange(3), [1, 1, 1], [0, 0, 0], [1.0, 2.0, 5.0])
        with pytest.raises(InfeasibleBudgetError, match="infeasible budget"):
            solve_budget(t, 2.0)

    def test_nonfinite_budget(self):
        with pytest.raises(NonFiniteError):
            solve_budget(ab_table(), float("inf"))

    def test_empty_table(self):
        t = ScoreTable(np.zeros(0), [1.0, 2.0], np.zeros((0, 2)))
        plan = solve_budget(t, 0.0)
        assert plan.total_spend == 0.0 and plan.assignment.size == 0

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0, 1))
    def test_against_oracle(self, seed, frac):
        rng = np.random.default_rng(seed)
        t = random_table(rng)
        c = t.treatments
        budget = float(np.floor(t.size * (c[0] + frac * (c[-1] - c[0]))))
        plan = solve_budget(t, budget)
        assert plan.total_spend <= budget + 1e-9
        assert plan.lam >= 0 and plan.gap_bound >= 0
        _, opt = lp_oracle(t, budget)
        assert plan.total_objective >= opt - plan.gap_bound - 1e-9
        assert plan.total_objective <= opt + 1e-9
        assert dual_value(t, plan.lam, budget) >= opt - 1e-9

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0, 1))
    def test_dual_threshold_structure(self, seed, frac):
        rng = np.random.default_rng(seed)
        t = random_table(rng, linear=True)
        c = t.treatments
        plan = solve_budget(t, float(t.size * (c[0] + frac * (c[-1] - c[0]))))
        g = (t.scores[:, -1] - t.scores[:, 0]) / (c[-1] - c[0]) if c.size > 1 else np.zeros(t.size)
        a = plan.dual_assignment
        band = 1e-9 * max(1.0, plan.lam)  # g within round-off of lambda is a tie, resolved cheapest
        if c.size > 1:
            assert np.all(a[g > plan.lam + band] == c.size - 1)
            assert np.all(a[g < plan.lam - band] == 0)
            assert np.all(a[np.abs(g - plan.lam) <= band] == 0)


class TestOracle:
    def test_single_merchant(self):
        t = ScoreTable([0], [1.0, 2.0, 5.0], [[3.0, 7.0, 4.0]])
        a, obj = lp_oracle(t, 10.0)
        assert a.tolist() == [1] and obj == 7.0

    def test_worked_example(self):
        a, obj = lp_oracle(ab_table(), 6.0)
        assert a.tolist() == [1, 0] and obj == pytest.approx(10.1)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            t = random_table(rng, m=8, k=4)
            budget = float(rng.integers(int(8 * t.treatments[0]), int(8 * t.treatments[-1]) + 1))
            _, dp = lp_oracle(t, budget)
            assign, bf = brute_force(t, budget)
            assert dp == pytest.approx(bf, abs=1e-9)
            assert spend(t, assign) <= budget and objective(t, assign) == bf

    def test_decimal_costs(self):
        t = ScoreTable.from_curves(np.arange(2), [2.0, 0.1], [0, 0], [0.5, 2.5])
        a, obj = lp_oracle(t, 3.0)
        assert a.tolist() == [1, 0] and obj == pytest.approx(5.05)

    def test_non_integer_costs(self):
        t = ScoreTable([0], [1 / 3, 1.0], [[1.0, 2.0]])
        with pytest.raises(NonIntegerCostsError):
            lp_oracle(t, 1.0)

    def test_too_large(self):
        t = ScoreTable(np.arange(1000), [1.0, 2.0], np.ones((1000, 2)))
        with pytest.raises(TooLargeError):
            lp_oracle(t, 1e5)
