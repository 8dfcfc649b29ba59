import csv
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from incopt.errors import (
    BadTreatmentPairError,
    EmptyInputError,
    InsufficientDataError,
    LengthMismatchError,
    SetMismatchError,
)
from incopt.evaluator import (
    equal_groups,
    quintile_report,
    rank_merchants,
    recovery_metrics,
    region_sensitivity,
    regression_metrics,
    uplift_gain,
    uplift_split,
    write_quintiles,
    write_regions,
    write_report,
)
from incopt.samples import CampaignTruth, Samples
from incopt.simulator import SimConfig, generate_campaign, run_experiment


class TestRegression:
    def test_example(self):
        r = regression_metrics([1, 2], [0, 4])
        assert (r.mae, r.mse, r.n) == (1.5, 2.5, 2)

    def test_exact(self):
        r = regression_metrics([3.0, 4.0], [3.0, 4.0])
        assert r.mae == 0 and r.mse == 0

    def test_errors(self):
        with pytest.raises(LengthMismatchError):
            regression_metrics([1], [1, 2])
        with pytest.raises(EmptyInputError):
            regression_metrics([], [])

    @given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=30),
           st.randoms())
    def test_permutation_invariant(self, pairs, rnd):
        a = regression_metrics(*zip(*pairs))
        shuffled = list(pairs)
        rnd.shuffle(shuffled)
        b = regression_metrics(*zip(*shuffled))
        assert b.mae == pytest.approx(a.mae, rel=1e-12, abs=1e-12)
        assert b.mse == pytest.approx(a.mse, rel=1e-12, abs=1e-12)
        assert a.mae >= 0 and a.mse >= 0


def two_cell_samples():
    # merchants 0..3 at c=10 with y 9, 11; merchants 4..7 at c=1 with y 3, 5
    return Samples(np.arange(8), [10, 10, 10, 10, 1, 1, 1, 1], [9, 11, 9, 11, 3, 5, 3, 5])


class TestUplift:
    def test_one_group(self):
        rep = uplift_gain(two_cell_samples(), {m: "all" for m in range(8)}, 10, 1)
        (g,) = rep.groups
        assert g.u == pytest.approx(6.0) and (g.n_high, g.n_low) == (4, 4)
        assert g.se == pytest.approx(np.sqrt(4 / 3 / 4 + 4 / 3 / 4))

    def test_empty_cell_flagged(self):
        rep = uplift_gain(two_cell_samples(), {0: "a", 1: "a", 4: "b"}, 10, 1)
        a, b = rep.groups
        assert a.u is None and a.n_low == 0 and not a.defined
        assert b.u is None and b.n_high == 0

    def test_bad_pair(self):
        s = two_cell_samples()
        with pytest.raises(BadTreatmentPairError):
            uplift_gain(s, {0: 1}, 1, 10)
        with pytest.raises(BadTreatmentPairError):
            uplift_gain(s, {0: 1}, 20, 1)

    @given(st.floats(-100, 100))
    def test_shift_invariant(self, k):
        s = two_cell_samples()
        grouping = {m: m % 2 for m in range(8)}
        a = uplift_gain(s, grouping, 10, 1)
        b = uplift_gain(s.with_objective(s.objective + k), grouping, 10, 1)
        for x, y in zip(a.groups, b.groups):
            assert y.u == pytest.approx(x.u, abs=1e-9)

    def test_each_sample_used_once(self):
        s = two_cell_samples()
        rep = uplift_gain(s, {m: m % 3 for m in range(8)}, 10, 1)
        assert sum(g.n_high + g.n_low for g in rep.groups) == len(s)


class TestQuintiles:
    def test_partition_arithmetic(self):
        assert equal_groups(10, 5) == [2] * 5
        assert equal_groups(12, 5) == [3, 3, 2, 2, 2]

    @given(st.integers(0, 500), st.integers(1, 12))
    def test_partition_sizes(self, n, k):
        sizes = equal_groups(n, k)
        assert sum(sizes) == n and max(sizes) - min(sizes) <= 1
        assert sizes == sorted(sizes, reverse=True)

    def test_ranking_ties_by_id(self):
        assert rank_merchants({3: 1.0, 1: 2.0, 2: 1.0, 0: 1.0}) == [1, 0, 2, 3]

    def test_ten_merchants(self):
        grads = {m: float(m // 2) for m in range(10)}
        s = Samples(np.repeat(np.arange(10), 2), np.tile([5.0, 1.0], 10), np.arange(20, dtype=float))
        rep = quintile_report(grads, s, 5, 1)
        assert [g.n_high for g in rep.groups] == [2] * 5
        # most sensitive group holds merchants 8 and 9
        assert rep.groups[0].mean_high == pytest.approx(np.mean([16, 18]))

    def test_insufficient(self):
        with pytest.raises(InsufficientDataError):
            quintile_report({0: 1.0}, Samples([0, 0], [5, 1], [1, 1]), 5, 1)

    def test_perfect_gradients_noise_free(self):
        cfg = SimConfig(merchants=2000, customers=3000, regions=4, noise_sd=0.0)
        graph, truth = generate_campaign(cfg, 0)
        s = run_experiment(graph, truth, cfg, 1)
        grads = dict(zip(truth.merchants.tolist(), truth.true_gradient.tolist()))
        # remove the intercept so each cell mean reflects the gradients alone
        p = truth.true_intercept[s.merchant]
        s = s.with_objective(s.objective - p)
        u = quintile_report(grads, s, 20, 1).uplifts
        assert all(a > b for a, b in zip(u, u[1:]))

    def test_equal_gradients_id_order(self):
        s = Samples(np.repeat(np.arange(10), 2), np.tile([5.0, 1.0], 10), np.ones(20))
        rep = quintile_report({m: 1.0 for m in range(10)}, s, 5, 1)
        assert all(g.u == 0 for g in rep.groups)


class TestSplit:
    def test_planted_separation(self):
        cfg = SimConfig(merchants=4000, customers=8000, regions=4, noise_sd=2.0)
        graph, truth = generate_campaign(cfg, 3)
        s = run_experiment(graph, truth, cfg, 4)
        grads = dict(zip(truth.merchants.tolist(), truth.true_gradient.tolist()))
        split = uplift_split(grads, s, 20, 1)
        order = rank_merchants(grads)
        half = len(order) // 2
        g = truth.true_gradient
        expected = (g[order[:half]].mean() - g[order[half:]].mean()) * 19
        assert split.diff > 0 and split.ci_low > 0
        # the intercept differs between halves too, so allow it inside a wide band around the slope term
        assert split.ci_low - 2 * (split.ci_high - split.ci_low) < expected < split.ci_high + 2 * (
            split.ci_high - split.ci_low) + 5


class TestRegions:
    def test_ratio(self):
        s = Samples([0, 1, 2, 3], [5, 5, 1, 1], [8, 10, 2, 4])
        rep = region_sensitivity(s, {0: "r", 1: "r", 2: "r", 3: "r"}, 5, 1)
        assert rep.ratios() == {"r": pytest.approx(3.0)}

    def test_missing_region(self):
        s = Samples([0, 1, 2], [5, 1, 5], [8, 2, 4])
        rep = region_sensitivity(s, {0: "a", 1: "a", 2: "b"}, 5, 1)
        assert list(rep.ratios()) == ["a"] and rep.missing == ["b"]

    def test_same_treatment(self):
        with pytest.raises(BadTreatmentPairError):
            region_sensitivity(Samples([0], [1], [1]), {0: "a"}, 1, 1)

    def test_planted_bases(self):
        cfg = SimConfig(merchants=3000, customers=6000, regions=2, gradient_bases=(2.0, 0.2),
                        intercept_bases=(2.0, 2.0))
        graph, truth = generate_campaign(cfg, 0)
        s = run_experiment(graph, truth, cfg, 1)
        regions = {m: graph.regions[m] for m in range(cfg.merchants)}
        r = region_sensitivity(s, regions, 20, 1).ratios()
        assert r["R0"] > r["R1"] > 0


class TestRecovery:
    def test_identity_and_negation(self):
        truth = CampaignTruth(np.arange(20), np.linspace(0.1, 3, 20), np.zeros(20))
        same = {m: float(g) for m, g in zip(truth.merchants, truth.true_gradient)}
        assert recovery_metrics(same, truth).spearman == pytest.approx(1.0)
        neg = {m: -g for m, g in same.items()}
        assert recovery_metrics(neg, truth).spearman == pytest.approx(-1.0)
        rep = recovery_metrics(same, truth)
        assert len(rep.deciles) == 10 and rep.deciles[0]["mean_true"] > rep.deciles[-1]["mean_true"]

    @given(st.sampled_from([np.exp, np.log1p, lambda x: x ** 3, np.sqrt]))
    def test_monotone_transform(self, f):
        g = np.linspace(0.1, 3, 50)
        truth = CampaignTruth(np.arange(50), g, np.zeros(50))
        inferred = {m: float(v) for m, v in enumerate(f(g))}
        assert recovery_metrics(inferred, truth).spearman == pytest.approx(1.0)

    def test_set_mismatch(self):
        truth = CampaignTruth(np.arange(3), np.ones(3), np.zeros(3))
        with pytest.raises(SetMismatchError):
            recovery_metrics({0: 1.0, 1: 2.0}, truth)


def test_writers(tmp_path):
    s = two_cell_samples()
    q = uplift_gain(s, {m: "g" for m in range(8)}, 10, 1)
    write_quintiles(q, tmp_path / "q.csv")
    rows = list(csv.reader(open(tmp_path / "q.csv")))
    assert rows[0] == ["group", "u", "n_high", "n_low"] and float(rows[1][1]) == pytest.approx(6.0)
    reg = region_sensitivity(s, {m: "r" for m in range(8)}, 10, 1)
    write_regions(reg, tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["region", "ratio", "n_hi", "n_lo"] and float(rows[1][1]) == pytest.approx(2.5)
    write_report({"b": 1, "a": q.to_dict()}, tmp_path / "report.json")
    assert json.loads((tmp_path / "report.json").read_text())["a"]["groups"][0]["u"] == pytest.approx(6.0)
