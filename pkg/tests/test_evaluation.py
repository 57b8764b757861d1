import math

import numpy as np
import pytest

from conftest import toy_dataset
from mapsil.envs import ExpertPolicy, get_suite
from mapsil.evaluation import (
    ComparisonTable,
    UsageReport,
    ablate,
    ablated_config,
    compare,
    effective_count,
    evaluation_starts,
    module_usage,
    rollout,
    rollout_usage,
    single_module_rollout,
    success_rate,
    train_method,
)
from mapsil.policy import init_maps
from mapsil.trainer import TrainConfig

TINY = TrainConfig(
    n_modules=2, feature_dim=4, module_hidden=(6,), selector_hidden=(6,), baseline_hidden=(6,), batch_size=8, epochs=1
)


class FixedGate:
    """Stub model whose gate depends only on the task."""

    kind = "maps"

    def __init__(self, rows):
        self.rows = np.asarray(rows, dtype=float)
        self.M = self.rows.shape[1]

    def act(self, states, task, scores=None):
        n = len(np.atleast_2d(states))
        return np.zeros((n, 2)), np.tile(self.rows[task], (n, 1))


class ZeroPolicy:
    def act(self, states, task, scores=None):
        return np.zeros((len(np.atleast_2d(states)), 2)), None


class TestEffectiveCount:
    def test_hand_values(self):
        np.testing.assert_allclose(effective_count([[0.25] * 4, [1, 0, 0, 0], [0.5, 0.5, 0, 0]]), [4, 1, 2])

    def test_matches_entropy_formula(self, rng):
        p = rng.dirichlet(np.ones(5))
        h = -sum(x * math.log(x) for x in p)
        assert effective_count(p)[0] == pytest.approx(math.exp(h), rel=1e-13)


class TestUsageReport:
    def report(self):
        gate = np.array([[0.45, 0.45, 0.1, 0.0], [0.45, 0.05, 0.0, 0.5], [0.5, 0.0, 0.5, 0.0]])
        return UsageReport(gate, gate, ["a", "b", "c"])

    def test_shared_and_specific(self):
        r = self.report()
        assert r.shared_modules(0.2) == [0]
        assert r.specific_modules(3.0) == [(1, 0), (2, 2), (3, 1)]

    def test_aggregate(self):
        r = self.report()
        mean = r.mean_gate.mean(axis=0)
        assert r.aggregate_effective_count == pytest.approx(math.exp(-np.sum(mean * np.log(mean))), rel=1e-13)
        collapsed = UsageReport(np.tile([0, 1.0, 0], (3, 1)), np.zeros((3, 3)))
        assert collapsed.aggregate_effective_count == pytest.approx(1.0)

    def test_overlap(self):
        same = UsageReport(np.tile([0.5, 0.5], (3, 1)), np.zeros((3, 2)))
        assert same.pairwise_overlap() == pytest.approx(1.0)
        disjoint = UsageReport(np.eye(2), np.zeros((2, 2)))
        assert disjoint.pairwise_overlap() == 0.0

    def test_from_dataset(self, rng):
        ds = toy_dataset(rng, n_tasks=2, state_dim=5)
        rows = [[0.7, 0.2, 0.1], [0.1, 0.1, 0.8]]
        r = module_usage(FixedGate(rows), ds, ["x", "y"])
        np.testing.assert_allclose(r.mean_gate, rows)
        np.testing.assert_allclose(r.argmax_fraction, [[1, 0, 0], [0, 0, 1]])

    def test_from_rollouts(self):
        suite = get_suite("morph")[:2]
        model = FixedGate([[0.6, 0.4], [0.3, 0.7]])
        r = rollout_usage(model, suite, n_starts=3, seed=0)
        np.testing.assert_allclose(r.mean_gate, model.rows)
        assert r.task_names == ["nominal", "mass_up"]


class TestUsageExtremes:
    def test_uniform_selector(self, rng):
        m = init_maps(5, 2, 3, 4, 4, (4,), (4,), seed=0)
        for a in m.selector.arrays():
            a[...] = 0
        r = module_usage(m, toy_dataset(rng, n_tasks=3, state_dim=5))
        np.testing.assert_allclose(r.mean_gate, 0.25, rtol=1e-15)
        np.testing.assert_allclose(r.effective_counts, 4.0, rtol=1e-12)

    def test_one_hot_per_task(self, rng):
        r = module_usage(FixedGate(np.eye(3)), toy_dataset(rng, n_tasks=3, state_dim=5))
        np.testing.assert_allclose(r.effective_counts, 1.0)
        np.testing.assert_allclose(r.mean_gate.sum(axis=1), 1.0)


class TestRollouts:
    def test_expert_from_goal_succeeds_at_once(self):
        spec = get_suite("morph")[0]
        r = rollout(ExpertPolicy([spec]), spec, spec.goal)
        assert r.success and len(r.states) == 1

    def test_zero_model_fails_without_moving(self):
        spec = get_suite("morph")[0]
        r = rollout(ZeroPolicy(), spec, [-0.4, -0.4])
        assert not r.success and len(r.states) == spec.horizon
        assert np.array_equal(r.final_position, [-0.4, -0.4])

    def test_deterministic(self):
        m = init_maps(5, 2, 4, 3, 4, (4,), (4,), seed=1)
        spec = get_suite("subbehavior")[2]
        a, b = rollout(m, spec, [-0.7, 0.1], 20), rollout(m, spec, [-0.7, 0.1], 20)
        assert a.states.tobytes() == b.states.tobytes() and a.scores.tobytes() == b.scores.tobytes()

    def test_rates_reproducible(self):
        m = init_maps(5, 2, 5, 2, 4, (4,), (4,), seed=1)
        suite = get_suite("morph")
        assert np.array_equal(success_rate(m, suite, 10, 3), success_rate(m, suite, 10, 3))

    def test_perfect_expert_every_suite(self):
        for name in ("scaled_dynamics", "morph", "subbehavior"):
            suite = get_suite(name)
            assert np.all(success_rate(ExpertPolicy(suite), suite, 100, 0) == 1.0)

    def test_expert_success_and_starts(self):
        suite = get_suite("scaled_dynamics")
        rates = success_rate(ExpertPolicy(suite), suite, n_starts=20, seed=1)
        assert rates.shape == (5,) and np.all(rates >= 0.95)
        assert np.all(success_rate(ZeroPolicy(), suite, n_starts=5, seed=1) == 0.0)

    def test_starts_shared_across_methods(self):
        suite = get_suite("subbehavior")
        a, b = evaluation_starts(suite, 4, 3), evaluation_starts(suite, 4, 3)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert not np.array_equal(a[0], a[1])

    def test_forced_module(self):
        m = init_maps(5, 2, 4, 3, 4, (4,), (4,), seed=0)
        spec = get_suite("subbehavior")[0]
        r = single_module_rollout(m, spec, 2, [-0.7, 0.0], horizon=5)
        assert np.all(r.scores == [0, 0, 1])
        free = rollout(m, spec, [-0.7, 0.0], horizon=5)
        assert np.allclose(free.scores.sum(axis=1), 1.0) and not np.all(free.scores == [0, 0, 1])
        with pytest.raises(ValueError):
            single_module_rollout(m, spec, 3, [0, 0])


class TestComparison:
    def table(self):
        t = ComparisonTable()
        for seed, (m, s, x) in enumerate([(0.9, 0.8, 0.8), (0.7, 0.8, 0.8)]):
            t.add("maps", "sub", 0, 20, seed, m)
            t.add("single", "sub", 0, 20, seed, s)
            t.add("mt", "sub", 0, 20, seed, x)
        for seed in range(2):
            t.add("maps", "sub", 1, 20, seed, 1.0)
            t.add("single", "sub", 1, 20, seed, 0.5)
            t.add("mt", "sub", 1, 20, seed, 0.2)
        return t

    def test_summary(self):
        rows = {(r["method"], r["task"]): r for r in self.table().summary()}
        assert rows[("maps", 0)]["mean_success"] == pytest.approx(0.8)
        assert rows[("maps", 0)]["std_success"] == pytest.approx(0.1)
        assert rows[("single", 1)]["n_seeds"] == 2

    def test_tally_with_ties(self):
        tally = {r["method"]: r for r in self.table().tally("single")}
        assert (tally["maps"]["better"], tally["maps"]["worse"], tally["maps"]["ties"]) == (1, 0, 1)
        assert (tally["mt"]["better"], tally["mt"]["worse"], tally["mt"]["ties"]) == (0, 1, 1)
        assert tally["maps"]["better_frac"] == 0.5 and "single" not in tally

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            ComparisonTable().add("maps", "s", 0, 1, 0, 1.5)

    def test_compare_runs_every_cell(self):
        table = compare(TINY, ["morph"], [2], [0, 1], methods=("maps", "single"), n_starts=2)
        assert len(table.records) == 2 * 5 * 2
        again = compare(TINY, ["morph"], [2], [0, 1], methods=("maps",), n_starts=2)
        assert again.records == [r for r in table.records if r["method"] == "maps"]
        for row in table.tally():
            assert row["better"] + row["worse"] + row["ties"] == row["cells"]
        assert table.cells()[0] == ("morph", 0, 2)
        assert {r["method"] for r in table.tally()} == {"maps"}

    def test_unknown_method(self, rng):
        with pytest.raises(ValueError):
            train_method("dagger", TINY, toy_dataset(rng))


class TestAblation:
    @pytest.mark.parametrize("term,field", [("share", "lambda_share"), ("smooth", "lambda_smooth")])
    def test_config(self, term, field):
        cfg = ablated_config(TrainConfig(), term)
        assert getattr(cfg, field) == 0.0
        others = {"lambda_share", "lambda_explore", "lambda_sparse", "lambda_smooth"} - {field}
        assert all(getattr(cfg, f) == getattr(TrainConfig(), f) for f in others)
        with pytest.raises(ValueError):
            ablated_config(TrainConfig(), "imitate")

    def test_ablate_small(self, rng):
        ds = toy_dataset(rng, n_tasks=2)
        res = ablate(TINY, ds, "explore")
        assert res.config.lambda_explore == 0.0 and res.success is None
        assert res.usage.mean_gate.shape == (2, 2)
