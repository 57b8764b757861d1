import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapsil.nncore import init_params, softmax
from mapsil.selector import (
    DYNAMICS_WEIGHTS,
    MANIPULATION_WEIGHTS,
    SelectorLossWeights,
    exploration_loss,
    one_hot,
    selector_loss,
    selector_scores,
    sharing_loss,
    smoothness_loss,
    sparsity_loss,
    sparsity_per_sample,
)


def brute_sharing(g):
    b, K, M = g.shape
    total = 0.0
    for s in range(b):
        for k1, k2 in itertools.combinations(range(K), 2):
            for i in range(M):
                total += (g[s, k1, i] - g[s, k2, i]) ** 2
    return total / (M * b * math.comb(K, 2))


def brute_exploration(g):
    b, M = g.shape
    return M / b**2 * sum((b / M - sum(g[n, i] for n in range(b))) ** 2 for i in range(M))


def brute_sparsity(g):
    b, M = g.shape
    return -sum(max(v, 1e-12) ** (1 / math.log(M)) * math.log(max(v, 1e-12)) for v in g.ravel()) / (M * b)


def random_simplex(rng, shape):
    return softmax(rng.normal(size=shape))


def fd_check(fn, x, step=1e-6):
    grad = fn(x)[1]
    fd = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        o = x[idx]
        x[idx] = o + step
        up = fn(x)[0]
        x[idx] = o - step
        down = fn(x)[0]
        x[idx] = o
        fd[idx] = (up - down) / (2 * step)
    return np.max(np.abs(grad - fd) / np.maximum(np.maximum(np.abs(grad), np.abs(fd)), 1e-7))


class TestScores:
    def test_zero_selector_uniform(self, rng):
        w = init_params([5 + 3, 8, 8, 4], 0)
        for a in w.arrays():
            a[...] = 0
        for k in range(3):
            g, _ = selector_scores(w, rng.normal(size=5), k, 3)
            np.testing.assert_allclose(g, 0.25, rtol=1e-15)

    def test_task_dependence_through_task_weights(self, rng):
        w = init_params([4 + 2, 6, 6, 3], 1)
        s = rng.normal(size=4)
        assert not np.allclose(selector_scores(w, s, 0, 2)[0], selector_scores(w, s, 1, 2)[0])
        w.weights[0][:, 4:] = 0.0
        assert np.array_equal(selector_scores(w, s, 0, 2)[0], selector_scores(w, s, 1, 2)[0])

    def test_rows_on_simplex(self, rng):
        w = init_params([5 + 2, 16, 16, 4], 3)
        g, _ = selector_scores(w, rng.normal(size=(50, 5)), 1, 2)
        np.testing.assert_allclose(g.sum(axis=1), 1.0, atol=1e-9)
        assert np.all((g > 0) & (g < 1))

    def test_dimension_mismatch(self):
        w = init_params([5 + 2, 4, 3], 0)
        with pytest.raises(ValueError):
            selector_scores(w, np.zeros(4), 0, 2)

    def test_one_hot(self):
        assert np.array_equal(one_hot(2, 4), [0, 0, 1, 0])
        with pytest.raises(ValueError):
            one_hot(4, 4)


class TestSharing:
    def test_identical_tasks_zero(self, rng):
        g = np.repeat(random_simplex(rng, (6, 1, 4)), 3, axis=1)
        assert sharing_loss(g)[0] == pytest.approx(0.0, abs=1e-15)

    def test_hand_value(self):
        g = np.array([[[1.0, 0.0], [0.0, 1.0]]])
        assert sharing_loss(g)[0] == pytest.approx(1.0, abs=1e-12)

    def test_matches_brute_force(self, rng):
        g = random_simplex(rng, (5, 4, 3))
        assert sharing_loss(g)[0] == pytest.approx(brute_sharing(g), rel=1e-12)

    def test_task_permutation_invariant(self, rng):
        g = random_simplex(rng, (5, 4, 3))
        assert sharing_loss(g[:, [2, 0, 3, 1]])[0] == pytest.approx(sharing_loss(g)[0], rel=1e-12)

    def test_zero_iff_identical(self, rng):
        g = np.repeat(random_simplex(rng, (4, 1, 3)), 2, axis=1)
        g[1, 1] = random_simplex(rng, 3)
        assert sharing_loss(g)[0] > 1e-12

    def test_single_task_flagged(self):
        with pytest.warns(RuntimeWarning):
            val, grad = sharing_loss(np.full((3, 1, 2), 0.5))
        assert val == 0.0 and np.all(grad == 0)


class TestExploration:
    def test_uniform_zero(self):
        assert exploration_loss(np.full((6, 3), 1 / 3))[0] == pytest.approx(0.0, abs=1e-15)

    def test_hand_value(self):
        assert exploration_loss(np.array([[1.0, 0.0], [1.0, 0.0]]))[0] == pytest.approx(1.0, abs=1e-12)

    def test_balanced_nonuniform_rows_zero(self):
        g = np.array([[0.9, 0.1, 0.0], [0.1, 0.0, 0.9], [0.0, 0.9, 0.1]])
        assert exploration_loss(g)[0] == pytest.approx(0.0, abs=1e-15)

    def test_matches_brute_and_row_permutation(self, rng):
        g = random_simplex(rng, (7, 4))
        assert exploration_loss(g)[0] == pytest.approx(brute_exploration(g), rel=1e-12)
        assert exploration_loss(g[rng.permutation(7)])[0] == pytest.approx(exploration_loss(g)[0], rel=1e-12)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            exploration_loss(np.zeros((0, 3)))


class TestSparsity:
    @pytest.mark.parametrize("M", [2, 3, 4, 8])
    def test_uniform_value(self, M):
        g = np.full((3, M), 1 / M)
        assert sparsity_loss(g)[0] == pytest.approx(math.log(M) / math.e, abs=1e-12)
        assert sparsity_loss(g)[0] == pytest.approx(brute_sparsity(g), abs=1e-14)

    def test_one_hot_near_zero(self):
        g = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        assert sparsity_loss(g)[0] == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("M", [2, 4, 8])
    def test_stationary_point(self, M):
        # per-element derivative g^(p-1) (p ln g + 1) vanishes at 1/M: check by finite differences
        p = 1 / math.log(M)
        f = lambda v: v**p * math.log(v)  # noqa: E731
        h = 1e-6
        assert (f(1 / M + h) - f(1 / M - h)) / (2 * h) == pytest.approx(0.0, abs=1e-8)
        _, grad = sparsity_loss(np.full((1, M), 1 / M))
        assert np.max(np.abs(grad)) < 1e-12

    @pytest.mark.parametrize("M", [2, 4, 8])
    def test_uniform_is_local_max(self, M, rng):
        base = float(sparsity_per_sample(np.full(M, 1 / M))[0])
        for i, j in itertools.permutations(range(M), 2):
            for delta in (0.05, 0.01):
                g = np.full(M, 1 / M)
                g[i] += delta
                g[j] -= delta
                assert sparsity_per_sample(g)[0] < base

    def test_clamped_entries_have_zero_gradient(self):
        _, grad = sparsity_loss(np.array([[1.0, 0.0]]))
        assert grad[0, 1] == 0.0

    def test_rejects_single_module(self):
        with pytest.raises(ValueError):
            sparsity_loss(np.ones((2, 1)))


class TestSmoothness:
    def test_constant_zero(self, rng):
        g = random_simplex(rng, (1, 3))
        cur = np.repeat(g, 5, axis=0)
        assert smoothness_loss(cur, cur)[0] == 0.0

    def test_hand_value(self):
        assert smoothness_loss([[0.0, 1.0]], [[1.0, 0.0]])[0] == pytest.approx(1.0, abs=1e-12)

    def test_direction_reversal(self, rng):
        a, b = random_simplex(rng, (4, 3)), random_simplex(rng, (4, 3))
        assert smoothness_loss(a, b)[0] == pytest.approx(smoothness_loss(b, a)[0], rel=1e-15)

    def test_empty_flagged(self):
        with pytest.warns(RuntimeWarning):
            assert smoothness_loss(np.zeros((0, 2)), np.zeros((0, 2)))[0] == 0.0


class TestGradients:
    """Finite differences on raw scores, step 1e-6, away from the clamp."""

    @pytest.mark.parametrize("seed", range(5))
    def test_all_four(self, seed):
        rng = np.random.default_rng(seed)
        g3 = rng.uniform(0.05, 1.0, size=(3, 3, 4))
        assert fd_check(sharing_loss, g3) < 1e-4
        g2 = rng.uniform(0.05, 1.0, size=(5, 4))
        assert fd_check(exploration_loss, g2) < 1e-4
        assert fd_check(sparsity_loss, g2) < 1e-4
        prev = rng.uniform(0.05, 1.0, size=(5, 4))
        assert fd_check(lambda c: smoothness_loss(c, prev)[:2], g2) < 1e-4
        assert fd_check(lambda p: (smoothness_loss(g2, p)[0], smoothness_loss(g2, p)[2]), prev) < 1e-4


class TestCombined:
    def _inputs(self, rng, b=6, K=3, M=4):
        by_task = random_simplex(rng, (b, K, M))
        own = by_task[np.arange(b), np.arange(b) % K]
        prev = random_simplex(rng, (3, M))
        return by_task, own, own[:3], prev

    def test_all_zero_weights(self, rng):
        terms = selector_loss(*self._inputs(rng), SelectorLossWeights(0, 0, 0, 0))
        assert terms.total == 0.0
        for g in (terms.grad_by_task, terms.grad_scores, terms.grad_current, terms.grad_previous):
            assert np.all(g == 0)

    def test_share_only(self, rng):
        args = self._inputs(rng)
        terms = selector_loss(*args, SelectorLossWeights(1, 0, 0, 0))
        assert terms.total == sharing_loss(args[0])[0]

    def test_recomposition(self, rng):
        by_task, own, cur, prev = self._inputs(rng)
        w = MANIPULATION_WEIGHTS
        terms = selector_loss(by_task, own, cur, prev, w)
        expected = (
            w.share * sharing_loss(by_task)[0]
            + w.explore * exploration_loss(own)[0]
            + w.sparse * sparsity_loss(own)[0]
            + w.smooth * smoothness_loss(cur, prev)[0]
        )
        assert terms.total == pytest.approx(expected, rel=1e-14)

    def test_weights_validated(self):
        with pytest.raises(ValueError):
            SelectorLossWeights(-1.0, 0, 0, 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 5), st.integers(2, 5))
def test_sharing_zero_iff_identical_property(seed, K, M):
    rng = np.random.default_rng(seed)
    g = np.repeat(random_simplex(rng, (3, 1, M)), K, axis=1)
    assert sharing_loss(g)[0] < 1e-12
    g[rng.integers(3), rng.integers(K)] = random_simplex(rng, M)
    same = all(np.allclose(g[s, 0], g[s, k], atol=1e-12) for s in range(3) for k in range(K))
    assert (sharing_loss(g)[0] < 1e-12) == same


GRID = np.round(np.arange(0, 1.0001, 0.05), 10)


def per_state_terms(rows):
    """One state scored under both tasks; the batch holds one sample per task."""
    by_task = rows[None, :, :]
    return sharing_loss(by_task)[0], exploration_loss(rows)[0]


def test_competition_grid_single_state():
    """Sharing, exploration and sparsity cannot all be satisfied at one state."""
    hits, pairs = 0, {"share+explore": 0, "share+sparse": 0, "explore+sparse": 0}
    for x0, x1 in itertools.product(GRID, GRID):
        rows = np.array([[x0, 1 - x0], [x1, 1 - x1]])
        share, explore = per_state_terms(rows)
        sparse = all(min(x, 1 - x) <= 0.05 + 1e-12 for x in (x0, x1))
        share0, explore0 = share < 1e-12, explore < 1e-12
        hits += share0 and explore0 and sparse
        pairs["share+explore"] += share0 and explore0
        pairs["share+sparse"] += share0 and sparse
        pairs["explore+sparse"] += explore0 and sparse
    assert hits == 0
    assert all(v > 0 for v in pairs.values()), pairs


def test_two_distinct_states_can_satisfy_all_three():
    # with different states the terms stop competing: each state may own a module
    by_task = np.array([[[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]]])
    own = by_task[[0, 1], [0, 1]]
    assert sharing_loss(by_task)[0] == 0.0
    assert exploration_loss(own)[0] == 0.0
    assert sparsity_loss(own)[0] < 1e-9


def test_published_weight_sets():
    assert MANIPULATION_WEIGHTS == SelectorLossWeights(1.0, 0.1, 0.5, 1.0)
    assert DYNAMICS_WEIGHTS == SelectorLossWeights(1.0, 0.5, 0.001, 1.0)
