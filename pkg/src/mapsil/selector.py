"""Selector network scores and the four gating regularisers.

Each loss returns ``(value, grad)`` where ``grad`` has the shape of the score
array it was given. Scores are simplex rows of length M (number of modules).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .nncore import ForwardTrace, MlpParams, forward, softmax

CLAMP = 1e-12


@dataclass(frozen=True)
class SelectorLossWeights:
    share: float = 1.0
    explore: float = 0.1
    sparse: float = 0.5
    smooth: float = 1.0

    def __post_init__(self):
        for name in ("share", "explore", "sparse", "smooth"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"selector weight {name} must be finite and >= 0, got {v}")


# Weights used for the visually-distinct task set (manipulation-style tasks).
MANIPULATION_WEIGHTS = SelectorLossWeights(1.0, 0.1, 0.5, 1.0)
# Weights used for the dynamics-variation task sets.
DYNAMICS_WEIGHTS = SelectorLossWeights(1.0, 0.5, 0.001, 1.0)


def one_hot(task, n_tasks: int) -> np.ndarray:
    """One-hot task encoding; accepts a scalar index or an integer array."""
    t = np.asarray(task)
    if np.any(t < 0) or np.any(t >= n_tasks):
        raise ValueError(f"task index out of range [0, {n_tasks})")
    return np.eye(n_tasks)[t]


def selector_input(states: np.ndarray, tasks, n_tasks: int) -> np.ndarray:
    states = np.asarray(states, dtype=np.float64)
    enc = one_hot(tasks, n_tasks)
    if states.ndim == 1:
        return np.concatenate([states, enc])
    enc = np.broadcast_to(enc, (states.shape[0], n_tasks))
    return np.concatenate([states, enc], axis=1)


def selector_scores(w: MlpParams, state, task, n_tasks: int) -> tuple[np.ndarray, ForwardTrace]:
    """Softmax of the selector MLP applied to ``[state, one_hot(task)]``."""
    x = selector_input(state, task, n_tasks)
    logits, trace = forward(w, x)
    return softmax(logits), trace


def sharing_loss(scores_by_task) -> tuple[float, np.ndarray]:
    """Mean squared score difference over unordered task pairs.

    ``scores_by_task`` has shape ``(b, K, M)``: every state scored under every
    task encoding. Normalised by ``M * b * C(K, 2)``.
    """
    g = np.asarray(scores_by_task, dtype=np.float64)
    b, K, M = g.shape
    if K < 2:
        warnings.warn("sharing loss is zero for fewer than two tasks", RuntimeWarning, stacklevel=2)
        return 0.0, np.zeros_like(g)
    norm = M * b * (K * (K - 1) / 2)
    total = g.sum(axis=1, keepdims=True)
    # sum_{k1<k2} (g_k1 - g_k2)^2 == K * sum_k g_k^2 - (sum_k g_k)^2
    value = float(np.sum(K * np.sum(g * g, axis=1) - total[:, 0, :] ** 2)) / norm
    grad = 2.0 * (K * g - total) / norm
    return value, grad


def exploration_loss(scores) -> tuple[float, np.ndarray]:
    """(M / b^2) * sum_i (b/M - sum_samples g_i)^2 over one batch."""
    g = np.asarray(scores, dtype=np.float64)
    b, M = g.shape
    if b == 0:
        raise ValueError("exploration loss needs a non-empty batch")
    gap = b / M - g.sum(axis=0)
    value = float(M / b**2 * np.sum(gap * gap))
    grad = np.broadcast_to(-2.0 * M / b**2 * gap, g.shape).copy()
    return value, grad


def sparsity_loss(scores) -> tuple[float, np.ndarray]:
    """Entropy-like term shifted so its per-row maximum sits at the uniform row.

    -(1/(M b)) * sum g^(1/ln M) * ln g, with g clamped to >= 1e-12.
    """
    g = np.asarray(scores, dtype=np.float64)
    b, M = g.shape
    if M < 2:
        raise ValueError("sparsity loss needs at least two modules")
    p = 1.0 / math.log(M)
    clamped = g < CLAMP
    gc = np.maximum(g, CLAMP)
    log_g = np.log(gc)
    pow_g = gc**p
    value = float(-np.sum(pow_g * log_g) / (M * b))
    # d/dg [g^p ln g] = g^(p-1) * (p ln g + 1)
    grad = -(pow_g / gc) * (p * log_g + 1.0) / (M * b)
    grad[clamped] = 0.0
    return value, grad


def sparsity_per_sample(scores) -> np.ndarray:
    g = np.maximum(np.atleast_2d(np.asarray(scores, dtype=np.float64)), CLAMP)
    M = g.shape[1]
    return -np.sum(g ** (1.0 / math.log(M)) * np.log(g), axis=1) / M


def smoothness_loss(current, previous) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean squared change of scores between consecutive steps.

    ``current[j]`` and ``previous[j]`` are the scores at steps t and t-1 of the
    same trajectory. Returns the value and gradients for both arrays.
    """
    cur = np.asarray(current, dtype=np.float64)
    prev = np.asarray(previous, dtype=np.float64)
    if cur.shape != prev.shape:
        raise ValueError("current and previous score arrays differ in shape")
    if cur.shape[0] == 0:
        warnings.warn("smoothness loss has no consecutive pairs", RuntimeWarning, stacklevel=2)
        return 0.0, np.zeros_like(cur), np.zeros_like(prev)
    n, M = cur.shape
    diff = cur - prev
    value = float(np.sum(diff * diff) / (M * n))
    grad = 2.0 * diff / (M * n)
    return value, grad, -grad


@dataclass
class SelectorLossTerms:
    total: float
    share: float
    explore: float
    sparse: float
    smooth: float
    grad_by_task: np.ndarray
    grad_scores: np.ndarray
    grad_current: np.ndarray
    grad_previous: np.ndarray


def selector_loss(scores_by_task, scores, current, previous, weights: SelectorLossWeights) -> SelectorLossTerms:
    """Weighted sum of the four regularisers with per-input gradients.

    ``scores`` are the own-task rows ``(b, M)``; ``current``/``previous`` the
    consecutive-step pairs.
    """
    scores_by_task = np.asarray(scores_by_task, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    current = np.asarray(current, dtype=np.float64).reshape(-1, scores.shape[1])
    previous = np.asarray(previous, dtype=np.float64).reshape(-1, scores.shape[1])

    if scores_by_task.shape[1] >= 2:
        l_share, g_share = sharing_loss(scores_by_task)
    else:
        l_share, g_share = 0.0, np.zeros_like(scores_by_task)
    l_explore, g_explore = exploration_loss(scores)
    l_sparse, g_sparse = sparsity_loss(scores)
    if current.shape[0]:
        l_smooth, g_cur, g_prev = smoothness_loss(current, previous)
    else:
        l_smooth, g_cur, g_prev = 0.0, np.zeros_like(current), np.zeros_like(previous)

    w = weights
    total = w.share * l_share + w.explore * l_explore + w.sparse * l_sparse + w.smooth * l_smooth
    return SelectorLossTerms(
        total=total,
        share=l_share,
        explore=l_explore,
        sparse=l_sparse,
        smooth=l_smooth,
        grad_by_task=w.share * g_share,
        grad_scores=w.explore * g_explore + w.sparse * g_sparse,
        grad_current=w.smooth * g_cur,
        grad_previous=w.smooth * g_prev,
    )
