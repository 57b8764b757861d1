"""Modular policy: task-blind proto-policy modules gated by a task-aware selector.

The action for state s and task k is

    a = head(concat(g_1 * mu_1(s), ..., g_M * mu_M(s))),   g = softmax(selector([s, onehot(k)]))
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import TransitionBatch
from .nncore import ForwardTrace, MlpParams, backward, forward, init_params, softmax, softmax_backward
from .selector import SelectorLossWeights, selector_input, selector_loss


@dataclass(frozen=True)
class TotalLossWeights:
    imitate: float = 0.75
    selector: float = 0.25

    def __post_init__(self):
        for name in ("imitate", "selector"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} weight must be finite and >= 0, got {v}")


@dataclass
class MapsModel:
    modules: list[MlpParams]
    selector: MlpParams
    head: MlpParams
    n_tasks: int

    kind = "maps"

    def __post_init__(self):
        if len(self.modules) < 2:
            raise ValueError("need at least two modules")
        d = self.modules[0].n_out
        s = self.modules[0].n_in
        if any(m.n_out != d or m.n_in != s for m in self.modules):
            raise ValueError("all modules must share input and feature sizes")
        if self.selector.n_in != s + self.n_tasks or self.selector.n_out != len(self.modules):
            raise ValueError("selector must map state+task encoding to one score per module")
        if self.head.n_in != len(self.modules) * d:
            raise ValueError("head input must equal M * feature size")

    @property
    def M(self) -> int:
        return len(self.modules)

    @property
    def d(self) -> int:
        return self.modules[0].n_out

    @property
    def state_dim(self) -> int:
        return self.modules[0].n_in

    @property
    def action_dim(self) -> int:
        return self.head.n_out

    def param_list(self) -> list[MlpParams]:
        return [*self.modules, self.selector, self.head]

    def copy(self) -> "MapsModel":
        return MapsModel([m.copy() for m in self.modules], self.selector.copy(), self.head.copy(), self.n_tasks)

    def act(self, states, task, scores=None):
        """Actions and gate scores for a batch of states under one task."""
        out = maps_forward(self, np.atleast_2d(states), task, scores)
        return out.actions, out.scores


def init_maps(
    state_dim: int,
    action_dim: int,
    n_tasks: int,
    n_modules: int = 5,
    feature_dim: int = 128,
    module_hidden=(128, 128, 128),
    selector_hidden=(128, 128),
    head_hidden=(),
    seed: int = 0,
) -> MapsModel:
    if n_modules < 2:
        raise ValueError("the modular policy needs at least two modules")
    seeds = np.random.SeedSequence(seed).generate_state(n_modules + 2)
    modules = [
        init_params([state_dim, *module_hidden, feature_dim], int(seeds[i])) for i in range(n_modules)
    ]
    selector = init_params([state_dim + n_tasks, *selector_hidden, n_modules], int(seeds[n_modules]))
    head = init_params([n_modules * feature_dim, *head_hidden, action_dim], int(seeds[n_modules + 1]))
    return MapsModel(modules, selector, head, n_tasks)


@dataclass
class MapsForward:
    actions: np.ndarray
    scores: np.ndarray
    features: list[np.ndarray]
    module_traces: list[ForwardTrace]
    selector_trace: ForwardTrace | None
    head_trace: ForwardTrace


def _gate(features: list[np.ndarray], scores: np.ndarray) -> np.ndarray:
    return np.concatenate([scores[:, i : i + 1] * f for i, f in enumerate(features)], axis=1)


def maps_forward(model: MapsModel, states, tasks, scores=None) -> MapsForward:
    """Batched forward pass. ``scores`` overrides the selector when given."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != model.state_dim:
        raise ValueError(f"states of shape {states.shape} do not match state_dim {model.state_dim}")
    feats, mtraces = [], []
    for m in model.modules:
        f, t = forward(m, states)
        feats.append(f)
        mtraces.append(t)
    strace = None
    if scores is None:
        logits, strace = forward(model.selector, selector_input(states, tasks, model.n_tasks))
        scores = softmax(logits)
    else:
        scores = np.broadcast_to(np.asarray(scores, dtype=np.float64), (len(states), model.M))
    actions, htrace = forward(model.head, _gate(feats, scores))
    return MapsForward(actions, scores, feats, mtraces, strace, htrace)


def policy_forward(model: MapsModel, state, task: int, scores=None):
    """Single-state forward: returns (action, scores, trace)."""
    out = maps_forward(model, np.asarray(state, dtype=np.float64)[None, :], task, scores)
    return out.actions[0], out.scores[0], out


@dataclass
class LossReport:
    total: float
    bc: float
    share: float = 0.0
    explore: float = 0.0
    sparse: float = 0.0
    smooth: float = 0.0

    def as_row(self) -> dict:
        return {
            "L_total": self.total,
            "L_BC": self.bc,
            "L_share": self.share,
            "L_explore": self.explore,
            "L_sparse": self.sparse,
            "L_smooth": self.smooth,
        }


def _check_batch(model: MapsModel, batch: TransitionBatch):
    if len(batch) == 0:
        raise ValueError("empty batch")
    if not np.all(np.isfinite(batch.actions)):
        raise ValueError("non-finite expert actions")
    if batch.actions.shape[1] != model.action_dim:
        raise ValueError("expert action dimension does not match the model")


def total_loss(
    model: MapsModel,
    batch: TransitionBatch,
    total_weights: TotalLossWeights = TotalLossWeights(),
    selector_weights: SelectorLossWeights = SelectorLossWeights(),
    with_grad: bool = True,
) -> tuple[LossReport, list[MlpParams] | None]:
    """imitate * L_BC + selector * L_selector with gradients for every parameter set.

    Gradients are returned in ``model.param_list()`` order.
    """
    _check_batch(model, batch)
    K, M = model.n_tasks, model.M
    S = batch.states
    b = len(S)
    tasks = batch.tasks.astype(np.int64)
    pair_idx = np.flatnonzero(batch.has_prev)

    feats, mtraces = [], []
    for m in model.modules:
        f, t = forward(m, S)
        feats.append(f)
        mtraces.append(t)

    # Selector rows: every state under every task encoding (k-major), then
    # predecessor states under their own task.
    rows = [selector_input(S, k, K) for k in range(K)]
    rows.append(selector_input(batch.prev_states[pair_idx], tasks[pair_idx], K))
    logits, strace = forward(model.selector, np.concatenate(rows, axis=0))
    G = softmax(logits)
    by_task = G[: K * b].reshape(K, b, M).transpose(1, 0, 2)
    own_rows = tasks * b + np.arange(b)
    own = G[own_rows]
    prev_scores = G[K * b :]

    z = _gate(feats, own)
    actions, htrace = forward(model.head, z)
    err = actions - batch.actions
    l_bc = float(np.sum(err * err) / b)

    use_sel = total_weights.selector != 0.0
    if use_sel:
        terms = selector_loss(by_task, own, own[pair_idx], prev_scores, selector_weights)
        l_sel = terms.total
    else:
        terms, l_sel = None, 0.0
    value = total_weights.imitate * l_bc + total_weights.selector * l_sel
    report = LossReport(value, l_bc)
    if terms is not None:
        report.share, report.explore, report.sparse, report.smooth = terms.share, terms.explore, terms.sparse, terms.smooth
    if not with_grad:
        return report, None

    d_actions = total_weights.imitate * 2.0 * err / b
    g_head, dz = backward(model.head, htrace, d_actions)
    d = model.d
    dG = np.zeros_like(G)
    d_own = np.empty((b, M))
    g_modules = []
    for i, (m, t, f) in enumerate(zip(model.modules, mtraces, feats)):
        dzi = dz[:, i * d : (i + 1) * d]
        d_own[:, i] = np.sum(dzi * f, axis=1)
        gm, _ = backward(m, t, own[:, i : i + 1] * dzi)
        g_modules.append(gm)

    if terms is not None:
        lam = total_weights.selector
        dG[: K * b] += lam * terms.grad_by_task.transpose(1, 0, 2).reshape(K * b, M)
        d_own += lam * terms.grad_scores
        d_own[pair_idx] += lam * terms.grad_current
        dG[K * b :] += lam * terms.grad_previous
    dG[own_rows] += d_own
    g_selector, _ = backward(model.selector, strace, softmax_backward(G, dG))
    return report, [*g_modules, g_selector, g_head]


def bc_loss(model: MapsModel, batch: TransitionBatch, with_grad: bool = True):
    """Mean over samples of the squared L2 action error, with full gradients."""
    return total_loss(model, batch, TotalLossWeights(1.0, 0.0), SelectorLossWeights(0, 0, 0, 0), with_grad)
