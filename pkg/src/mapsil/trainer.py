"""Splitting, stratified batching, joint training, and the three BC baselines."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data import DemoDataset, TransitionBatch
from .envs import SUITES
from .errors import ConfigError, TrainingDivergedError
from .nncore import AdamHyper, MlpParams, Optimizer, backward, forward, init_params
from .policy import LossReport, TotalLossWeights, init_maps, total_loss
from .selector import DYNAMICS_WEIGHTS, MANIPULATION_WEIGHTS, SelectorLossWeights, one_hot

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    n_modules: int = 5
    feature_dim: int = 128
    module_hidden: tuple = (128, 128, 128)
    selector_hidden: tuple = (128, 128)
    head_hidden: tuple = ()
    baseline_hidden: tuple = (128, 128, 128)
    batch_size: int = 32
    epochs: int = 250
    seed: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_imitate: float = 0.75
    lambda_selector: float = 0.25
    lambda_share: float = 1.0
    lambda_explore: float = 0.1
    lambda_sparse: float = 0.5
    lambda_smooth: float = 1.0
    train_fraction: float = 0.7

    def __post_init__(self):
        for name in ("module_hidden", "selector_hidden", "head_hidden", "baseline_hidden"):
            setattr(self, name, tuple(int(x) for x in getattr(self, name)))
        if self.n_modules < 2:
            raise ConfigError("n_modules must be >= 2")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.feature_dim < 1:
            raise ConfigError("batch_size and feature_dim must be positive, epochs non-negative")
        try:
            self.total_weights()
            self.selector_weights()
            self.adam()
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def total_weights(self) -> TotalLossWeights:
        return TotalLossWeights(self.lambda_imitate, self.lambda_selector)

    def selector_weights(self) -> SelectorLossWeights:
        return SelectorLossWeights(self.lambda_share, self.lambda_explore, self.lambda_sparse, self.lambda_smooth)

    def adam(self) -> AdamHyper:
        if self.lr <= 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("invalid Adam settings")
        return AdamHyper(self.lr, self.beta1, self.beta2, self.adam_eps)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        missing = sorted(known - set(d))
        if missing:
            raise ConfigError(f"missing config key {missing[0]!r}")
        return cls(**d)

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def suite_config(suite: str, **changes) -> TrainConfig:
    """Default config with the selector weights tuned for ``suite``."""
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; expected one of {SUITES}")
    w = MANIPULATION_WEIGHTS if suite == "subbehavior" else DYNAMICS_WEIGHTS
    base = TrainConfig(lambda_share=w.share, lambda_explore=w.explore, lambda_sparse=w.sparse, lambda_smooth=w.smooth)
    return base.replace(**changes)


# --------------------------------------------------------------------------- data handling


def split(dataset: DemoDataset, fraction: float = 0.7, seed: int = 0) -> tuple[DemoDataset, DemoDataset]:
    """Per-task split at trajectory granularity; both sides keep every task."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, val = [], []
    for k in range(dataset.n_tasks):
        trs = dataset.by_task(k)
        n = len(trs)
        if n < 2:
            raise ValueError(f"task {k} has {n} trajectories; at least 2 are needed to split")
        n_train = min(max(int(round(fraction * n)), 1), n - 1)
        order = rng.permutation(n)
        train.extend(trs[i] for i in sorted(order[:n_train]))
        val.extend(trs[i] for i in sorted(order[n_train:]))
    return dataset.subset(train), dataset.subset(val)


def make_batches(train: DemoDataset, b: int, seed: int):
    """One epoch of stratified batches.

    Every transition is used once. Each task's shuffled transitions are spread
    evenly over ``ceil(N / b)`` batches, so each batch holds about ``b / K``
    samples per task. A task with fewer transitions than batches is cycled to
    keep every batch stratified.
    """
    K = train.n_tasks
    if b < K:
        raise ValueError(f"batch size {b} is smaller than the number of tasks {K}")
    allt = train.transitions()
    allt.index = np.arange(len(allt))
    n_batches = max(1, math.ceil(len(allt) / b))
    rng = np.random.default_rng(seed)
    chunks_by_task = []
    for k in range(K):
        idx = np.flatnonzero(allt.tasks == k)
        if idx.size == 0:
            raise ValueError(f"task {k} has no training transitions")
        perm = idx[rng.permutation(idx.size)]
        if perm.size < n_batches:
            reps = math.ceil(n_batches / perm.size)
            perm = np.concatenate([perm] + [idx[rng.permutation(idx.size)] for _ in range(reps - 1)])[:n_batches]
        chunks_by_task.append(np.array_split(perm, n_batches))
    for j in range(n_batches):
        sel = np.concatenate([chunks[j] for chunks in chunks_by_task])
        yield allt.take(sel)


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


# --------------------------------------------------------------------------- histories


HISTORY_COLUMNS = ("epoch", "split", "L_total", "L_BC", "L_share", "L_explore", "L_sparse", "L_smooth")


@dataclass
class TrainResult:
    model: object
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    config: TrainConfig | None = None


def _mean_report(reports: list[LossReport], weights: list[int]) -> dict:
    w = np.asarray(weights, dtype=np.float64)
    rows = [r.as_row() for r in reports]
    return {k: float(np.dot(w, [r[k] for r in rows]) / w.sum()) for k in rows[0]}


def _check_finite(row: dict, epoch: int, where: str):
    bad = [k for k, v in row.items() if k.startswith("L_") and not math.isfinite(v)]
    if bad:
        raise TrainingDivergedError(f"non-finite {bad[0]} at epoch {epoch} ({where})")


def _fit(loss_fn, params: list[MlpParams], snapshot, train: DemoDataset, val: DemoDataset, config: TrainConfig):
    """Shared Adam loop. ``loss_fn(batch, with_grad)`` returns (LossReport, grads)."""
    opt = Optimizer(params, config.adam())
    history = []
    best = (math.inf, 0, snapshot())
    val_batch = val.transitions() if val is not None and val.trajectories else None
    for epoch in range(1, config.epochs + 1):
        reports, sizes = [], []
        for batch in make_batches(train, config.batch_size, _epoch_seed(config.seed, epoch)):
            report, grads = loss_fn(batch, True)
            if not math.isfinite(report.total):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            try:
                opt.step(grads)
            except ValueError as e:
                raise TrainingDivergedError(f"{e} at epoch {epoch}") from None
            reports.append(report)
            sizes.append(len(batch))
        row = {"epoch": epoch, "split": "train", **_mean_report(reports, sizes)}
        _check_finite(row, epoch, "train")
        history.append(row)
        if val_batch is not None:
            vrep, _ = loss_fn(val_batch, False)
            vrow = {"epoch": epoch, "split": "val", **vrep.as_row()}
            _check_finite(vrow, epoch, "val")
            history.append(vrow)
            score = vrow["L_BC"]
        else:
            score = row["L_BC"]
        if score < best[0]:
            best = (score, epoch, snapshot())
        if epoch % 50 == 0:
            log.info("epoch %d train L_BC %.5f best %.5f@%d", epoch, row["L_BC"], best[0], best[1])
    return history, best


def train_maps(config: TrainConfig, dataset: DemoDataset, val: DemoDataset | None = None) -> TrainResult:
    """Joint Adam training of modules, selector and head on the total loss.

    When ``val`` is None the dataset is split with ``config.train_fraction``.
    Returns the parameters with the best validation BC loss.
    """
    train, val = _resolve_split(config, dataset, val)
    model = init_maps(
        dataset.state_dim,
        dataset.action_dim,
        dataset.n_tasks,
        config.n_modules,
        config.feature_dim,
        config.module_hidden,
        config.selector_hidden,
        config.head_hidden,
        seed=config.seed,
    )
    if config.epochs == 0:
        return TrainResult(model, [], 0, config)
    tw, sw = config.total_weights(), config.selector_weights()
    history, (_, best_epoch, best_model) = _fit(
        lambda batch, g: total_loss(model, batch, tw, sw, g), model.param_list(), model.copy, train, val, config
    )
    return TrainResult(best_model, history, best_epoch, config)


def _resolve_split(config, dataset, val):
    if val is not None:
        return dataset, val
    return split(dataset, config.train_fraction, config.seed)


# --------------------------------------------------------------------------- baselines


def _bc_report(err: np.ndarray) -> tuple[LossReport, np.ndarray]:
    b = len(err)
    l = float(np.sum(err * err) / b)
    return LossReport(l, l), 2.0 * err / b


@dataclass
class MlpPolicy:
    """Single network; ``task_input`` appends the one-hot task to the state."""

    net: MlpParams
    n_tasks: int
    task_input: bool

    @property
    def kind(self):
        return "mt" if self.task_input else "single"

    def inputs(self, states, tasks):
        states = np.atleast_2d(states)
        if not self.task_input:
            return states
        enc = np.broadcast_to(one_hot(tasks, self.n_tasks), (len(states), self.n_tasks))
        return np.concatenate([states, enc], axis=1)

    def act(self, states, task, scores=None):
        out, _ = forward(self.net, self.inputs(states, task))
        return out, None

    def param_list(self):
        return [self.net]

    def copy(self):
        return MlpPolicy(self.net.copy(), self.n_tasks, self.task_input)

    def loss(self, batch: TransitionBatch, with_grad=True):
        out, trace = forward(self.net, self.inputs(batch.states, batch.tasks))
        report, d_out = _bc_report(out - batch.actions)
        if not with_grad:
            return report, None
        g, _ = backward(self.net, trace, d_out)
        return report, [g]


@dataclass
class SingleTaskPolicies:
    """Independent per-task policies dispatched by task index."""

    policies: list[MlpPolicy]

    kind = "single"

    @property
    def n_tasks(self):
        return len(self.policies)

    def act(self, states, task, scores=None):
        return self.policies[task].act(states, 0)

    def param_list(self):
        return [p.net for p in self.policies]


@dataclass
class MultiHeadPolicy:
    """Shared tanh trunk with one affine head per task."""

    trunk: MlpParams
    heads: list[MlpParams]

    kind = "mtmh"

    @property
    def n_tasks(self):
        return len(self.heads)

    def act(self, states, task, scores=None):
        h, _ = forward(self.trunk, np.atleast_2d(states))
        out, _ = forward(self.heads[task], np.tanh(h))
        return out, None

    def param_list(self):
        return [self.trunk, *self.heads]

    def copy(self):
        return MultiHeadPolicy(self.trunk.copy(), [h.copy() for h in self.heads])

    def loss(self, batch: TransitionBatch, with_grad=True):
        pre, ttrace = forward(self.trunk, batch.states)
        h = np.tanh(pre)
        out = np.empty_like(batch.actions)
        htraces = {}
        for k in np.unique(batch.tasks):
            rows = np.flatnonzero(batch.tasks == k)
            out[rows], htraces[int(k)] = forward(self.heads[k], h[rows])
        report, d_out = _bc_report(out - batch.actions)
        if not with_grad:
            return report, None
        d_h = np.zeros_like(h)
        g_heads = [head.zeros_like() for head in self.heads]
        for k, tr in htraces.items():
            rows = np.flatnonzero(batch.tasks == k)
            g_heads[k], d_h[rows] = backward(self.heads[k], tr, d_out[rows])
        g_trunk, _ = backward(self.trunk, ttrace, d_h * (1.0 - h * h))
        return report, [g_trunk, *g_heads]


def train_single_bc(config: TrainConfig, dataset: DemoDataset, task: int, val: DemoDataset | None = None) -> TrainResult:
    """Plain BC on one task's demonstrations only."""
    train, val = _resolve_split(config, dataset, val)
    train, val = train.only_task(task), val.only_task(task)
    seed = int(np.random.SeedSequence([config.seed, 101, task]).generate_state(1)[0])
    policy = MlpPolicy(init_params([dataset.state_dim, *config.baseline_hidden, dataset.action_dim], seed), 1, False)
    return _train_policy(policy, train, val, config)


def train_single_bc_all(config: TrainConfig, dataset: DemoDataset, val: DemoDataset | None = None):
    """One independent policy per task, bundled for evaluation."""
    results = [train_single_bc(config, dataset, k, val) for k in range(dataset.n_tasks)]
    bundle = SingleTaskPolicies([r.model for r in results])
    return bundle, results


def train_mt_bc(config: TrainConfig, dataset: DemoDataset, val: DemoDataset | None = None) -> TrainResult:
    """One policy for all tasks with the one-hot task id appended to the state."""
    train, val = _resolve_split(config, dataset, val)
    K = dataset.n_tasks
    seed = int(np.random.SeedSequence([config.seed, 202]).generate_state(1)[0])
    net = init_params([dataset.state_dim + K, *config.baseline_hidden, dataset.action_dim], seed)
    return _train_policy(MlpPolicy(net, K, True), train, val, config)


def train_mtmh_bc(config: TrainConfig, dataset: DemoDataset, val: DemoDataset | None = None) -> TrainResult:
    """Shared trunk, one output head per task."""
    train, val = _resolve_split(config, dataset, val)
    K = dataset.n_tasks
    seeds = np.random.SeedSequence([config.seed, 303]).generate_state(K + 1)
    hidden = list(config.baseline_hidden)
    trunk = init_params([dataset.state_dim, *hidden], int(seeds[0]))
    heads = [init_params([hidden[-1], dataset.action_dim], int(seeds[k + 1])) for k in range(K)]
    return _train_policy(MultiHeadPolicy(trunk, heads), train, val, config)


def _train_policy(policy, train, val, config: TrainConfig) -> TrainResult:
    if config.epochs == 0:
        return TrainResult(policy, [], 0, config)
    history, (_, best_epoch, best) = _fit(policy.loss, policy.param_list(), policy.copy, train, val, config)
    return TrainResult(best, history, best_epoch, config)
