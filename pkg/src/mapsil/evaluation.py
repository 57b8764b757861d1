"""Rollouts, success rates, module-usage reports, ablations and baseline comparisons."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import DemoDataset
from .envs import Rollout, TaskSpec, generate_demos, get_suite, reset, rollout_batch, sample_starts
from .trainer import (
    TrainConfig,
    split,
    train_maps,
    train_mt_bc,
    train_mtmh_bc,
    train_single_bc_all,
)

log = logging.getLogger(__name__)

METHODS = ("maps", "single", "mt", "mtmh")
ABLATION_TERMS = ("share", "explore", "sparse", "smooth")


def rollout(model, spec: TaskSpec, start, horizon: int | None = None, scores=None) -> Rollout:
    """Deterministic closed-loop episode from one start position.

    ``scores`` forces the gate values of a modular model.
    """
    start = reset(spec, start).position
    return rollout_batch(lambda obs: model.act(obs, spec.index, scores), spec, start[None, :], horizon)[0]


def evaluation_starts(suite: list[TaskSpec], n_starts: int, seed: int) -> list[np.ndarray]:
    """Per-task start positions; the same seed gives the same starts to every method."""
    seqs = np.random.SeedSequence([seed, 7919]).spawn(len(suite))
    return [sample_starts(spec, n_starts, np.random.default_rng(s)) for spec, s in zip(suite, seqs)]


def success_rate(model, suite: list[TaskSpec], n_starts: int = 100, seed: int = 0, starts=None) -> np.ndarray:
    """Fraction of successful episodes for every task of ``suite``."""
    if starts is None:
        starts = evaluation_starts(suite, n_starts, seed)
    rates = []
    for spec, st in zip(suite, starts):
        rolls = rollout_batch(lambda obs, k=spec.index: model.act(obs, k), spec, st)
        rates.append(np.mean([r.success for r in rolls]))
    return np.array(rates)


def single_module_rollout(model, spec: TaskSpec, module: int, start, horizon: int | None = None) -> Rollout:
    """Roll out with the gate forced one-hot on ``module``."""
    if not 0 <= module < model.M:
        raise ValueError(f"module index {module} outside [0, {model.M})")
    forced = np.zeros(model.M)
    forced[module] = 1.0
    return rollout(model, spec, start, horizon, scores=forced)


# --------------------------------------------------------------------------- usage


def effective_count(p) -> np.ndarray:
    """exp(Shannon entropy) of simplex rows."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.sum(np.where(p > 0, p * np.log(p), 0.0), axis=1)
    return np.exp(h)


@dataclass
class UsageReport:
    """Mean gate per (task, module) plus the share of steps each module is the argmax."""

    mean_gate: np.ndarray
    argmax_fraction: np.ndarray
    task_names: list[str] = field(default_factory=list)

    @property
    def n_tasks(self) -> int:
        return self.mean_gate.shape[0]

    @property
    def n_modules(self) -> int:
        return self.mean_gate.shape[1]

    @property
    def effective_counts(self) -> np.ndarray:
        return effective_count(self.mean_gate)

    @property
    def aggregate_effective_count(self) -> float:
        """Effective number of modules used across the whole suite (tasks weighted equally)."""
        return float(effective_count(self.mean_gate.mean(axis=0))[0])

    def shared_modules(self, threshold: float = 0.2) -> list[int]:
        """Modules with mean gate above ``threshold`` in at least two tasks."""
        return [i for i in range(self.n_modules) if np.sum(self.mean_gate[:, i] > threshold) >= 2]

    def specific_modules(self, ratio: float = 3.0) -> list[tuple[int, int]]:
        """(module, task) pairs where the task's gate exceeds ``ratio`` times every other task's."""
        out = []
        for i in range(self.n_modules):
            col = self.mean_gate[:, i]
            k = int(np.argmax(col))
            others = np.delete(col, k)
            if others.size and np.all(col[k] > ratio * others):
                out.append((i, k))
        return out

    def pairwise_overlap(self) -> float:
        """Mean histogram intersection of usage rows over all task pairs."""
        K = self.n_tasks
        vals = [
            np.minimum(self.mean_gate[a], self.mean_gate[b]).sum() for a in range(K) for b in range(a + 1, K)
        ]
        return float(np.mean(vals)) if vals else 1.0


def _usage_from_scores(per_task_scores: list[np.ndarray], names=None) -> UsageReport:
    mean_gate, argmax = [], []
    for sc in per_task_scores:
        if len(sc) == 0:
            raise ValueError("a task has no states to measure usage on")
        mean_gate.append(sc.mean(axis=0))
        counts = np.bincount(np.argmax(sc, axis=1), minlength=sc.shape[1])
        argmax.append(counts / len(sc))
    return UsageReport(np.array(mean_gate), np.array(argmax), list(names or []))


def module_usage(model, source, task_names=None) -> UsageReport:
    """Gate statistics over a demo dataset or over ``{task: [Rollout, ...]}``."""
    if isinstance(source, DemoDataset):
        per_task = []
        for k in range(source.n_tasks):
            trs = source.by_task(k)
            states = np.concatenate([tr.states for tr in trs]) if trs else np.empty((0, source.state_dim))
            per_task.append(model.act(states, k)[1] if len(states) else np.empty((0, model.M)))
    else:
        per_task = []
        for k in sorted(source):
            rolls = source[k]
            per_task.append(np.concatenate([r.scores for r in rolls if r.scores is not None and len(r.scores)]))
    return _usage_from_scores(per_task, task_names)


def rollout_usage(model, suite: list[TaskSpec], n_starts: int = 100, seed: int = 0) -> UsageReport:
    starts = evaluation_starts(suite, n_starts, seed)
    rolls = {
        spec.index: rollout_batch(lambda obs, k=spec.index: model.act(obs, k), spec, st)
        for spec, st in zip(suite, starts)
    }
    return module_usage(model, rolls, [s.name for s in suite])


# --------------------------------------------------------------------------- ablation


_TERM_FIELDS = {
    "share": "lambda_share",
    "explore": "lambda_explore",
    "sparse": "lambda_sparse",
    "smooth": "lambda_smooth",
}


def ablated_config(config: TrainConfig, term: str) -> TrainConfig:
    if term not in _TERM_FIELDS:
        raise ValueError(f"unknown selector term {term!r}; choose from {ABLATION_TERMS}")
    return config.replace(**{_TERM_FIELDS[term]: 0.0})


@dataclass
class AblationResult:
    term: str
    config: TrainConfig
    model: object
    usage: UsageReport
    success: np.ndarray | None
    history: list = field(default_factory=list)


def ablate(
    config: TrainConfig,
    dataset: DemoDataset,
    term: str,
    suite: list[TaskSpec] | None = None,
    n_starts: int = 100,
    seed: int = 0,
) -> AblationResult:
    """Retrain with one selector weight zeroed; report usage and (optionally) success rates.

    Usage is measured on the demonstration states.
    """
    cfg = ablated_config(config, term)
    res = train_maps(cfg, dataset)
    names = [s.name for s in suite] if suite else None
    usage = module_usage(res.model, dataset, names)
    rates = success_rate(res.model, suite, n_starts, seed) if suite else None
    return AblationResult(term, cfg, res.model, usage, rates, res.history)


# --------------------------------------------------------------------------- comparison


@dataclass
class ComparisonTable:
    """Long-format success records: one per method, suite, task, expert count and seed."""

    records: list[dict] = field(default_factory=list)

    def add(self, method, suite, task, n_experts, seed, success):
        if not 0.0 <= success <= 1.0:
            raise ValueError("success rate outside [0, 1]")
        self.records.append(
            {"method": method, "suite": suite, "task": int(task), "n_experts": int(n_experts), "seed": int(seed), "success": float(success)}
        )

    def cells(self) -> list[tuple]:
        seen = dict.fromkeys((r["suite"], r["task"], r["n_experts"]) for r in self.records)
        return list(seen)

    def methods(self) -> list[str]:
        return list(dict.fromkeys(r["method"] for r in self.records))

    def values(self, method, suite, task, n_experts) -> np.ndarray:
        return np.array(
            [
                r["success"]
                for r in self.records
                if (r["method"], r["suite"], r["task"], r["n_experts"]) == (method, suite, task, n_experts)
            ]
        )

    def summary(self) -> list[dict]:
        rows = []
        for method in self.methods():
            for suite, task, n in self.cells():
                v = self.values(method, suite, task, n)
                rows.append(
                    {
                        "method": method,
                        "suite": suite,
                        "task": task,
                        "n_experts": n,
                        "mean_success": float(v.mean()),
                        "std_success": float(v.std()),
                        "n_seeds": len(v),
                    }
                )
        return rows

    def tally(self, reference: str = "single") -> list[dict]:
        """Cells where each method's seed-mean beats, loses to, or ties the reference.

        Counts are also given normalised by the number of cells.
        """
        cells = self.cells()
        out = []
        for method in self.methods():
            if method == reference:
                continue
            better = worse = ties = 0
            for cell in cells:
                m = self.values(method, *cell).mean()
                r = self.values(reference, *cell).mean()
                if m > r:
                    better += 1
                elif m < r:
                    worse += 1
                else:
                    ties += 1
            n = len(cells)
            out.append(
                {
                    "method": method,
                    "better": better,
                    "worse": worse,
                    "ties": ties,
                    "cells": n,
                    "better_frac": better / n,
                    "worse_frac": worse / n,
                }
            )
        return out


def train_method(method: str, config: TrainConfig, dataset: DemoDataset):
    """Train one method on a fixed split; returns (policy, histories)."""
    train, val = split(dataset, config.train_fraction, config.seed)
    if method == "maps":
        r = train_maps(config, train, val)
        return r.model, [r.history]
    if method == "single":
        bundle, results = train_single_bc_all(config, train, val)
        return bundle, [r.history for r in results]
    if method == "mt":
        r = train_mt_bc(config, train, val)
        return r.model, [r.history]
    if method == "mtmh":
        r = train_mtmh_bc(config, train, val)
        return r.model, [r.history]
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def compare(
    configs,
    suites,
    expert_counts,
    seeds,
    methods=METHODS,
    n_starts: int = 100,
    eval_seed: int = 12345,
) -> ComparisonTable:
    """Train every method per (suite, expert count, seed) and evaluate on shared starts.

    ``configs`` is a TrainConfig or a mapping from suite name to TrainConfig.
    The seed of each cell replaces the config seed and also seeds the demos.
    """
    table = ComparisonTable()
    for suite_name in suites:
        suite = get_suite(suite_name)
        base = configs[suite_name] if isinstance(configs, dict) else configs
        starts = evaluation_starts(suite, n_starts, eval_seed)
        for n in expert_counts:
            for seed in seeds:
                data = generate_demos(suite, n, seed)
                cfg = base.replace(seed=seed)
                for method in methods:
                    log.info("compare %s n=%d seed=%d %s", suite_name, n, seed, method)
                    policy, _ = train_method(method, cfg, data)
                    rates = success_rate(policy, suite, starts=starts)
                    for k, rate in enumerate(rates):
                        table.add(method, suite_name, k, n, seed, rate)
    return table
