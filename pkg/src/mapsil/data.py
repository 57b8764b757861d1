"""Demonstration containers and transition batches."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Trajectory:
    task: int
    states: np.ndarray
    actions: np.ndarray
    scores: np.ndarray | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.states.ndim != 2 or self.actions.ndim != 2 or len(self.states) != len(self.actions):
            raise ValueError("a trajectory needs equal-length 2-D state and action arrays")

    def __len__(self):
        return len(self.states)


@dataclass
class DemoDataset:
    trajectories: list[Trajectory]
    state_dim: int
    action_dim: int
    n_tasks: int

    def __post_init__(self):
        for tr in self.trajectories:
            if len(tr) == 0:
                raise ValueError("empty trajectory")
            if not (0 <= tr.task < self.n_tasks):
                raise ValueError(f"task index {tr.task} outside [0, {self.n_tasks})")
            if tr.states.shape[1] != self.state_dim or tr.actions.shape[1] != self.action_dim:
                raise ValueError("trajectory dimensions do not match the dataset")
            if not (np.all(np.isfinite(tr.states)) and np.all(np.isfinite(tr.actions))):
                raise ValueError("non-finite values in trajectory")

    def by_task(self, k: int) -> list[Trajectory]:
        return [tr for tr in self.trajectories if tr.task == k]

    @property
    def n_transitions(self) -> int:
        return sum(len(tr) for tr in self.trajectories)

    def subset(self, trajectories: list[Trajectory]) -> "DemoDataset":
        return DemoDataset(list(trajectories), self.state_dim, self.action_dim, self.n_tasks)

    def only_task(self, k: int) -> "DemoDataset":
        """Single-task view with the task relabelled to 0."""
        trs = [Trajectory(0, tr.states, tr.actions) for tr in self.by_task(k)]
        return DemoDataset(trs, self.state_dim, self.action_dim, 1)

    def transitions(self) -> "TransitionBatch":
        """Every transition as one batch, in storage order."""
        parts = [_trajectory_transitions(tr) for tr in self.trajectories]
        return TransitionBatch(*(np.concatenate(cols) for cols in zip(*parts)))


def _trajectory_transitions(tr: Trajectory):
    n = len(tr)
    prev = np.vstack([tr.states[:1], tr.states[:-1]])
    has_prev = np.arange(n) > 0
    return tr.states, prev, tr.actions, np.full(n, tr.task, dtype=np.int64), has_prev


@dataclass
class TransitionBatch:
    """Arrays of one batch.

    ``prev_states[j]`` is only meaningful where ``has_prev[j]`` is true (the
    sample is not the head of its trajectory).
    """

    states: np.ndarray
    prev_states: np.ndarray
    actions: np.ndarray
    tasks: np.ndarray
    has_prev: np.ndarray
    index: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.states)

    def take(self, idx) -> "TransitionBatch":
        return TransitionBatch(
            self.states[idx],
            self.prev_states[idx],
            self.actions[idx],
            self.tasks[idx],
            self.has_prev[idx],
            None if self.index is None else self.index[idx],
        )
