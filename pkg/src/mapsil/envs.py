"""Planar point-mass task suites, scripted experts and demonstration generation.

Dynamics per step (dt = 0.05), action clipped to [-1, 1] per axis:

    v' = (1 - damping) * v + (gain / mass) * a * dt
    p' = p + v' * dt

Observations are ``[px, py, vx, vy, reached]`` where ``reached`` flags that the
waypoint has been passed (always 0 for suites without a waypoint). Episodes end
as soon as the success predicate holds or the horizon is hit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import DemoDataset, Trajectory
from .errors import ExpertFailureError

DT = 0.05
EPS = 0.05
HORIZON = 100
STATE_DIM = 5
ACTION_DIM = 2

NOMINAL_MASS = 1.0
NOMINAL_DAMPING = 0.02
NOMINAL_GAIN = 1.0

EXPERT_KP = 8.0
EXPERT_KD = 4.5

SUITES = ("scaled_dynamics", "morph", "subbehavior")


@dataclass(frozen=True)
class TaskSpec:
    suite: str
    index: int
    name: str
    goal: tuple[float, float]
    start_low: tuple[float, float]
    start_high: tuple[float, float]
    waypoint: tuple[float, float] | None = None
    mass: float = NOMINAL_MASS
    damping: float = NOMINAL_DAMPING
    gain: float = NOMINAL_GAIN
    horizon: int = HORIZON
    eps: float = EPS

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.eps <= 0:
            raise ValueError("success radius must be positive")
        if self.waypoint is not None and self.suite != "subbehavior":
            raise ValueError("only the subbehavior suite uses waypoints")


@dataclass
class EnvState:
    position: np.ndarray
    velocity: np.ndarray
    step: int = 0
    reached: bool = False

    def observation(self) -> np.ndarray:
        return np.array([*self.position, *self.velocity, float(self.reached)])

    @classmethod
    def from_observation(cls, obs, step: int = 0) -> "EnvState":
        obs = np.asarray(obs, dtype=np.float64)
        return cls(obs[:2].copy(), obs[2:4].copy(), step, bool(obs[4] > 0.5))


def _step_arrays(spec: TaskSpec, pos, vel, reached, action):
    a = np.clip(action, -1.0, 1.0)
    vel = (1.0 - spec.damping) * vel + (spec.gain / spec.mass) * a * DT
    pos = pos + vel * DT
    if spec.waypoint is not None:
        near = np.linalg.norm(pos - np.asarray(spec.waypoint), axis=-1) < 2 * spec.eps
        reached = np.logical_or(reached, near)
    return pos, vel, reached


def _done(spec: TaskSpec, pos, reached):
    at_goal = np.linalg.norm(pos - np.asarray(spec.goal), axis=-1) < spec.eps
    if spec.waypoint is not None:
        at_goal = np.logical_and(at_goal, reached)
    return at_goal


def env_step(spec: TaskSpec, state: EnvState, action) -> EnvState:
    if state.step >= spec.horizon:
        raise ValueError("episode already at its horizon")
    pos, vel, reached = _step_arrays(spec, state.position, state.velocity, state.reached, np.asarray(action, float))
    return EnvState(pos, vel, state.step + 1, bool(reached))


def reset(spec: TaskSpec, position) -> EnvState:
    pos = np.asarray(position, dtype=np.float64).copy()
    reached = False
    if spec.waypoint is not None:
        reached = bool(np.linalg.norm(pos - np.asarray(spec.waypoint)) < 2 * spec.eps)
    return EnvState(pos, np.zeros(2), 0, reached)


def sample_starts(spec: TaskSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(spec.start_low, spec.start_high, size=(n, 2))


# --------------------------------------------------------------------------- suites

_DYN_START = ((-0.6, -0.6), (-0.2, -0.2))


def suite_scaled_dynamics() -> list[TaskSpec]:
    """Five tasks that differ only in actuator gain."""
    return [
        TaskSpec("scaled_dynamics", k, f"gain_x{f:g}", (0.4, 0.4), *_DYN_START, gain=NOMINAL_GAIN * f)
        for k, f in enumerate((0.5, 0.75, 1.0, 1.25, 1.5))
    ]


def suite_morph() -> list[TaskSpec]:
    """Nominal body plus mass and damping each enlarged or shrunk by 25%."""
    variants = [
        ("nominal", 1.0, 1.0),
        ("mass_up", 1.25, 1.0),
        ("mass_down", 0.75, 1.0),
        ("damping_up", 1.0, 1.25),
        ("damping_down", 1.0, 0.75),
    ]
    return [
        TaskSpec(
            "morph", k, name, (0.4, -0.3), *_DYN_START, mass=NOMINAL_MASS * fm, damping=NOMINAL_DAMPING * fd
        )
        for k, (name, fm, fd) in enumerate(variants)
    ]


SUB_WAYPOINT = (-0.2, 0.0)


def suite_subbehavior() -> list[TaskSpec]:
    """Shared approach to a waypoint, then a task-specific second leg."""
    start = ((-0.8, -0.15), (-0.6, 0.15))
    goals = [("forward", (0.5, 0.0)), ("backward", (-0.75, 0.0)), ("lateral", (-0.2, 0.6)), ("stop", SUB_WAYPOINT)]
    return [
        TaskSpec("subbehavior", k, name, goal, *start, waypoint=SUB_WAYPOINT) for k, (name, goal) in enumerate(goals)
    ]


def get_suite(name: str) -> list[TaskSpec]:
    try:
        return {"scaled_dynamics": suite_scaled_dynamics, "morph": suite_morph, "subbehavior": suite_subbehavior}[
            name
        ]()
    except KeyError:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITES}") from None


# --------------------------------------------------------------------------- expert


def expert_actions(spec: TaskSpec, pos, vel, reached) -> np.ndarray:
    """Vectorised saturated PD controller with dynamics compensation."""
    pos = np.asarray(pos, dtype=np.float64)
    vel = np.asarray(vel, dtype=np.float64)
    target = np.broadcast_to(np.asarray(spec.goal), pos.shape)
    if spec.waypoint is not None:
        r = np.asarray(reached, dtype=bool)[..., None]
        target = np.where(r, target, np.asarray(spec.waypoint))
    accel = EXPERT_KP * (target - pos) - EXPERT_KD * vel
    # invert the dynamics so every task sees the same closed loop until saturation
    a = spec.mass / spec.gain * (accel + spec.damping / DT * vel)
    return np.clip(a, -1.0, 1.0)


def expert_action(spec: TaskSpec, state: EnvState) -> np.ndarray:
    return expert_actions(spec, state.position, state.velocity, state.reached)


class ExpertPolicy:
    """Scripted experts wrapped with the same ``act`` interface as learned models."""

    kind = "expert"

    def __init__(self, suite: list[TaskSpec]):
        self.suite = suite

    def act(self, states, task, scores=None):
        s = np.atleast_2d(states)
        return expert_actions(self.suite[task], s[:, :2], s[:, 2:4], s[:, 4] > 0.5), None


# --------------------------------------------------------------------------- rollouts


@dataclass
class Rollout:
    states: np.ndarray  # (n, obs)
    actions: np.ndarray  # (n, 2)
    final_position: np.ndarray
    success: bool
    scores: np.ndarray | None = None

    def trajectory(self, task: int) -> Trajectory:
        return Trajectory(task, self.states, self.actions, self.scores)


def rollout_batch(policy_fn, spec: TaskSpec, starts: np.ndarray, horizon: int | None = None) -> list[Rollout]:
    """Closed-loop rollouts from many starts at once.

    ``policy_fn(obs (n, 5)) -> (actions (n, 2), scores (n, M) or None)``.
    Episodes end on success or at the horizon; a non-finite action fails the
    episode immediately.
    """
    horizon = spec.horizon if horizon is None else horizon
    n = len(starts)
    pos = np.asarray(starts, dtype=np.float64).copy()
    vel = np.zeros((n, 2))
    if spec.waypoint is not None:
        reached = np.linalg.norm(pos - np.asarray(spec.waypoint), axis=1) < 2 * spec.eps
    else:
        reached = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)
    success = np.zeros(n, dtype=bool)
    obs_log, act_log, score_log = [[] for _ in range(n)], [[] for _ in range(n)], [[] for _ in range(n)]
    for _ in range(horizon):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        obs = np.column_stack([pos[idx], vel[idx], reached[idx].astype(float)])
        actions, scores = policy_fn(obs)
        actions = np.asarray(actions, dtype=np.float64)
        bad = ~np.all(np.isfinite(actions), axis=1)
        for j, i in enumerate(idx):
            obs_log[i].append(obs[j])
            act_log[i].append(actions[j])
            if scores is not None:
                score_log[i].append(scores[j])
        actions = np.where(bad[:, None], 0.0, actions)
        p, v, r = _step_arrays(spec, pos[idx], vel[idx], reached[idx], actions)
        pos[idx], vel[idx], reached[idx] = p, v, r
        done = _done(spec, p, r) & ~bad
        success[idx[done]] = True
        active[idx[done | bad]] = False
    out = []
    for i in range(n):
        sc = np.array(score_log[i]) if score_log[i] else None
        out.append(Rollout(np.array(obs_log[i]), np.array(act_log[i]), pos[i].copy(), bool(success[i]), sc))
    return out


def replay_positions(spec: TaskSpec, trajectory: Trajectory) -> np.ndarray:
    """Positions visited by a stored trajectory, including the state after its last action."""
    last = EnvState.from_observation(trajectory.states[-1], step=len(trajectory) - 1)
    final = env_step(replace(spec, horizon=max(spec.horizon, len(trajectory))), last, trajectory.actions[-1])
    return np.vstack([trajectory.states[:, :2], final.position])


def success(spec: TaskSpec, trajectory: Trajectory) -> bool:
    """Final position within eps of the goal; waypoint suites also need a pass within 2*eps of it."""
    positions = replay_positions(spec, trajectory)
    if np.linalg.norm(positions[-1] - np.asarray(spec.goal)) >= spec.eps:
        return False
    if spec.waypoint is not None:
        dist = np.linalg.norm(positions - np.asarray(spec.waypoint), axis=1)
        return bool(np.any(dist < 2 * spec.eps))
    return True


def generate_demos(suite: list[TaskSpec], n_per_task: int, seed: int, max_failure_rate: float = 0.05) -> DemoDataset:
    """Successful expert trajectories from uniformly sampled starts.

    Each task draws from its own generator spawned from ``seed``.
    """
    if n_per_task < 1:
        raise ValueError("n_per_task must be at least 1")
    task_seeds = np.random.SeedSequence(seed).spawn(len(suite))
    trajectories = []
    for spec, ss in zip(suite, task_seeds):
        rng = np.random.default_rng(ss)
        expert = ExpertPolicy(suite)
        starts = sample_starts(spec, n_per_task, rng)
        rolls = rollout_batch(lambda o, k=spec.index: expert.act(o, k), spec, starts)
        kept = [r for r in rolls if r.success]
        attempts = len(rolls)
        max_attempts = 2 * n_per_task + 20
        while len(kept) < n_per_task and attempts < max_attempts:
            r = rollout_batch(lambda o, k=spec.index: expert.act(o, k), spec, sample_starts(spec, 1, rng))[0]
            attempts += 1
            if r.success:
                kept.append(r)
        failures = attempts - len(kept)
        if len(kept) < n_per_task or failures / attempts > max_failure_rate:
            raise ExpertFailureError(
                f"expert failed {failures}/{attempts} episodes on {spec.suite}/{spec.name}"
            )
        trajectories.extend(r.trajectory(spec.index) for r in kept)
    return DemoDataset(trajectories, STATE_DIM, ACTION_DIM, len(suite))
