import time
from dataclasses import dataclass, field

import numpy as np
import pytest

from mapsil.data import DemoDataset, TransitionBatch, Trajectory
from mapsil.envs import generate_demos, get_suite
from mapsil.evaluation import evaluation_starts, success_rate, train_method
from mapsil.trainer import suite_config

_ACCEPTANCE_LINES = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    _ACCEPTANCE_LINES.append((number, "PASS" if passed else "FAIL", detail))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains full-size models (minutes)")
    config.addinivalue_line("markers", "acceptance: exit criterion")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, detail in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_batch(rng, b, state_dim, action_dim, n_tasks, prev_fraction=0.6):
    tasks = np.arange(b) % n_tasks
    rng.shuffle(tasks)
    return TransitionBatch(
        rng.normal(size=(b, state_dim)),
        rng.normal(size=(b, state_dim)),
        rng.uniform(-1, 1, size=(b, action_dim)),
        tasks,
        rng.uniform(size=b) < prev_fraction,
    )


def toy_dataset(rng, n_tasks=3, per_task=4, state_dim=5, action_dim=2, length=(3, 8)):
    trs = []
    for k in range(n_tasks):
        for _ in range(per_task):
            n = int(rng.integers(*length))
            trs.append(Trajectory(k, rng.normal(size=(n, state_dim)), rng.uniform(-1, 1, size=(n, action_dim))))
    return DemoDataset(trs, state_dim, action_dim, n_tasks)


# --------------------------------------------------------------------------- full-size runs shared by slow tests

SEEDS = (0, 1, 2)
N_DEMOS = 20
N_STARTS = 100
EVAL_SEED = 12345


@dataclass
class SuiteRuns:
    """MAPS and single-task BC trained on one suite for every seed, scored on shared starts."""

    suite: str
    maps: dict = field(default_factory=dict)  # seed -> per-task success
    single: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)
    histories: dict = field(default_factory=dict)
    datasets: dict = field(default_factory=dict)
    configs: dict = field(default_factory=dict)
    maps_seconds: dict = field(default_factory=dict)


_RUNS: dict = {}


def trained_suite(name: str) -> SuiteRuns:
    """Trains on first use and caches for the rest of the session."""
    if name in _RUNS:
        return _RUNS[name]
    suite = get_suite(name)
    starts = evaluation_starts(suite, N_STARTS, EVAL_SEED)
    runs = SuiteRuns(name)
    for seed in SEEDS:
        data = generate_demos(suite, N_DEMOS, seed)
        cfg = suite_config(name, seed=seed)
        t0 = time.perf_counter()
        model, histories = train_method("maps", cfg, data)
        runs.maps[seed] = success_rate(model, suite, starts=starts)
        runs.maps_seconds[seed] = time.perf_counter() - t0
        runs.models[seed], runs.histories[seed] = model, histories[0]
        runs.datasets[seed], runs.configs[seed] = data, cfg
        single, _ = train_method("single", cfg, data)
        runs.single[seed] = success_rate(single, suite, starts=starts)
    _RUNS[name] = runs
    return runs
