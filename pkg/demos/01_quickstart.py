"""Train a small modular policy on the waypoint suite and look at how it routes.

Four tasks share the same opening move (reach the waypoint) and then split up.
A quick, undersized run is enough to see the selector spread work over modules.
Takes about a minute on one core.
"""

from pathlib import Path

import numpy as np

from mapsil import fileio, generate_demos, get_suite, rollout_usage, success_rate, train_maps

HERE = Path(__file__).parent

suite = get_suite("subbehavior")
config = fileio.load_config(HERE / "configs" / "quick.json")

# 20 expert demonstrations per task; the scripted experts never fail here
data = generate_demos(suite, n_per_task=20, seed=config.seed)
print(f"{len(data.trajectories)} demos, {data.n_transitions} transitions")

result = train_maps(config, data)
val = [row["L_BC"] for row in result.history if row["split"] == "val"]
print(f"best validation BC loss {min(val):.4f} at epoch {result.best_epoch}")

rates = success_rate(result.model, suite, n_starts=50, seed=1)
for spec, rate in zip(suite, rates):
    print(f"  {spec.name:9s} success {rate:.2f}")

usage = rollout_usage(result.model, suite, n_starts=50, seed=1)
np.set_printoptions(precision=2, suppress=True)
print("mean gate per task (rows) and module (columns):")
print(usage.mean_gate)
print(f"aggregate effective modules {usage.aggregate_effective_count:.2f} of {usage.n_modules}")
