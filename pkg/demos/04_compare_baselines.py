"""MAPS against single-task, multi-task and multi-head BC on one suite.

Every method sees the same demonstrations and is scored on the same start
positions, so per-task differences are paired. Expect tens of minutes: the
run trains four methods for each seed.
"""

import sys

from mapsil import compare, suite_config

suite = sys.argv[1] if len(sys.argv) > 1 else "morph"
table = compare({suite: suite_config(suite)}, [suite], expert_counts=[20], seeds=[0, 1], n_starts=100)

for row in table.summary():
    print(f"{row['method']:6s} task {row['task']}  {row['mean_success']:.2f} +- {row['std_success']:.2f}")
for row in table.tally("single"):
    print(f"{row['method']}: beats single-task BC on {row['better']}/{row['cells']} tasks, loses on {row['worse']}")
