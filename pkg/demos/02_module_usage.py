"""Full-size training on the waypoint suite, then a module usage chart.

Writes ``usage.csv`` and ``usage.svg`` next to this script. The chart usually
shows one or two modules used by every task (the approach to the waypoint) and
others owned by a single task (its second leg). Takes about three minutes.
"""

from pathlib import Path

from mapsil import fileio, generate_demos, get_suite, rollout_usage, train_maps

HERE = Path(__file__).parent

suite = get_suite("subbehavior")
config = fileio.load_config(HERE / "configs" / "subbehavior.json")
data = generate_demos(suite, 20, config.seed)
model = train_maps(config, data).model

report = rollout_usage(model, suite, n_starts=100, seed=0)
fileio.write_csv(HERE / "usage.csv", fileio.USAGE_COLUMNS, fileio.usage_rows(report))
(HERE / "usage.svg").write_text(fileio.usage_svg(report))

print("shared modules (gate > 0.2 in two or more tasks):", report.shared_modules())
for module, task in report.specific_modules():
    print(f"module {module} belongs to {suite[task].name}")
