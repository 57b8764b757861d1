"""Drop the exploration term and watch every task fall onto one module.

Without the per-batch balance pressure the sharing and sparsity terms agree on
a single winner, so the aggregate effective module count drops towards 1.
Trains two full-size models (about six minutes).
"""

from mapsil import ablate, generate_demos, get_suite, module_usage, suite_config, train_maps

suite = get_suite("subbehavior")
config = suite_config("subbehavior", seed=0)
data = generate_demos(suite, 20, config.seed)

full = train_maps(config, data).model
print(f"full:       {module_usage(full, data).aggregate_effective_count:.2f} effective modules")

for term in ("explore", "sparse"):
    result = ablate(config, data, term)
    print(f"no {term:7s}: {result.usage.aggregate_effective_count:.2f} effective modules")
