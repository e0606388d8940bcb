# %% [markdown]
# # German credit: the full processor grid
#
# Every singleton and every two-stage combination, evaluated on age as the
# sensitive attribute and on its logical combinations with sex.
# Run from the repository root: ``python3 demos/02_german_grid.py [out_dir]``

# %%
import sys
import tempfile

from fairbench.data import GermanConfig, compare_characteristics, load_german
from fairbench.harness import ExperimentConfig, pareto_frontier, run_experiment

german = GermanConfig(path="data/german.data")
for key, row in compare_characteristics(load_german(german), "german").items():
    print(f"{key:<13} measured={row['measured']:<8.4g} reported={row['reported']}")

# %% [markdown]
# One split per scenario; the harness caches the shared stages so the
# 30 pipelines of a scenario train each processor only once.

# %%
out_dir = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="fairbench_german_")
cfg = ExperimentConfig(dataset="german", german=german)
result = run_experiment(cfg, out_dir=out_dir)
print("reports written to", out_dir)

# %%
for scenario, reports in result.reports.items():
    print(f"\n== {scenario} ==")
    ranked = sorted(reports, key=lambda r: -(r.accuracy or 0))
    for r in ranked[:8]:
        sp = "NA" if r.sp is None else f"{r.sp:.3f}"
        print(f"  {r.pipeline.pipeline_id:<26} {r.pipeline.combination:<7} acc={r.accuracy:.3f} SP={sp}")

# %% [markdown]
# The accuracy/separation frontier for the single-attribute scenario.

# %%
for point in pareto_frontier(result.reports["single"]):
    print(f"  {point.pipeline:<26} acc={point.accuracy:.3f} SP={point.separation:.3f}")
