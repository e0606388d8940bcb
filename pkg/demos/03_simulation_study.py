# %% [markdown]
# # A small replicate study on simulated data
#
# Medians over replicates for a reduced grid, printed as the pairwise matrix
# the harness writes to ``matrix_sp_<scenario>.csv``. The full-size study
# (50 replicates of 5000 rows) is ``fairbench simulate --out DIR``.
# Run from the repository root: ``python3 demos/03_simulation_study.py``

# %%
from fairbench.data import SimConfig
from fairbench.harness import ExperimentConfig, result_matrix, run_experiment

cfg = ExperimentConfig(
    simulation=SimConfig(n=2000, replicates=8, seed=3),
    scenarios=("single", "or"),
    pre=("reweigh", "diremover"),
    in_=("pireg", "metafair"),
    post=("platt",),
)
result = run_experiment(cfg)

# %%
for scenario in cfg.scenarios:
    for metric in ("accuracy", "sp"):
        axis, cells = result_matrix(result.reports[scenario], cfg, metric)
        print(f"\n{metric} / {scenario}")
        print(" " * 11 + "".join(f"{p[:9]:>10}" for p in axis))
        for name, row in zip(axis, cells):
            text = "".join(f"{'':>10}" if v == "" else f"{'NA' if v is None else f'{v:.3f}':>10}" for v in row)
            print(f"{name[:10]:<11}{text}")

# %% [markdown]
# Does combining a pre- and an in-processor beat both of its parts?

# %%
for scenario, reports in result.reports.items():
    acc = {r.pipeline.pipeline_id: r.accuracy for r in reports}
    for r in reports:
        spec = r.pipeline
        if spec.combination == "PI":
            gain = acc[spec.pipeline_id] - max(acc[spec.pre], acc[spec.in_])
            print(f"{scenario:<7}{spec.pipeline_id:<22} gain over best part: {gain:+.3f}")
