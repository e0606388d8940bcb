# %% [markdown]
# # Fairness metrics and single-stage processors
#
# A baseline credit model on synthetic data, then one processor per stage.
# Run from the repository root: ``python3 demos/01_metrics_and_processors.py``

# %%
import numpy as np

from fairbench.core import accuracy, balanced_accuracy, ind_metric, select_threshold, sf_metric, sp_metric, split
from fairbench.data import SimConfig, characteristics, generate_simulation
from fairbench.inprocess import train_logistic, train_pi_regularized
from fairbench.postprocess import RejectOptionParams, recenter, reject_option
from fairbench.preprocess import reweigh

data = generate_simulation(SimConfig(n=4000, seed=1))
print({k: round(v, 3) for k, v in characteristics(data).items()})
train, val, test = split(data, seed=1)

# %% [markdown]
# The helper below scores a model the same way every time: accuracy, the
# group-averaged accuracy, and the three deviation metrics on ``a1``.


# %%
def show(name, test, predictions):
    row = {
        "acc": accuracy(test, predictions),
        "bal_acc": balanced_accuracy(test, predictions, "a1"),
        "IND": ind_metric(test, predictions, "a1"),
        "SP": sp_metric(test, predictions, "a1"),
        "SF": sf_metric(test, predictions, "a1"),
    }
    print(f"{name:<15}" + "  ".join(f"{k}={v:.3f}" for k, v in row.items()))


base = train_logistic(train)
base = base.with_threshold(select_threshold(base, val, "a1"))
show("baseline", test, base.predict(test))

# %% [markdown]
# Pre-processing: reweighing changes only the training weights.

# %%
rw = train_logistic(reweigh(train, "a1"))
rw = rw.with_threshold(select_threshold(rw, val, "a1"))
show("reweigh", test, rw.predict(test))

# %% [markdown]
# In-processing: the prejudice-index penalty pulls the group score means together.

# %%
for eta in (0.0, 5.0, 25.0):
    pi = train_pi_regularized(train, "a1", eta=eta)
    pi = pi.with_threshold(select_threshold(pi, val, "a1"))
    show(f"pireg eta={eta:g}", test, pi.predict(test))

# %% [markdown]
# Post-processing: reject-option relabeling near the (recentred) decision boundary.
# Widening the band trades accuracy for parity.

# %%
scores = recenter(base.score(test), base.threshold)
for theta in (0.55, 0.6, 0.7):
    labels = reject_option(scores, test.column("a1"), RejectOptionParams(theta))
    show(f"reject {theta:g}", test, labels)
print("share of rows in the 0.7 band:", np.mean(np.maximum(scores, 1 - scores) < 0.7).round(3))
