from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from fairbench import Dataset

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

ROOT = Path(__file__).resolve().parents[1]
GERMAN_PATH = ROOT / "data" / "german.data"

# acceptance results, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def german_path():
    return GERMAN_PATH


def make_dataset(n=200, seed=0, d=3, p_a=0.5):
    """Small random dataset with a label loosely driven by the features."""
    rng = np.random.default_rng(seed)
    a = (rng.random(n) < p_a).astype(int)
    a2 = (rng.random(n) < 0.5).astype(int)
    X = rng.normal(size=(n, d)) + 0.5 * a[:, None]
    logits = X @ np.linspace(1.0, -0.5, d) + 0.3
    y = (rng.random(n) < 1 / (1 + np.exp(-logits))).astype(int)
    return Dataset(X, y, {"a1": a, "a2": a2})


@pytest.fixture
def small_data():
    return make_dataset()
