from __future__ import annotations

import numpy as np
import pytest

from takeover.booster import Ensemble, Hyperparams, Leaf, Split
from takeover.dataset import CONTINUOUS, VariableSpec

# Outcome lines collected by the acceptance module, echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def continuous_schema(m: int) -> tuple[VariableSpec, ...]:
    return tuple(VariableSpec(f"x{j}", CONTINUOUS, (), "") for j in range(m))


def random_tree(rng: np.random.Generator, n_features: int, depth: int, cover: float):
    """Random tree whose child covers split the parent's cover."""
    if depth == 0 or rng.random() < 0.2:
        return Leaf(float(rng.normal()), cover)
    frac = float(rng.uniform(0.1, 0.9))
    return Split(
        feature=int(rng.integers(n_features)),
        threshold=float(rng.normal()),
        default_left=bool(rng.random() < 0.5),
        left=random_tree(rng, n_features, depth - 1, cover * frac),
        right=random_tree(rng, n_features, depth - 1, cover * (1 - frac)),
        cover=cover,
    )


def random_ensemble(rng: np.random.Generator, n_features: int, n_trees: int, depth: int) -> Ensemble:
    trees = tuple(random_tree(rng, n_features, depth, 100.0) for _ in range(n_trees))
    names = tuple(f"x{j}" for j in range(n_features))
    return Ensemble(float(rng.normal()), trees, "", Hyperparams(), names)


def random_instances(rng: np.random.Generator, n: int, m: int, missing: float = 0.2) -> np.ndarray:
    X = rng.normal(size=(n, m))
    X[rng.random((n, m)) < missing] = np.nan
    return X


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
