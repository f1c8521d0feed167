from __future__ import annotations

import numpy as np
import pytest

from subgroup_ope.data import Dataset, EvalRecord
from subgroup_ope.envs.tabular import TabularMDP, TabularPolicy


def make_dataset(X, rho, g) -> Dataset:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return Dataset.from_records([EvalRecord(tuple(x), float(r), float(v)) for x, r, v in zip(X, rho, g)], m=X.shape[1])


def records(pairs):
    """``EvalRecord`` list from ``(rho, g)`` pairs with a dummy feature."""
    return [EvalRecord((0.0,), float(r), float(g)) for r, g in pairs]


def two_group_dataset(n_per_side: int = 10) -> Dataset:
    """1-D data: x < 0.5 has rho*g - g = +1, x >= 0.5 has -1, every group with V_u = 0."""
    xs = np.concatenate([np.linspace(0.0, 0.4, n_per_side), np.linspace(0.6, 1.0, n_per_side)])
    g = np.concatenate([np.ones(n_per_side), -np.ones(n_per_side)])
    rho = np.full(2 * n_per_side, 2.0)
    return make_dataset(xs, rho, g)


def random_mdp(rng, S=4, A=3, horizon=3, gamma=0.9, n_terminal=1) -> TabularMDP:
    P = rng.random((S, A, S)) + 0.05
    P /= P.sum(axis=2, keepdims=True)
    terminal = np.zeros(S, dtype=bool)
    terminal[S - n_terminal:] = True
    for s in np.flatnonzero(terminal):
        P[s] = 0.0
        P[s, :, s] = 1.0
    reward = rng.normal(size=S)
    initial = np.zeros(S)
    initial[: S - n_terminal] = rng.random(S - n_terminal) + 0.1
    initial /= initial.sum()
    return TabularMDP(P, reward, initial, terminal, horizon, gamma)


def random_policy(rng, S, A, floor=0.05) -> TabularPolicy:
    p = rng.random((S, A)) + floor
    return TabularPolicy(p / p.sum(axis=1, keepdims=True))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance results, filled by test_acceptance.py and printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
