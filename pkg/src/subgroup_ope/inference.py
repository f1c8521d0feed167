"""Estimation phase: per-leaf effects with bootstrap intervals, and evaluation metrics."""

from __future__ import annotations

import csv
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import Dataset
from .errors import EmptyGroup, EmptyLeaf, MissingTruth
from .estimators import Records, as_arrays, effect_terms, ess, group_te_estimate
from .tree import Tree


@dataclass(frozen=True)
class GroupEstimate:
    leaf: int
    n: int
    t_hat: float
    ci_low: float
    ci_high: float
    ess: float
    v_proxy: float
    rule: str


@dataclass(frozen=True)
class MetricsReport:
    individual_mse: float
    group_mse: float
    coverage: float
    mean_ci_width: float
    n_groups: int


def child_seed(seed: int, *keys: int) -> int:
    """Deterministic 63-bit seed derived from ``seed`` and integer ``keys``."""
    state = np.random.SeedSequence([int(seed), *(int(k) for k in keys)]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


def bootstrap_ci(records: Records, B: int = 1000, level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval for the group treatment effect.

    Replicate ``b`` resamples with replacement using a generator seeded by
    ``(seed, b)``, so the interval does not depend on the order in which
    replicates are evaluated.
    """
    rho, g = as_arrays(records)
    n = len(rho)
    if n == 0:
        raise EmptyGroup("bootstrap of an empty group")
    if B < 1:
        raise ValueError("B must be >= 1")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    y = effect_terms(rho, g)
    reps = np.empty(B)
    for b in range(B):
        idx = np.random.default_rng([int(seed), b]).integers(0, n, size=n)
        reps[b] = np.mean(y[idx])
    reps.sort()
    tail = (1.0 - level) / 2.0
    low, high = np.quantile(reps, [tail, 1.0 - tail], method="linear")
    return float(low), float(high)


def estimate_groups(
    tree: Tree,
    est: Dataset,
    B: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    g_inf: float | None = None,
    feature_names: Sequence[str] | None = None,
) -> list[GroupEstimate]:
    """One :class:`GroupEstimate` per leaf, computed only from ``est``.

    Raises :class:`EmptyLeaf` listing every leaf without estimation records.
    """
    g_inf = est.g_inf if g_inf is None else float(g_inf)
    leaves = tree.apply(est.X) if len(est) else np.zeros(0, dtype=int)
    members = [np.flatnonzero(leaves == leaf) for leaf in range(tree.leaf_count)]
    empty = [leaf for leaf, idx in enumerate(members) if len(idx) == 0]
    if empty:
        raise EmptyLeaf(empty)
    rules = tree.rules(feature_names)
    out = []
    for leaf, idx in enumerate(members):
        part = est.subset(idx)
        n = len(part)
        e = ess(part.rho)
        low, high = bootstrap_ci(part, B, level, child_seed(seed, leaf))
        out.append(
            GroupEstimate(
                leaf=leaf,
                n=n,
                t_hat=group_te_estimate(part),
                ci_low=low,
                ci_high=high,
                ess=e,
                v_proxy=max(g_inf * g_inf * (1.0 / e - 1.0 / n), 0.0),
                rule=rules[leaf],
            )
        )
    return out


def compute_metrics(
    estimates: Sequence[GroupEstimate],
    tree: Tree,
    test_points: Iterable[tuple[Sequence[float], float]],
    group_truth: Mapping[int, float] | Iterable[tuple[int, float]],
) -> MetricsReport:
    truth = dict(group_truth)
    by_leaf = {e.leaf: e for e in estimates}
    for e in estimates:
        if e.leaf not in truth:
            raise MissingTruth(e.leaf)
    points = list(test_points)
    if points:
        X = np.array([p[0] for p in points], dtype=float).reshape(len(points), -1)
        t_true = np.array([p[1] for p in points], dtype=float)
        leaves = tree.apply(X)
        t_pred = np.array([by_leaf[int(l)].t_hat for l in leaves])
        individual_mse = float(np.mean((t_true - t_pred) ** 2))
    else:
        individual_mse = float("nan")
    G = len(estimates)
    group_mse = float(np.mean([(truth[e.leaf] - e.t_hat) ** 2 for e in estimates]))
    coverage = float(np.mean([e.ci_low <= truth[e.leaf] <= e.ci_high for e in estimates]))
    width = float(np.mean([e.ci_high - e.ci_low for e in estimates]))
    return MetricsReport(individual_mse, group_mse, coverage, width, G)


GROUP_COLUMNS = [f.name for f in fields(GroupEstimate)]
METRIC_COLUMNS = [f.name for f in fields(MetricsReport)]


def _fmt(value):
    return repr(float(value)) if isinstance(value, (float, np.floating)) else value


def write_group_report(estimates: Sequence[GroupEstimate], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(GROUP_COLUMNS)
        for e in sorted(estimates, key=lambda e: e.leaf):
            w.writerow([_fmt(v) for v in astuple(e)])


def read_group_report(path: str | Path) -> list[GroupEstimate]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    return [
        GroupEstimate(
            leaf=int(r["leaf"]), n=int(r["n"]), t_hat=float(r["t_hat"]), ci_low=float(r["ci_low"]),
            ci_high=float(r["ci_high"]), ess=float(r["ess"]), v_proxy=float(r["v_proxy"]), rule=r["rule"],
        )
        for r in rows
    ]


def write_metrics(report: MetricsReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(METRIC_COLUMNS)
        w.writerow([_fmt(v) for v in astuple(report)])
