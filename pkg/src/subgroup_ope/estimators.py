"""Importance-sampling estimators for a single group of records.

Every function accepts either a :class:`~subgroup_ope.data.Dataset` or any
sequence of :class:`~subgroup_ope.data.EvalRecord`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .data import Dataset, EvalRecord
from .errors import DegenerateWeights, EmptyGroup, NotNormalized, SupportViolation, TooFewSamples

Records = Union[Dataset, Sequence[EvalRecord]]


@dataclass(frozen=True)
class GroupStats:
    n: int
    t_hat: float
    ess: float
    v_proxy: float
    v_sample: float


def as_arrays(records: Records) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(rho, g)`` float arrays for a group of records."""
    if isinstance(records, Dataset):
        return records.rho, records.g
    records = list(records)
    rho = np.fromiter((r.rho for r in records), dtype=float, count=len(records))
    g = np.fromiter((r.g for r in records), dtype=float, count=len(records))
    return rho, g


def effect_terms(rho: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Per-record contributions ``rho * g - g`` of the group effect estimate."""
    return rho * g - g


def group_te_estimate(records: Records) -> float:
    rho, g = as_arrays(records)
    if len(rho) == 0:
        raise EmptyGroup("group treatment effect of an empty group")
    return float(np.mean(effect_terms(rho, g)))


def ess(weights) -> float:
    """Kish effective sample size ``(sum w)^2 / sum w^2``.

    Clipped to ``[1, len(weights)]``, the exact mathematical range, so that
    rounding never leaks outside it.
    """
    w = np.asarray(weights, dtype=float).reshape(-1)
    if len(w) == 0:
        raise EmptyGroup("ESS of an empty weight vector")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    top = float(w.max())
    if top <= 0.0:
        raise DegenerateWeights("all importance weights are zero")
    # scaling by the max makes equal weights exactly 1, so ESS = n exactly
    w = w / top
    s1 = float(np.sum(w))
    s2 = float(np.dot(w, w))
    return min(max(s1 * s1 / s2, 1.0), float(len(w)))


def variance_upper_bound(records: Records, g_inf: float) -> float:
    """Variance proxy ``g_inf^2 * (1/ESS - 1/n)`` for the group mean estimator."""
    rho, _ = as_arrays(records)
    n = len(rho)
    if n == 0:
        raise EmptyGroup("variance bound of an empty group")
    e = ess(rho)
    return max(g_inf * g_inf * (1.0 / e - 1.0 / n), 0.0)


def sample_variance_of_mean(records: Records) -> float:
    rho, g = as_arrays(records)
    n = len(rho)
    if n < 2:
        raise TooFewSamples(f"sample variance needs at least 2 records, got {n}")
    return float(np.var(effect_terms(rho, g), ddof=1) / n)


def wis_value(records: Records) -> float:
    """Weighted importance sampling value ``sum(rho * g) / sum(rho)``."""
    rho, g = as_arrays(records)
    total = float(np.sum(rho))
    if not total > 0.0:
        raise DegenerateWeights("weighted importance sampling needs a positive weight sum")
    return float(np.dot(rho, g) / total)


def renyi_d2(p, q, atol: float = 1e-9) -> float:
    """Exponentiated order-2 Renyi divergence ``sum_x q(x) (p(x)/q(x))^2``."""
    p = np.asarray(p, dtype=float).reshape(-1)
    q = np.asarray(q, dtype=float).reshape(-1)
    if p.shape != q.shape:
        raise ValueError("p and q must share one support")
    if np.any(p < 0) or np.any(q < 0):
        raise NotNormalized("probabilities must be nonnegative")
    if abs(p.sum() - 1.0) > atol or abs(q.sum() - 1.0) > atol:
        raise NotNormalized(f"distributions must sum to 1 (got {p.sum()}, {q.sum()})")
    support = p > 0
    if np.any(q[support] <= 0):
        raise SupportViolation("q must be positive wherever p is positive")
    return float(np.sum(p[support] ** 2 / q[support]))


def group_stats(records: Records, g_inf: float) -> GroupStats:
    """All per-group quantities at once; ``v_sample`` is 0 for singleton groups."""
    rho, g = as_arrays(records)
    n = len(rho)
    if n == 0:
        raise EmptyGroup("statistics of an empty group")
    y = effect_terms(rho, g)
    e = ess(rho)
    return GroupStats(
        n=n,
        t_hat=float(np.mean(y)),
        ess=e,
        v_proxy=max(g_inf * g_inf * (1.0 / e - 1.0 / n), 0.0),
        v_sample=float(np.var(y, ddof=1) / n) if n >= 2 else 0.0,
    )
