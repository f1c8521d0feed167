"""Partition losses: empirical adjusted MSE plus the confidence regularizers.

For a partition into groups ``l`` with ``n_l`` records each, the loss is the
record-average of

    -T_hat(l)^2 + 2 * Var(l) + C * R(l)

where ``Var`` is either the ESS-based variance bound or the sample variance of
the group mean, and ``R`` is the margin (or ratio) regularizer, which always
uses the ESS-based bound.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .errors import InadmissibleGroup, SchemaError, ZeroDenominator
from .estimators import Records, as_arrays, effect_terms

VARIANCE_MODES = ("proxy", "sample")
REG_MODES = ("off", "margin", "ratio")

#: ``c`` equivalent to a one-sided confidence of ``delta = 0.4``: sqrt((1 - delta) / delta).
DEFAULT_C_MULT = math.sqrt(0.6 / 0.4)


@dataclass(frozen=True)
class LossConfig:
    variance_mode: str = "proxy"
    reg_mode: str = "margin"
    C: float = 5.0
    alpha: float = 0.05
    c: float = DEFAULT_C_MULT
    min_leaf: int = 50
    max_depth: int | None = None
    max_thresholds: int = 64
    tol: float = 1e-12

    def __post_init__(self):
        if self.variance_mode not in VARIANCE_MODES:
            raise SchemaError(f"must be one of {VARIANCE_MODES}", field="variance_mode")
        if self.reg_mode not in REG_MODES:
            raise SchemaError(f"must be one of {REG_MODES}", field="reg_mode")
        for name in ("C", "alpha", "c", "tol"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not value >= 0:
                raise SchemaError("must be a nonnegative number", field=name)
        for name in ("min_leaf", "max_thresholds"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise SchemaError("must be an integer", field=name)
        if self.min_leaf < 2:
            raise SchemaError("must be >= 2", field="min_leaf")
        if self.max_thresholds < 1:
            raise SchemaError("must be >= 1", field="max_thresholds")
        if self.max_depth is not None and (
            isinstance(self.max_depth, bool) or not isinstance(self.max_depth, int) or self.max_depth < 0
        ):
            raise SchemaError("must be a nonnegative integer or null", field="max_depth")

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        if not isinstance(d, dict):
            raise SchemaError("expected an object", field="loss")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise SchemaError(f"unknown key(s) {unknown}", field=f"loss.{unknown[0]}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "LossConfig":
        return LossConfig(**{**self.to_dict(), **changes})


@dataclass(frozen=True)
class LabeledPartition:
    """Groups of records keyed by leaf id; groups are disjoint and nonempty."""

    groups: tuple

    def __init__(self, groups: Iterable[tuple[object, Records]]):
        object.__setattr__(self, "groups", tuple((leaf, recs) for leaf, recs in groups))

    @property
    def n(self) -> int:
        return sum(len(as_arrays(recs)[0]) for _, recs in self.groups)


def margin_regularizer(t_hat, v_proxy, alpha: float, c: float):
    """``max(0, alpha - (|t_hat| - c * sqrt(v_proxy)))``; vectorizes over arrays."""
    out = np.maximum(0.0, alpha - (np.abs(t_hat) - c * np.sqrt(v_proxy)))
    return float(out) if np.ndim(out) == 0 else out


def ratio_regularizer(t_hat: float, v_proxy: float, alpha: float, c: float) -> float:
    """``max(0, alpha - |t_hat| / (c * sqrt(v_proxy)))``."""
    denom = c * math.sqrt(v_proxy) if v_proxy > 0 else 0.0
    if denom == 0.0:
        raise ZeroDenominator("c * sqrt(v_proxy) is zero")
    return max(0.0, alpha - abs(t_hat) / denom)


def _ratio_regularizer_limit(t_hat, v_proxy, alpha, c):
    # denominator zero: alpha when t_hat == 0, else the ratio is +inf and R = 0
    t_hat = np.asarray(t_hat, dtype=float)
    denom = c * np.sqrt(v_proxy)
    safe = np.where(denom > 0, denom, 1.0)
    r = np.maximum(0.0, alpha - np.abs(t_hat) / safe)
    limit = np.where(t_hat == 0.0, float(alpha), 0.0)
    return np.where(denom > 0, r, limit)


def group_terms(n, sum_y, ss_y, sum_rho, sum_rho2, cfg: LossConfig, g_inf: float, *, regularize: bool = True):
    """Per-record loss contribution of groups described by summary statistics.

    ``ss_y`` is the sum of squared deviations of ``rho*g - g`` from the group
    mean.  Inputs may be scalars or equally-shaped arrays.  The caller is
    responsible for admissibility.
    """
    n = np.asarray(n, dtype=float)
    t_hat = sum_y / n
    with np.errstate(divide="ignore", invalid="ignore"):
        ess = np.clip(np.asarray(sum_rho, dtype=float) ** 2 / sum_rho2, 1.0, n)
        v_proxy = np.maximum(g_inf * g_inf * (1.0 / ess - 1.0 / n), 0.0)
        if cfg.variance_mode == "proxy":
            var = v_proxy
        else:
            var = np.maximum(ss_y, 0.0) / (n - 1.0) / n
    term = -t_hat * t_hat + 2.0 * var
    if regularize and cfg.reg_mode != "off" and cfg.C != 0:
        if cfg.reg_mode == "margin":
            reg = np.maximum(0.0, cfg.alpha - (np.abs(t_hat) - cfg.c * np.sqrt(v_proxy)))
        else:
            reg = _ratio_regularizer_limit(t_hat, v_proxy, cfg.alpha, cfg.c)
        term = term + cfg.C * reg
    return term


def _check_admissible(leaf, rho: np.ndarray, cfg: LossConfig, needs_proxy: bool) -> None:
    if len(rho) == 0:
        raise InadmissibleGroup(leaf, "empty group")
    if needs_proxy and not np.any(rho > 0):
        raise InadmissibleGroup(leaf, "all importance ratios are zero")
    if cfg.variance_mode == "sample" and len(rho) < 2:
        raise InadmissibleGroup(leaf, "sample variance needs at least 2 records")


def _partition_loss(part, cfg: LossConfig, g_inf: float, regularize: bool) -> float:
    groups = part.groups if isinstance(part, LabeledPartition) else tuple(part)
    needs_proxy = cfg.variance_mode == "proxy" or (regularize and cfg.reg_mode != "off")
    total = 0.0
    count = 0
    for leaf, recs in sorted(groups, key=lambda item: item[0]):
        rho, g = as_arrays(recs)
        _check_admissible(leaf, rho, cfg, needs_proxy)
        y = effect_terms(rho, g)
        n = len(y)
        mean = float(np.mean(y))
        term = group_terms(
            n,
            float(np.sum(y)),
            float(np.sum((y - mean) ** 2)),
            float(np.sum(rho)),
            float(np.dot(rho, rho)),
            cfg,
            g_inf,
            regularize=regularize,
        )
        total += n * float(term)
        count += n
    if count == 0:
        raise InadmissibleGroup(None, "partition has no records")
    return total / count


def emse(part: LabeledPartition | Sequence, cfg: LossConfig, g_inf: float) -> float:
    """Empirical adjusted MSE of a labeled partition (no regularizer)."""
    return _partition_loss(part, cfg, g_inf, regularize=False)


def giope_loss(part: LabeledPartition | Sequence, cfg: LossConfig, g_inf: float) -> float:
    """Empirical adjusted MSE plus ``C/N`` times the summed per-record regularizer."""
    return _partition_loss(part, cfg, g_inf, regularize=True)
