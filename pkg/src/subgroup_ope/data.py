"""Trajectories, importance-sampling records and dataset plumbing.

A logged episode is reduced to a single record ``(x, rho, g)``: the
initial-state features, the trajectory importance ratio and the discounted
return.  Everything downstream (loss, tree, inference) works on records.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyDataset, MixedWidth, ParseError, SchemaError, SupportViolation

logger = logging.getLogger(__name__)

_SEQ_FIELDS = ("actions", "rewards", "b_probs", "e_probs")


@dataclass(frozen=True)
class Trajectory:
    """One logged episode with the propensities of the actions taken."""

    id: str
    x0: tuple[float, ...]
    actions: tuple[int, ...]
    rewards: tuple[float, ...]
    b_probs: tuple[float, ...]
    e_probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        for name in ("rewards", "b_probs", "e_probs"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        n = len(self.actions)
        for name in _SEQ_FIELDS:
            if len(getattr(self, name)) != n:
                raise SchemaError(
                    f"length {len(getattr(self, name))} differs from actions length {n}", field=name
                )
        if not all(math.isfinite(r) for r in self.rewards):
            raise SchemaError("rewards must be finite", field="rewards")
        if any(not (p >= 0.0) for p in self.e_probs):
            raise SchemaError("evaluation probabilities must be >= 0", field="e_probs")

    def __len__(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class EvalRecord:
    x: tuple[float, ...]
    rho: float
    g: float


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented collection of :class:`EvalRecord`.

    ``X`` has shape ``(n, m)``; ``rho`` and ``g`` have shape ``(n,)``.
    ``g_inf`` is ``max |g|`` over the records (0 when empty).
    """

    X: np.ndarray
    rho: np.ndarray
    g: np.ndarray
    g_inf: float = field(init=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        rho = np.asarray(self.rho, dtype=float).reshape(-1)
        g = np.asarray(self.g, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(len(rho), -1) if len(rho) else X.reshape(0, 0)
        if not (X.shape[0] == len(rho) == len(g)):
            raise ValueError("X, rho and g must have the same number of rows")
        if len(rho) and (np.any(rho < 0) or not np.all(np.isfinite(rho)) or not np.all(np.isfinite(g))):
            raise ValueError("rho must be finite and nonnegative, g finite")
        for arr in (X, rho, g):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "g_inf", float(np.max(np.abs(g))) if len(g) else 0.0)

    @classmethod
    def from_records(cls, records: Iterable[EvalRecord], m: int | None = None) -> "Dataset":
        records = list(records)
        if not records:
            return cls.empty(m or 0)
        widths = {len(r.x) for r in records}
        if len(widths) != 1 or (m is not None and widths != {m}):
            raise MixedWidth(f"records have feature widths {sorted(widths)}")
        X = np.array([r.x for r in records], dtype=float)
        return cls(X, [r.rho for r in records], [r.g for r in records])

    @classmethod
    def empty(cls, m: int) -> "Dataset":
        return cls(np.zeros((0, m)), np.zeros(0), np.zeros(0))

    @property
    def m(self) -> int:
        return self.X.shape[1]

    @property
    def records(self) -> list[EvalRecord]:
        return [
            EvalRecord(tuple(x.tolist()), float(r), float(g))
            for x, r, g in zip(self.X, self.rho, self.g)
        ]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.rho[idx], self.g[idx])

    def __len__(self) -> int:
        return len(self.rho)

    def __getitem__(self, i: int) -> EvalRecord:
        return EvalRecord(tuple(self.X[i].tolist()), float(self.rho[i]), float(self.g[i]))

    def __iter__(self):
        return iter(self.records)


def discounted_return(traj: Trajectory, gamma: float) -> float:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    total = 0.0
    discount = 1.0
    for r in traj.rewards:
        total += discount * r
        discount *= gamma
    return total


def importance_ratio(traj: Trajectory) -> float:
    """Product over steps of ``e_prob / b_prob`` for the logged actions."""
    rho = 1.0
    for t, (pe, pb) in enumerate(zip(traj.e_probs, traj.b_probs)):
        if not pb > 0.0:
            raise SupportViolation(
                f"trajectory {traj.id!r}: behavior probability {pb} at step {t} is not positive"
            )
        rho *= pe / pb
    return rho


def to_records(trajs: Sequence[Trajectory], gamma: float) -> Dataset:
    if not trajs:
        return Dataset.empty(0)
    m = len(trajs[0].x0)
    for tr in trajs:
        if len(tr.x0) != m:
            raise MixedWidth(f"trajectory {tr.id!r} has {len(tr.x0)} features, expected {m}")
    X = np.array([tr.x0 for tr in trajs], dtype=float).reshape(len(trajs), m)
    rho = [importance_ratio(tr) for tr in trajs]
    g = [discounted_return(tr, gamma) for tr in trajs]
    return Dataset(X, rho, g)


def split_dataset(ds: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Split into disjoint partitioning and estimation parts.

    The first part receives ``round_half_up(fraction * n)`` records chosen by a
    uniform permutation drawn from ``seed``; both parts keep the original
    record order.
    """
    if len(ds) == 0:
        raise EmptyDataset("cannot split an empty dataset")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n = len(ds)
    k = int(math.floor(fraction * n + 0.5))
    perm = np.random.default_rng(seed).permutation(n)
    first = np.sort(perm[:k])
    second = np.sort(perm[k:])
    return ds.subset(first), ds.subset(second)


def trajectory_to_dict(traj: Trajectory) -> dict:
    return {
        "id": traj.id,
        "x0": list(traj.x0),
        "actions": list(traj.actions),
        "rewards": list(traj.rewards),
        "b_probs": list(traj.b_probs),
        "e_probs": list(traj.e_probs),
    }


def _number_list(obj: dict, name: str, line: int, integer: bool = False) -> list:
    if name not in obj:
        raise SchemaError("missing", field=name, line=line)
    value = obj[name]
    if not isinstance(value, list):
        raise SchemaError(f"expected an array, got {type(value).__name__}", field=name, line=line)
    kinds = (int,) if integer else (int, float)
    for v in value:
        if isinstance(v, bool) or not isinstance(v, kinds):
            want = "integers" if integer else "numbers"
            raise SchemaError(f"expected an array of {want}, found {v!r}", field=name, line=line)
    return value


def trajectory_from_dict(obj, line: int | None = None) -> Trajectory:
    if not isinstance(obj, dict):
        raise SchemaError("expected a JSON object", line=line)
    if "id" not in obj:
        raise SchemaError("missing", field="id", line=line)
    if not isinstance(obj["id"], str):
        raise SchemaError("expected a string", field="id", line=line)
    x0 = _number_list(obj, "x0", line)
    actions = _number_list(obj, "actions", line, integer=True)
    seqs = {name: _number_list(obj, name, line) for name in _SEQ_FIELDS[1:]}
    for name, seq in seqs.items():
        if len(seq) != len(actions):
            raise SchemaError(
                f"length {len(seq)} differs from actions length {len(actions)}", field=name, line=line
            )
    try:
        return Trajectory(obj["id"], x0, actions, seqs["rewards"], seqs["b_probs"], seqs["e_probs"])
    except SchemaError as exc:
        raise SchemaError(str(exc), field=exc.field, line=line) from None


def load_jsonl(path: str | Path) -> list[Trajectory]:
    trajs: list[Trajectory] = []
    width = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(exc.msg, line=lineno) from None
            traj = trajectory_from_dict(obj, line=lineno)
            if width is None:
                width = len(traj.x0)
            elif len(traj.x0) != width:
                raise SchemaError(f"has {len(traj.x0)} features, expected {width}", field="x0", line=lineno)
            trajs.append(traj)
    logger.debug("loaded %d trajectories from %s", len(trajs), path)
    return trajs


def save_jsonl(trajs: Iterable[Trajectory], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for traj in trajs:
            f.write(json.dumps(trajectory_to_dict(traj), allow_nan=False))
            f.write("\n")
