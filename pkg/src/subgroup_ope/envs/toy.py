"""One-dimensional toy MDP on ``[0, 1]``.

``x' = clip(x + kappa * a + eps, 0, 1)`` with ``a in {-1, 0, 1}`` and
``eps ~ N(0, noise_sd^2)``; every step pays ``1 - |x' - 0.5|``.  Both policies
put 0.5 on one direction and 0.25 on each other action:

* behavior: right-heavy when ``x < b_switch``, left-heavy otherwise;
* evaluation: left-heavy when ``x > e_switch``, right-heavy otherwise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..data import Trajectory
from ..errors import SchemaError

ACTIONS = np.array([-1, 0, 1])
RIGHT_HEAVY = np.array([0.25, 0.25, 0.5])
LEFT_HEAVY = np.array([0.5, 0.25, 0.25])


@dataclass(frozen=True)
class ToyConfig:
    kappa: float = 0.2
    noise_sd: float = 0.05
    horizon: int = 4
    n_trajectories: int = 50000
    gamma: float = 0.99
    b_switch: float = 0.2
    e_switch: float = 0.8
    same_policy: bool = False

    def __post_init__(self):
        if self.noise_sd < 0:
            raise SchemaError("must be >= 0", field="noise_sd")
        if isinstance(self.horizon, bool) or not isinstance(self.horizon, int) or self.horizon < 0:
            raise SchemaError("must be a nonnegative integer", field="horizon")
        if isinstance(self.n_trajectories, bool) or not isinstance(self.n_trajectories, int) or self.n_trajectories < 0:
            raise SchemaError("must be a nonnegative integer", field="n")
        if not 0.0 <= self.gamma <= 1.0:
            raise SchemaError("must lie in [0, 1]", field="gamma")

    @classmethod
    def from_dict(cls, d: dict) -> "ToyConfig":
        d = dict(d)
        if "n" in d:
            d["n_trajectories"] = d.pop("n")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise SchemaError(f"unknown key(s) {unknown}", field=f"toy.{unknown[0]}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n"] = d.pop("n_trajectories")
        return d

    @property
    def n_steps(self) -> int:
        return self.horizon + 1


def behavior_probs(x: np.ndarray, cfg: ToyConfig) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.where((x < cfg.b_switch)[..., None], RIGHT_HEAVY, LEFT_HEAVY)


def evaluation_probs(x: np.ndarray, cfg: ToyConfig) -> np.ndarray:
    if cfg.same_policy:
        return behavior_probs(x, cfg)
    x = np.asarray(x, dtype=float)
    return np.where((x > cfg.e_switch)[..., None], LEFT_HEAVY, RIGHT_HEAVY)


def reward(x):
    return 1.0 - np.abs(np.asarray(x) - 0.5)


def _rollout(x0, policy, U, Z, cfg: ToyConfig, log_policy=None):
    """Roll out ``policy`` from ``x0`` with pre-drawn uniforms ``U`` and normals ``Z``.

    ``U`` and ``Z`` have shape ``x0.shape + (H + 1,)``.  Returns the discounted
    return and, when ``log_policy`` is given, the per-step logs.
    """
    x = np.array(x0, dtype=float)
    g = np.zeros(x.shape)
    disc = 1.0
    logs = []
    for t in range(cfg.n_steps):
        probs = policy(x, cfg)
        cum = np.cumsum(probs, axis=-1)
        a_idx = np.minimum((U[..., t, None] >= cum).sum(axis=-1), 2)
        x_next = np.clip(x + cfg.kappa * ACTIONS[a_idx] + cfg.noise_sd * Z[..., t], 0.0, 1.0)
        r = reward(x_next)
        if log_policy is not None:
            pb = np.take_along_axis(probs, a_idx[..., None], -1)[..., 0]
            pe = np.take_along_axis(log_policy(x, cfg), a_idx[..., None], -1)[..., 0]
            logs.append((ACTIONS[a_idx], r, pb, pe))
        g += disc * r
        disc *= cfg.gamma
        x = x_next
    return g, logs


def toy_generate(cfg: ToyConfig, seed: int, n: int | None = None) -> list[Trajectory]:
    """Behavior-policy trajectories with ``x0 ~ Uniform[0, 1]``."""
    n = cfg.n_trajectories if n is None else n
    rng = np.random.default_rng(seed)
    x0 = rng.random(n)
    U = rng.random((n, cfg.n_steps))
    Z = rng.standard_normal((n, cfg.n_steps))
    _, logs = _rollout(x0, behavior_probs, U, Z, cfg, log_policy=evaluation_probs)
    if logs:
        acts, rews, pbs, pes = (np.stack(col, axis=1) for col in zip(*logs))
    else:
        acts = rews = pbs = pes = np.zeros((n, 0))
    return [
        Trajectory(str(i), [float(x0[i])], acts[i].tolist(), rews[i].tolist(), pbs[i].tolist(), pes[i].tolist())
        for i in range(n)
    ]


def toy_oracle_many(cfg: ToyConfig, xs, n_rollouts: int, seed: int) -> np.ndarray:
    """Monte-Carlo ``t(x)`` for many start points with common random numbers.

    The same uniforms and noise drive the evaluation and behavior rollouts, so
    identical policies give exactly zero.
    """
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    xs = np.asarray(xs, dtype=float).reshape(-1)
    rng = np.random.default_rng(seed)
    shape = (len(xs), n_rollouts, cfg.n_steps)
    U = rng.random(shape)
    Z = rng.standard_normal(shape)
    start = np.repeat(xs[:, None], n_rollouts, axis=1)
    g_e, _ = _rollout(start, evaluation_probs, U, Z, cfg)
    g_b, _ = _rollout(start, behavior_probs, U, Z, cfg)
    return g_e.mean(axis=1) - g_b.mean(axis=1)


def toy_oracle(cfg: ToyConfig, x0: float, n_rollouts: int = 30, seed: int = 0) -> float:
    return float(toy_oracle_many(cfg, [x0], n_rollouts, seed)[0])


def toy_test_grid(n_points: int = 25) -> np.ndarray:
    return np.linspace(0.0, 1.0, n_points)
