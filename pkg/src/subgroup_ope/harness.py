"""Experiment configuration and the simulate -> fit -> estimate -> oracle pipeline.

Seeds
-----
Every stage draws from its own seed, derived from a master seed ``s`` with
:func:`stage_seed` (``SeedSequence([s, stage])``).  Stage codes are fixed:
simulate=1, split=2, bootstrap=3, oracle=4.  An ablation cell
``(variant, horizon, seed)`` uses master seed ``seed`` with the environment
horizon set to ``horizon``, so any cell can be replayed with the single-step
commands.  Variants never enter the derivation: all variants of a
``(horizon, seed)`` cell share the same data, split and bootstrap draws.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .data import Dataset, Trajectory, split_dataset, to_records
from .errors import SchemaError
from .inference import GroupEstimate, MetricsReport, child_seed, compute_metrics, estimate_groups
from .loss import LossConfig
from .tree import Tree, build_tree
from .envs.sepsis import SepsisConfig, build_sepsis_mdp, sepsis_policies
from .envs.tabular import exact_group_effect, exact_treatment_effect, return_bound, simulate
from .envs.toy import ToyConfig, toy_generate, toy_oracle_many, toy_test_grid

logger = logging.getLogger(__name__)

STAGES = {"simulate": 1, "split": 2, "bootstrap": 3, "oracle": 4}

VARIANTS = {
    "GIOPE": {"variance_mode": "proxy", "reg_mode": "margin"},
    "GIOPE-R": {"variance_mode": "proxy", "reg_mode": "off"},
    "GIOPE-RP": {"variance_mode": "sample", "reg_mode": "off"},
}

CONFIG_KEYS = (
    "env", "toy", "tabular", "seed", "loss", "split_fraction", "bootstrap_B", "ci_level",
    "seeds", "variants", "horizons", "g_inf", "oracle",
)


def stage_seed(seed: int, stage: str) -> int:
    return child_seed(seed, STAGES[stage])


@dataclass(frozen=True)
class OracleConfig:
    n_test: int | None = None  # toy: grid size (25); tabular: sampled initial states (2000)
    rollouts: int = 30
    group_points: int = 200

    @classmethod
    def from_dict(cls, d) -> "OracleConfig":
        if not isinstance(d, dict):
            raise SchemaError("expected an object", field="oracle")
        unknown = sorted(set(d) - {f.name for f in fields(cls)})
        if unknown:
            raise SchemaError(f"unknown key(s) {unknown}", field=f"oracle.{unknown[0]}")
        return cls(**d)


def _require(cond: bool, name: str, message: str) -> None:
    if not cond:
        raise SchemaError(message, field=name)


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "tabular"
    toy: ToyConfig = field(default_factory=ToyConfig)
    tabular: SepsisConfig = field(default_factory=SepsisConfig)
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    split_fraction: float = 0.5
    bootstrap_B: int = 1000
    ci_level: float = 0.95
    seeds: tuple[int, ...] = (0,)
    variants: tuple[str, ...] = tuple(VARIANTS)
    horizons: tuple[int, ...] = ()
    g_inf: float | str | None = None
    oracle: OracleConfig = field(default_factory=OracleConfig)

    def __post_init__(self):
        _require(self.env in ("toy", "tabular"), "env", f"must be 'toy' or 'tabular', got {self.env!r}")
        _require(isinstance(self.seed, int) and not isinstance(self.seed, bool) and self.seed >= 0,
                 "seed", "must be a nonnegative integer")
        _require(isinstance(self.split_fraction, (int, float)) and 0 < self.split_fraction < 1,
                 "split_fraction", "must lie in (0, 1)")
        _require(isinstance(self.bootstrap_B, int) and self.bootstrap_B >= 1, "bootstrap_B", "must be >= 1")
        _require(isinstance(self.ci_level, (int, float)) and 0 < self.ci_level < 1, "ci_level", "must lie in (0, 1)")
        _require(len(self.seeds) > 0 and all(isinstance(s, int) and s >= 0 for s in self.seeds),
                 "seeds", "must be a nonempty list of nonnegative integers")
        _require(len(self.variants) > 0 and all(v in VARIANTS for v in self.variants),
                 "variants", f"must be a nonempty subset of {list(VARIANTS)}")
        _require(all(isinstance(h, int) and h >= 0 for h in self.horizons), "horizons",
                 "must be nonnegative integers")
        _require(self.g_inf is None or self.g_inf == "bound"
                 or (isinstance(self.g_inf, (int, float)) and self.g_inf >= 0),
                 "g_inf", "must be null, 'bound' or a nonnegative number")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise SchemaError("config must be a JSON object")
        unknown = sorted(set(d) - set(CONFIG_KEYS))
        if unknown:
            raise SchemaError(f"unknown top-level key(s) {unknown}", field=unknown[0])
        kw = dict(d)
        if "env" in kw and not isinstance(kw["env"], str):
            raise SchemaError("must be 'toy' or 'tabular'", field="env")
        if "toy" in kw:
            kw["toy"] = ToyConfig.from_dict(_obj(kw["toy"], "toy"))
        if "tabular" in kw:
            kw["tabular"] = SepsisConfig.from_dict(_obj(kw["tabular"], "tabular"))
        if "loss" in kw:
            kw["loss"] = LossConfig.from_dict(_obj(kw["loss"], "loss"))
        if "oracle" in kw:
            kw["oracle"] = OracleConfig.from_dict(kw["oracle"])
        for key in ("seeds", "variants", "horizons"):
            if key in kw:
                if not isinstance(kw[key], list):
                    raise SchemaError("must be a list", field=key)
                kw[key] = tuple(kw[key])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise SchemaError(str(exc)) from None

    def to_dict(self) -> dict:
        return {
            "env": self.env,
            "toy": self.toy.to_dict(),
            "tabular": self.tabular.to_dict(),
            "seed": self.seed,
            "loss": self.loss.to_dict(),
            "split_fraction": self.split_fraction,
            "bootstrap_B": self.bootstrap_B,
            "ci_level": self.ci_level,
            "seeds": list(self.seeds),
            "variants": list(self.variants),
            "horizons": list(self.horizons),
            "g_inf": self.g_inf,
            "oracle": asdict(self.oracle),
        }

    def replace(self, **changes) -> "ExperimentConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return ExperimentConfig(**d)

    @property
    def horizon(self) -> int:
        return self.toy.horizon if self.env == "toy" else self.tabular.horizon

    @property
    def gamma(self) -> float:
        return self.toy.gamma if self.env == "toy" else self.tabular.gamma

    def with_horizon(self, horizon: int) -> "ExperimentConfig":
        if self.env == "toy":
            return self.replace(toy=ToyConfig(**{**asdict(self.toy), "horizon": horizon}))
        return self.replace(tabular=SepsisConfig(**{**{f.name: getattr(self.tabular, f.name)
                                                      for f in fields(self.tabular)}, "horizon": horizon}))

    def variant_loss(self, variant: str) -> LossConfig:
        return self.loss.replace(**VARIANTS[variant])


def _obj(value, name):
    if not isinstance(value, dict):
        raise SchemaError("expected an object", field=name)
    return value


class ToyEnv:
    def __init__(self, cfg: ToyConfig, oracle: OracleConfig):
        self.cfg = cfg
        self.oracle_cfg = oracle
        self.gamma = cfg.gamma
        self.feature_names = ("x",)

    def simulate(self, seed: int) -> list[Trajectory]:
        return toy_generate(self.cfg, seed)

    def return_bound(self) -> float:
        # rewards lie in [0.5, 1]
        g = self.cfg.gamma
        return float(self.cfg.n_steps if g == 1.0 else (1 - g ** self.cfg.n_steps) / (1 - g))

    def test_points(self, seed: int) -> tuple[np.ndarray, np.ndarray]:
        grid = toy_test_grid(self.oracle_cfg.n_test or 25)
        t = toy_oracle_many(self.cfg, grid, self.oracle_cfg.rollouts, child_seed(seed, 0))
        return grid[:, None], t

    def group_truth(self, tree: Tree, seed: int) -> dict[int, float]:
        """Mean MC effect over points drawn uniformly inside each leaf's interval."""
        out = {}
        k = self.oracle_cfg.group_points
        for leaf, (lo, hi) in tree.boxes().items():
            a, b = max(lo[0], 0.0), min(hi[0], 1.0)
            if not b > a:
                continue
            rng = np.random.default_rng(child_seed(seed, 1, leaf))
            xs = a + (b - a) * (1.0 - rng.random(k))  # in (a, b]
            t = toy_oracle_many(self.cfg, xs, self.oracle_cfg.rollouts, child_seed(seed, 2, leaf))
            out[leaf] = float(np.mean(t))
        return out


class TabularEnv:
    def __init__(self, cfg: SepsisConfig, oracle: OracleConfig):
        self.cfg = cfg
        self.oracle_cfg = oracle
        self.mdp = build_sepsis_mdp(cfg)
        self.pi_st, self.pi_b, self.pi_e = sepsis_policies(self.mdp, cfg)
        self.gamma = cfg.gamma
        self.feature_names = self.mdp.feature_names
        self._t = exact_treatment_effect(self.mdp, self.pi_e, self.pi_b)

    def simulate(self, seed: int) -> list[Trajectory]:
        return simulate(self.mdp, self.pi_b, self.pi_e, self.cfg.n, seed)

    def return_bound(self) -> float:
        return return_bound(self.mdp)

    def test_points(self, seed: int) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng(child_seed(seed, 0))
        states = rng.choice(self.mdp.n_states, size=self.oracle_cfg.n_test or 2000, p=self.mdp.initial)
        return self.mdp.features[states], self._t[states]

    def group_truth(self, tree: Tree, seed: int) -> dict[int, float]:
        """Initial-distribution-weighted mean of the exact effect over each leaf's states."""
        states = np.flatnonzero(self.mdp.initial > 0)
        leaves = tree.apply(self.mdp.features[states])
        return {int(leaf): exact_group_effect(self.mdp, self.pi_e, self.pi_b, states[leaves == leaf])
                for leaf in np.unique(leaves)}


def make_env(cfg: ExperimentConfig):
    if cfg.env == "toy":
        return ToyEnv(cfg.toy, cfg.oracle)
    return TabularEnv(cfg.tabular, cfg.oracle)


def resolve_g_inf(cfg: ExperimentConfig, ds: Dataset, env=None) -> float:
    """The ``g_inf`` used by the loss: the full dataset's ``max |g|`` unless overridden."""
    if cfg.g_inf is None:
        return ds.g_inf
    if cfg.g_inf == "bound":
        return float((env or make_env(cfg)).return_bound())
    return float(cfg.g_inf)


def simulate_dataset(cfg: ExperimentConfig, env=None) -> list[Trajectory]:
    env = env or make_env(cfg)
    return env.simulate(stage_seed(cfg.seed, "simulate"))


def split_halves(cfg: ExperimentConfig, ds: Dataset) -> tuple[Dataset, Dataset]:
    return split_dataset(ds, cfg.split_fraction, stage_seed(cfg.seed, "split"))


def fit(cfg: ExperimentConfig, ds: Dataset, loss: LossConfig | None = None, env=None) -> tuple[Tree, dict]:
    """Partitioning phase on the first half of ``ds``; returns the tree and a fit report."""
    loss = loss or cfg.loss
    part, est = split_halves(cfg, ds)
    g_inf = resolve_g_inf(cfg, ds, env)
    trace: list[dict] = []
    tree = build_tree(part, loss, g_inf=g_inf, trace=trace)
    report = {
        "n_records": len(ds),
        "n_partition": len(part),
        "n_estimation": len(est),
        "g_inf": g_inf,
        "loss": loss.to_dict(),
        "leaf_count": tree.leaf_count,
        "splits": trace,
    }
    return tree, report


def estimate(cfg: ExperimentConfig, ds: Dataset, tree: Tree, env=None,
             feature_names: Sequence[str] | None = None) -> list[GroupEstimate]:
    """Estimation phase on the second half of ``ds``."""
    _, est = split_halves(cfg, ds)
    return estimate_groups(tree, est, cfg.bootstrap_B, cfg.ci_level, stage_seed(cfg.seed, "bootstrap"),
                           g_inf=resolve_g_inf(cfg, ds, env), feature_names=feature_names)


def oracle(cfg: ExperimentConfig, env, tree: Tree | None = None):
    """``(X_test, t_test, group_truth or None)`` for the configured environment."""
    seed = stage_seed(cfg.seed, "oracle")
    X, t = env.test_points(seed)
    truth = env.group_truth(tree, seed) if tree is not None else None
    return X, t, truth


def metrics_for(estimates, tree, X, t, truth) -> MetricsReport:
    return compute_metrics(estimates, tree, zip(X.tolist(), t.tolist()), truth)


METRIC_FIELDS = ("individual_mse", "group_mse", "coverage", "mean_ci_width", "n_groups")


def run_cell(cfg: ExperimentConfig, horizon: int, seed: int) -> list[dict]:
    """All variants for one ``(horizon, seed)`` pair, sharing one dataset."""
    cell_cfg = cfg.with_horizon(horizon).replace(seed=seed)
    rows = []
    try:
        env = make_env(cell_cfg)
        ds = to_records(simulate_dataset(cell_cfg, env), env.gamma)
        X, t, _ = oracle(cell_cfg, env)
    except Exception as exc:  # the sweep must survive any single cell
        logger.warning("cell H=%s seed=%s failed before fitting: %s", horizon, seed, exc)
        return [_failed_row(v, horizon, seed, exc) for v in cfg.variants]
    for variant in cfg.variants:
        try:
            tree, _ = fit(cell_cfg, ds, cell_cfg.variant_loss(variant), env)
            ests = estimate(cell_cfg, ds, tree, env)
            truth = env.group_truth(tree, stage_seed(seed, "oracle"))
            rep = metrics_for(ests, tree, X, t, truth)
            covered = sum(e.ci_low <= truth[e.leaf] <= e.ci_high for e in ests)
            row = {"variant": variant, "horizon": horizon, "seed": seed, "status": "ok", "error": ""}
            row.update({k: getattr(rep, k) for k in METRIC_FIELDS})
            row["covered_groups"] = covered
        except Exception as exc:
            logger.warning("cell %s H=%s seed=%s failed: %s", variant, horizon, seed, exc)
            row = _failed_row(variant, horizon, seed, exc)
        rows.append(row)
    return rows


def _failed_row(variant, horizon, seed, exc) -> dict:
    row = {"variant": variant, "horizon": horizon, "seed": seed, "status": "failed",
           "error": f"{type(exc).__name__}: {exc}"}
    row.update({k: float("nan") for k in METRIC_FIELDS})
    row["covered_groups"] = float("nan")
    return row


def _run_cell_args(args):
    return run_cell(*args)


def run_sweep(cfg: ExperimentConfig, jobs: int = 1) -> list[dict]:
    """Every ``(variant, horizon, seed)`` row, sorted in that order."""
    horizons = cfg.horizons or (cfg.horizon,)
    tasks = [(cfg, h, s) for h in horizons for s in cfg.seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_args, tasks))
    else:
        results = [run_cell(*task) for task in tasks]
    rows = [row for cell in results for row in cell]
    return sorted(rows, key=lambda r: (r["variant"], r["horizon"], r["seed"]))


def aggregate(rows: list[dict]) -> list[dict]:
    """Mean and standard error of every metric per ``(variant, horizon)``.

    Coverage is reported both as the mean of per-run coverage and pooled over
    all groups of all successful runs.
    """
    keys = sorted({(r["variant"], r["horizon"]) for r in rows})
    out = []
    for variant, horizon in keys:
        cell = [r for r in rows if r["variant"] == variant and r["horizon"] == horizon]
        ok = [r for r in cell if r["status"] == "ok"]
        agg = {"variant": variant, "horizon": horizon, "n_runs": len(ok), "n_failed": len(cell) - len(ok)}
        for k in METRIC_FIELDS:
            vals = np.array([float(r[k]) for r in ok])
            agg[f"{k}_mean"] = float(vals.mean()) if len(vals) else float("nan")
            agg[f"{k}_se"] = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else float("nan")
        total = sum(int(r["n_groups"]) for r in ok)
        agg["coverage_pooled"] = sum(int(r["covered_groups"]) for r in ok) / total if total else float("nan")
        out.append(agg)
    return out
