"""Desk-scale tabular surrogate of an ICU sepsis simulator.

A patient is a tuple of ``n_vitals`` vital-sign levels (``0`` normal up to
``n_levels - 1`` critical) plus a diabetes flag.  Actions are bitmasks of
``log2(n_actions)`` binary treatments; treatment ``j`` acts on vital
``j % n_vitals`` (with the defaults: antibiotics -> heart rate, vasopressors
-> blood pressure, ventilation -> oxygenation).

Per step each vital moves independently:

* treated and abnormal: improves with ``p_treat``, worsens with ``p_relapse``;
* treated and normal: worsens with ``p_side`` (side effects);
* untreated: worsens with ``p_worsen``, improves with ``p_recover``.

Diabetics lose blood pressure faster without vasopressors, more so with an
elevated heart rate; this is what makes the evaluation policy (less
vasopressor) harmful for them.  After the vitals move, a patient with ``k``
critical vitals dies with probability ``min(1, p_die * k)`` (reward -1); a
patient with all vitals normal is discharged with probability
``p_discharge`` (reward +1).
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..errors import SchemaError
from .tabular import TabularMDP, TabularPolicy, policy_iteration, shift_action_mass, soften

VITAL_NAMES = ("heart_rate", "blood_pressure", "oxygen", "glucose")
TREATMENT_NAMES = ("antibiotics", "vasopressors", "ventilation")
VASOPRESSOR_BIT = 1
VENTILATION_BIT = 2


def actions_with_bit(n_actions: int, bit: int) -> list[int]:
    return [a for a in range(n_actions) if a >> bit & 1]


@dataclass(frozen=True)
class ShiftSpec:
    actions: tuple[int, ...]
    delta: float

    @classmethod
    def from_dict(cls, d, name: str) -> "ShiftSpec":
        if not isinstance(d, dict) or set(d) - {"actions", "delta"} or "delta" not in d:
            raise SchemaError("expected {'actions': [...], 'delta': x}", field=name)
        acts = d.get("actions")
        if acts is not None and (not isinstance(acts, list) or not all(isinstance(a, int) for a in acts)):
            raise SchemaError("actions must be a list of integers", field=name)
        return cls(tuple(acts) if acts is not None else (), float(d["delta"]))


@dataclass(frozen=True)
class SepsisConfig:
    n_levels: int = 4
    n_vitals: int = 3
    n_actions: int = 8
    gamma: float = 0.99
    horizon: int = 4
    soften_eps: float = 0.1
    b_shift: ShiftSpec = field(default_factory=lambda: ShiftSpec(tuple(actions_with_bit(8, VENTILATION_BIT)), 0.15))
    e_shift: ShiftSpec = field(default_factory=lambda: ShiftSpec(tuple(actions_with_bit(8, VASOPRESSOR_BIT)), 0.20))
    n: int = 10000
    diabetic_frac: float = 0.3
    p_treat: float = 0.5
    p_relapse: float = 0.05
    p_side: float = 0.15
    p_worsen: tuple[float, ...] = (0.2, 0.1, 0.35)
    p_recover: float = 0.1
    p_worsen_diabetic: float = 0.3
    p_worsen_diabetic_tachy: float = 0.2
    p_die: float = 0.25
    p_discharge: float = 0.6

    def __post_init__(self):
        for name in ("n_levels", "n_vitals", "n_actions", "horizon", "n"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise SchemaError("must be a nonnegative integer", field=name)
        if self.n_levels < 2 or self.n_vitals < 1:
            raise SchemaError("need n_levels >= 2 and n_vitals >= 1", field="n_levels")
        if self.n_actions < 2 or self.n_actions & (self.n_actions - 1):
            raise SchemaError("must be a power of two >= 2 (one bit per treatment)", field="n_actions")
        if not 0.0 <= self.gamma <= 1.0:
            raise SchemaError("must lie in [0, 1]", field="gamma")
        for name in ("b_shift", "e_shift"):
            spec = getattr(self, name)
            if any(not 0 <= a < self.n_actions for a in spec.actions):
                raise SchemaError("action index out of range", field=name)

    @property
    def n_treatments(self) -> int:
        return self.n_actions.bit_length() - 1

    @classmethod
    def from_dict(cls, d: dict) -> "SepsisConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise SchemaError(f"unknown key(s) {unknown}", field=f"tabular.{unknown[0]}")
        n_actions = d.get("n_actions", 8)
        n_actions = n_actions if isinstance(n_actions, int) and n_actions > 1 else 2  # validated below
        n_bits = n_actions.bit_length() - 1
        defaults = {"b_shift": (VENTILATION_BIT, 0.15), "e_shift": (VASOPRESSOR_BIT, 0.20)}
        for name, (bit, delta) in defaults.items():
            spec = ShiftSpec.from_dict(d[name], name) if name in d else ShiftSpec((), delta)
            if name not in d or "actions" not in d[name]:
                # default target: every action that switches on this treatment
                spec = ShiftSpec(tuple(actions_with_bit(n_actions, bit % n_bits)), spec.delta)
            d[name] = spec
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("b_shift", "e_shift"):
            d[name] = {"actions": list(getattr(self, name).actions), "delta": getattr(self, name).delta}
        return d

    @property
    def n_states(self) -> int:
        return 2 * self.n_levels ** self.n_vitals + 2


def _vital_step(k: int, level: int, treated: bool, cfg: SepsisConfig, extra_worsen: float = 0.0) -> dict[int, float]:
    top = cfg.n_levels - 1
    if treated:
        up, down = (cfg.p_side, 0.0) if level == 0 else (cfg.p_relapse, cfg.p_treat)
    else:
        worsen = cfg.p_worsen[k % len(cfg.p_worsen)]
        up, down = min(1.0, worsen + extra_worsen), (cfg.p_recover if level > 0 else 0.0)
    up = min(up, 1.0 - down)
    out: dict[int, float] = {}
    for nxt, p in ((min(level + 1, top), up), (max(level - 1, 0), down), (level, 1.0 - up - down)):
        if p > 0:
            out[nxt] = out.get(nxt, 0.0) + p
    return out


def build_sepsis_mdp(cfg: SepsisConfig) -> TabularMDP:
    """State layout: index ``d * L**V + sum_k level_k * L**k``, then death, then discharge."""
    L, V = cfg.n_levels, cfg.n_vitals
    per_flag = L ** V
    S = 2 * per_flag + 2
    death, discharge = S - 2, S - 1
    A = cfg.n_actions
    tuples = list(itertools.product(range(L), repeat=V))  # tuples[i][k] is vital k ... index order below

    def index(levels, diabetic):
        return diabetic * per_flag + sum(lv * L ** k for k, lv in enumerate(levels))

    P = np.zeros((S, A, S))
    features = np.zeros((S, V + 1))
    for diabetic in (0, 1):
        for levels in tuples:
            s = index(levels, diabetic)
            features[s, :V] = levels
            features[s, V] = diabetic
            for a in range(A):
                treated = [False] * V
                for j in range(cfg.n_treatments):
                    if a >> j & 1:
                        treated[j % V] = True
                dists = []
                for k, lv in enumerate(levels):
                    extra = 0.0
                    if diabetic and k == VASOPRESSOR_BIT % V and V > 1:
                        extra = cfg.p_worsen_diabetic + (cfg.p_worsen_diabetic_tachy if levels[0] >= 2 else 0.0)
                    dists.append(list(_vital_step(k, lv, treated[k], cfg, extra).items()))
                for combo in itertools.product(*dists):
                    nxt = tuple(c[0] for c in combo)
                    p = float(np.prod([c[1] for c in combo]))
                    n_crit = sum(lv == L - 1 for lv in nxt)
                    p_die = min(1.0, cfg.p_die * n_crit)
                    p_dis = cfg.p_discharge if all(lv == 0 for lv in nxt) else 0.0
                    P[s, a, death] += p * p_die
                    P[s, a, discharge] += p * p_dis
                    P[s, a, index(nxt, diabetic)] += p * (1.0 - p_die - p_dis)
    P[death, :, death] = 1.0
    P[discharge, :, discharge] = 1.0
    features[death] = -1.0
    features[discharge] = -1.0
    reward = np.zeros(S)
    reward[death] = -1.0
    reward[discharge] = 1.0
    terminal = np.zeros(S, dtype=bool)
    terminal[[death, discharge]] = True
    initial = np.zeros(S)
    initial[:per_flag] = (1.0 - cfg.diabetic_frac) / per_flag
    initial[per_flag:2 * per_flag] = cfg.diabetic_frac / per_flag
    names = tuple(VITAL_NAMES[k] if k < len(VITAL_NAMES) else f"vital{k}" for k in range(V)) + ("diabetic",)
    return TabularMDP(P, reward, initial, terminal, cfg.horizon, cfg.gamma, features, names)


def sepsis_policies(mdp: TabularMDP, cfg: SepsisConfig) -> tuple[TabularPolicy, TabularPolicy, TabularPolicy]:
    """``(pi_st, pi_b, pi_e)``: softened optimum and its two perturbations."""
    pi_st = soften(policy_iteration(mdp), cfg.soften_eps)
    pi_b = shift_action_mass(pi_st, cfg.b_shift.actions, cfg.b_shift.delta)
    pi_e = shift_action_mass(pi_st, cfg.e_shift.actions, cfg.e_shift.delta)
    return pi_st, pi_b, pi_e
