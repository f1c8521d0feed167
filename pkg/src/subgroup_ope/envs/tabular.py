"""Finite MDPs, policies and exact finite-horizon dynamic programming.

Episode convention shared with the simulators: an episode of horizon ``H``
has ``H + 1`` decision steps ``t = 0..H``.  Taking action ``a`` in state ``s``
moves to ``s'`` and pays the entry reward ``R[s']``; reaching a terminal state
ends the episode (equivalently, terminal states self-loop with reward 0).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..data import Trajectory
from ..errors import InvalidDelta, NotDeterministic, ZeroMassGroup

ROW_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class TabularMDP:
    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S,) reward for entering each state
    initial: np.ndarray  # (S,)
    terminal: np.ndarray  # (S,) bool
    horizon: int
    gamma: float
    features: np.ndarray | None = None  # (S, M) initial-state encoding
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        S, A, S2 = P.shape
        if S != S2:
            raise ValueError("transition must have shape (S, A, S)")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > ROW_TOL):
            raise ValueError("transition rows must be probability distributions")
        init = np.asarray(self.initial, dtype=float)
        if init.shape != (S,) or np.any(init < 0) or abs(init.sum() - 1.0) > ROW_TOL:
            raise ValueError("initial must be a distribution over states")
        term = np.asarray(self.terminal, dtype=bool)
        for s in np.flatnonzero(term):
            if not np.allclose(P[s, :, s], 1.0):
                raise ValueError(f"terminal state {s} must self-loop")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        feats = np.arange(S, dtype=float).reshape(S, 1) if self.features is None else np.asarray(self.features, float)
        if feats.shape[0] != S:
            raise ValueError("features must have one row per state")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", np.asarray(self.reward, dtype=float).reshape(S))
        object.__setattr__(self, "initial", init)
        object.__setattr__(self, "terminal", term)
        object.__setattr__(self, "features", feats)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n_steps(self) -> int:
        return self.horizon + 1

    def with_horizon(self, horizon: int) -> "TabularMDP":
        return TabularMDP(self.transition, self.reward, self.initial, self.terminal, horizon, self.gamma,
                          self.features, self.feature_names)


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    probs: np.ndarray  # (S, A)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2 or np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > ROW_TOL):
            raise ValueError("policy rows must be probability distributions")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def deterministic(cls, actions: Sequence[int], n_actions: int) -> "TabularPolicy":
        p = np.zeros((len(actions), n_actions))
        p[np.arange(len(actions)), np.asarray(actions)] = 1.0
        return cls(p)

    def is_deterministic(self) -> bool:
        return bool(np.all(np.isclose(self.probs.max(axis=1), 1.0, rtol=0, atol=ROW_TOL)))

    def greedy_actions(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)


def q_values(mdp: TabularMDP, v_next: np.ndarray) -> np.ndarray:
    """``Q(s, a) = sum_s' P(s'|s,a) (R[s'] + gamma v_next[s'])``; zero on terminal rows."""
    # einsum without BLAS keeps results identical across thread counts
    q = np.einsum("sat,t->sa", mdp.transition, mdp.reward + mdp.gamma * v_next)
    q[mdp.terminal] = 0.0
    return q


def optimal_values(mdp: TabularMDP) -> tuple[np.ndarray, np.ndarray]:
    """Backward induction over ``H + 1`` steps.

    Returns ``(V, greedy)`` where ``V`` is the optimal value with all steps
    remaining and ``greedy`` the step-0 maximizing action (lowest index on ties).
    """
    v = np.zeros(mdp.n_states)
    greedy = np.zeros(mdp.n_states, dtype=int)
    for _ in range(mdp.n_steps):
        q = q_values(mdp, v)
        greedy = np.argmax(q, axis=1)
        v = q.max(axis=1)
    return v, greedy


def policy_iteration(mdp: TabularMDP) -> TabularPolicy:
    """Deterministic optimal policy for the finite-horizon discounted objective.

    Backward induction yields a per-step optimal policy; the stationary policy
    returned here is its step-0 (all steps remaining) greedy action.
    """
    _, greedy = optimal_values(mdp)
    return TabularPolicy.deterministic(greedy, mdp.n_actions)


def policy_values(mdp: TabularMDP, policy: TabularPolicy, n_steps: int | None = None) -> np.ndarray:
    """Expected discounted return of a stationary policy from every start state."""
    pi = policy.probs
    v = np.zeros(mdp.n_states)
    for _ in range(mdp.n_steps if n_steps is None else n_steps):
        v = np.sum(pi * q_values(mdp, v), axis=1)
    return v


def exact_treatment_effect(mdp: TabularMDP, policy_e: TabularPolicy, policy_b: TabularPolicy, state=None):
    """``V_e(s) - V_b(s)``; returns the whole vector when ``state`` is None."""
    diff = policy_values(mdp, policy_e) - policy_values(mdp, policy_b)
    return diff if state is None else float(diff[state])


def exact_group_effect(mdp: TabularMDP, policy_e: TabularPolicy, policy_b: TabularPolicy,
                       member_states: Iterable[int]) -> float:
    members = np.array(sorted(set(int(s) for s in member_states)), dtype=int)
    if len(members) == 0:
        raise ZeroMassGroup("empty group")
    w = mdp.initial[members]
    if not w.sum() > 0:
        raise ZeroMassGroup(f"states {members.tolist()} have no initial probability")
    t = exact_treatment_effect(mdp, policy_e, policy_b)
    return float(np.dot(w, t[members]) / w.sum())


def soften(policy: TabularPolicy, eps: float) -> TabularPolicy:
    """Move ``eps`` mass from the chosen action, spread equally over the others."""
    if not policy.is_deterministic():
        raise NotDeterministic("soften expects a deterministic policy")
    S, A = policy.probs.shape
    if A < 2:
        raise ValueError("soften needs at least two actions")
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    if eps == 0.0:
        return policy
    p = np.full((S, A), eps / (A - 1))
    p[np.arange(S), policy.greedy_actions()] = 1.0 - eps
    return TabularPolicy(p)


def shift_action_mass(policy: TabularPolicy, target_actions: Iterable[int], delta: float) -> TabularPolicy:
    """Scale the mass on ``target_actions`` by ``1 - delta`` in every state.

    The removed mass goes to the remaining actions in proportion to their
    current probabilities (uniformly if they all have zero mass).
    """
    S, A = policy.probs.shape
    target = np.zeros(A, dtype=bool)
    for a in target_actions:
        if not 0 <= int(a) < A:
            raise InvalidDelta(f"action {a} out of range")
        target[int(a)] = True
    if target.all():
        raise InvalidDelta("target covers every action; nowhere to move mass")
    if not 0.0 <= delta <= 1.0:
        raise InvalidDelta(f"delta must lie in [0, 1], got {delta}")
    if delta == 0.0 or not target.any():
        return policy
    p = policy.probs.copy()
    removed = delta * p[:, target].sum(axis=1)
    p[:, target] *= 1.0 - delta
    rest = p[:, ~target]
    rest_mass = rest.sum(axis=1, keepdims=True)
    share = np.where(rest_mass > 0, rest / np.where(rest_mass > 0, rest_mass, 1.0), 1.0 / rest.shape[1])
    p[:, ~target] = rest + removed[:, None] * share
    return TabularPolicy(p)


def _sample_rows(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    # cum: (k, n) cumulative rows, u: (k,) uniforms in [0, 1)
    cum = cum / cum[:, -1:]
    idx = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(idx, cum.shape[1] - 1)


def simulate_arrays(mdp: TabularMDP, policy_b: TabularPolicy, policy_e: TabularPolicy, n: int, seed: int):
    """Vectorized rollouts under ``policy_b``.

    Returns ``(s0, actions, rewards, b_probs, e_probs, lengths)``; step arrays
    have shape ``(n, H + 1)`` and are valid up to ``lengths``.
    """
    rng = np.random.default_rng(seed)
    T = mdp.n_steps
    s0 = _sample_rows(np.cumsum(mdp.initial)[None, :].repeat(n, 0), rng.random(n)) if n else np.zeros(0, int)
    actions = np.zeros((n, T), dtype=int)
    rewards = np.zeros((n, T))
    bp = np.zeros((n, T))
    ep = np.zeros((n, T))
    lengths = np.zeros(n, dtype=int)
    cum_b = np.cumsum(policy_b.probs, axis=1)
    cum_p = np.cumsum(mdp.transition, axis=2)
    s = s0.copy()
    alive = ~mdp.terminal[s]
    for t in range(T):
        u_a = rng.random(n)
        u_s = rng.random(n)
        idx = np.flatnonzero(alive)
        if len(idx) == 0:
            break
        st = s[idx]
        a = _sample_rows(cum_b[st], u_a[idx])
        nxt = _sample_rows(cum_p[st, a], u_s[idx])
        actions[idx, t] = a
        bp[idx, t] = policy_b.probs[st, a]
        ep[idx, t] = policy_e.probs[st, a]
        rewards[idx, t] = mdp.reward[nxt]
        lengths[idx] += 1
        s[idx] = nxt
        alive[idx] = ~mdp.terminal[nxt]
    return s0, actions, rewards, bp, ep, lengths


def simulate(mdp: TabularMDP, policy_b: TabularPolicy, policy_e: TabularPolicy, n: int, seed: int) -> list[Trajectory]:
    s0, actions, rewards, bp, ep, lengths = simulate_arrays(mdp, policy_b, policy_e, n, seed)
    feats = mdp.features
    out = []
    for i in range(n):
        k = lengths[i]
        out.append(Trajectory(str(i), feats[s0[i]].tolist(), actions[i, :k].tolist(), rewards[i, :k].tolist(),
                              bp[i, :k].tolist(), ep[i, :k].tolist()))
    return out


def return_bound(mdp: TabularMDP) -> float:
    """``max|R| (1 - gamma^(H+1)) / (1 - gamma)``, the largest possible ``|g|``."""
    rmax = float(np.max(np.abs(mdp.reward))) if mdp.n_states else 0.0
    if mdp.gamma == 1.0:
        return rmax * mdp.n_steps
    return rmax * (1.0 - mdp.gamma ** mdp.n_steps) / (1.0 - mdp.gamma)
