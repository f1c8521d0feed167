import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subgroup_ope.data import importance_ratio, to_records
from subgroup_ope.errors import InvalidDelta, NotDeterministic, SchemaError, ZeroMassGroup
from subgroup_ope.envs.sepsis import SepsisConfig, build_sepsis_mdp, sepsis_policies
from subgroup_ope.envs.tabular import (
    TabularMDP,
    TabularPolicy,
    exact_group_effect,
    exact_treatment_effect,
    optimal_values,
    policy_iteration,
    policy_values,
    return_bound,
    shift_action_mass,
    simulate,
    simulate_arrays,
    soften,
)
from subgroup_ope.envs.toy import ToyConfig, toy_generate, toy_oracle, toy_oracle_many, toy_test_grid

from conftest import random_mdp, random_policy


def assert_stochastic(policy):
    p = policy.probs
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9, rtol=0)


def two_state_mdp(gamma=0.9, horizon=2):
    # state 0 and 1; action 0 stays, action 1 switches w.p. 0.8; entering state 1 pays 1
    P = np.zeros((2, 2, 2))
    P[0, 0] = [1.0, 0.0]
    P[0, 1] = [0.2, 0.8]
    P[1, 0] = [0.0, 1.0]
    P[1, 1] = [0.8, 0.2]
    return TabularMDP(P, np.array([0.0, 1.0]), np.array([0.5, 0.5]), np.zeros(2, bool), horizon, gamma)


def test_mdp_validation():
    mdp = two_state_mdp()
    with pytest.raises(ValueError):
        TabularMDP(mdp.transition * 0.5, mdp.reward, mdp.initial, mdp.terminal, 1, 0.9)
    with pytest.raises(ValueError):
        TabularMDP(mdp.transition, mdp.reward, np.array([0.7, 0.7]), mdp.terminal, 1, 0.9)
    with pytest.raises(ValueError):
        TabularMDP(mdp.transition, mdp.reward, mdp.initial, np.array([True, False]), 1, 0.9)
    with pytest.raises(ValueError):
        TabularPolicy(np.array([[0.5, 0.6]]))


def test_policy_iteration_single_action():
    rng = np.random.default_rng(0)
    mdp = random_mdp(rng, S=4, A=1)
    assert np.all(policy_iteration(mdp).probs == 1.0)


def test_policy_iteration_gamma_zero_is_one_step_greedy():
    rng = np.random.default_rng(1)
    mdp = random_mdp(rng, S=5, A=4, gamma=0.0, n_terminal=0)
    one_step = np.einsum("sat,t->sa", mdp.transition, mdp.reward)
    assert np.array_equal(policy_iteration(mdp).greedy_actions(), np.argmax(one_step, axis=1))


def test_policy_iteration_matches_enumeration():
    mdp = two_state_mdp(horizon=3)
    best = max(
        (policy_values(mdp, TabularPolicy.deterministic(list(a), 2)).tolist(), a)
        for a in itertools.product(range(2), repeat=2)
    )
    pi = policy_iteration(mdp)
    assert tuple(pi.greedy_actions()) == best[1] == (1, 0)
    assert np.allclose(policy_values(mdp, pi), best[0])
    assert pi.is_deterministic()


def test_optimal_value_dominates_random_policies():
    rng = np.random.default_rng(2)
    mdp = random_mdp(rng, S=6, A=3, horizon=4)
    v_star, _ = optimal_values(mdp)
    for _ in range(100):
        assert np.all(v_star >= policy_values(mdp, random_policy(rng, 6, 3, floor=0.0)) - 1e-12)


def test_surrogate_policy_iteration_dominates_random_policies():
    mdp = build_sepsis_mdp(SepsisConfig())
    v = policy_values(mdp, policy_iteration(mdp))
    rng = np.random.default_rng(3)
    for _ in range(100):
        p = rng.random((mdp.n_states, mdp.n_actions)) ** 3
        assert np.all(v >= policy_values(mdp, TabularPolicy(p / p.sum(axis=1, keepdims=True))) - 1e-12)


def test_soften_examples():
    det2 = TabularPolicy.deterministic([0, 1], 2)
    assert soften(det2, 0.0) is det2
    assert np.allclose(soften(det2, 0.1).probs, [[0.9, 0.1], [0.1, 0.9]])
    soft8 = soften(TabularPolicy.deterministic([3], 8), 0.1)
    assert soft8.probs[0, 3] == pytest.approx(0.9)
    assert np.allclose(np.delete(soft8.probs[0], 3), 0.1 / 7)
    with pytest.raises(NotDeterministic):
        soften(soft8, 0.1)


def test_shift_action_mass_examples():
    pol = TabularPolicy(np.array([[0.5, 0.5]]))
    assert shift_action_mass(pol, [0], 0.0) is pol
    assert np.allclose(shift_action_mass(pol, [0], 0.2).probs, [[0.4, 0.6]])
    with pytest.raises(InvalidDelta):
        shift_action_mass(TabularPolicy(np.array([[0.4, 0.6]])), [0, 1], 0.1)
    with pytest.raises(InvalidDelta):
        shift_action_mass(pol, [0], 1.5)
    # proportional redistribution, uniform when the complement is empty of mass
    three = TabularPolicy(np.array([[0.5, 0.125, 0.375], [1.0, 0.0, 0.0]]))
    out = shift_action_mass(three, [0], 0.5).probs
    assert np.allclose(out, [[0.25, 0.1875, 0.5625], [0.5, 0.25, 0.25]])


@settings(max_examples=40)
@given(st.integers(0, 10_000), st.one_of(st.just(0.0), st.floats(1e-6, 1.0)), st.floats(0.0, 1.0),
       st.sets(st.integers(0, 4), min_size=1, max_size=4))
def test_soften_then_shift_keeps_rows_stochastic_and_positive(seed, eps, delta, target):
    rng = np.random.default_rng(seed)
    base = TabularPolicy.deterministic(rng.integers(0, 5, size=7), 5)
    soft = soften(base, eps)
    shifted = shift_action_mass(soft, target, delta)
    assert_stochastic(soft)
    assert_stochastic(shifted)
    if 0 < eps < 1 and delta < 1:
        assert np.all(shifted.probs > 0)


def test_sepsis_policies_are_stochastic_and_supported():
    cfg = SepsisConfig()
    mdp = build_sepsis_mdp(cfg)
    for pol in sepsis_policies(mdp, cfg):
        assert_stochastic(pol)
        assert np.all(pol.probs > 0)
    assert 64 <= mdp.n_states <= 256 and mdp.n_actions == 8


def test_sepsis_surrogate_structure():
    cfg = SepsisConfig()
    mdp = build_sepsis_mdp(cfg)
    death, discharge = mdp.n_states - 2, mdp.n_states - 1
    assert mdp.reward[death] == -1.0 and mdp.reward[discharge] == 1.0
    assert mdp.terminal[[death, discharge]].all() and mdp.terminal.sum() == 2
    assert mdp.gamma == 0.99
    assert mdp.features.shape == (mdp.n_states, cfg.n_vitals + 1)
    assert mdp.initial[mdp.terminal].sum() == 0.0
    # the evaluation policy helps non-diabetic patients and harms diabetic ones on average
    _, pb, pe = sepsis_policies(mdp, cfg)
    t = exact_treatment_effect(mdp, pe, pb)
    live = ~mdp.terminal
    diabetic = mdp.features[:, -1] == 1
    w = mdp.initial
    assert np.dot(w[live & ~diabetic], t[live & ~diabetic]) > 0
    assert np.dot(w[live & diabetic], t[live & diabetic]) < 0


def test_sepsis_config_errors():
    with pytest.raises(SchemaError) as exc:
        SepsisConfig.from_dict({"n_actions": 6})
    assert exc.value.field == "n_actions"
    with pytest.raises(SchemaError) as exc:
        SepsisConfig.from_dict({"colour": 1})
    assert exc.value.field == "tabular.colour"
    cfg = SepsisConfig.from_dict({"n": 10, "e_shift": {"actions": [1], "delta": 0.3}})
    assert SepsisConfig.from_dict(cfg.to_dict()) == cfg


def test_simulate_examples():
    rng = np.random.default_rng(4)
    mdp = random_mdp(rng, S=4, A=2)
    pol = random_policy(rng, 4, 2)
    assert simulate(mdp, pol, pol, 0, seed=1) == []
    P = np.zeros((3, 2, 3))
    P[0, :, 1] = 1.0
    P[1, :, 2] = 1.0
    P[2, :, 2] = 1.0
    det_mdp = TabularMDP(P, np.array([0.0, 1.0, 2.0]), np.array([1.0, 0, 0]), np.array([False, False, True]), 3, 0.5)
    det = TabularPolicy.deterministic([1, 1, 1], 2)
    trajs = simulate(det_mdp, det, det, 20, seed=2)
    assert all((t.x0, t.actions, t.rewards) == (trajs[0].x0, trajs[0].actions, trajs[0].rewards) for t in trajs)
    assert trajs[0].rewards == (1.0, 2.0)  # terminal state ends the episode
    assert simulate(mdp, pol, pol, 30, seed=5) == simulate(mdp, pol, pol, 30, seed=5)


def test_simulated_returns_match_dp():
    rng = np.random.default_rng(6)
    mdp = random_mdp(rng, S=5, A=3, horizon=3, gamma=1.0)
    pb, pe = random_policy(rng, 5, 3), random_policy(rng, 5, 3)
    s0, _, rewards, bp, ep, _ = simulate_arrays(mdp, pb, pe, 100_000, seed=7)
    g = rewards.sum(axis=1)
    v_b = np.dot(mdp.initial, policy_values(mdp, pb))
    assert abs(g.mean() - v_b) <= 3 * g.std(ddof=1) / np.sqrt(len(g))
    # importance-weighted returns estimate the evaluation policy's value
    w = np.prod(np.where(bp > 0, ep / np.where(bp > 0, bp, 1), 1.0), axis=1)
    v_e = np.dot(mdp.initial, policy_values(mdp, pe))
    assert abs(np.mean(w * g) - v_e) <= 3 * np.std(w * g, ddof=1) / np.sqrt(len(g))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 5), st.floats(0.0, 1.0))
def test_simulated_returns_respect_bound(seed, horizon, gamma):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, S=4, A=2, horizon=horizon, gamma=gamma)
    pb, pe = random_policy(rng, 4, 2), random_policy(rng, 4, 2)
    ds = to_records(simulate(mdp, pb, pe, 300, seed), gamma)
    assert ds.g_inf <= return_bound(mdp) + 1e-12
    assert all(len(t) <= mdp.horizon + 1 for t in simulate(mdp, pb, pe, 50, seed))


def test_exact_treatment_effect_examples():
    rng = np.random.default_rng(8)
    mdp = random_mdp(rng, S=5, A=3)
    pb, pe = random_policy(rng, 5, 3), random_policy(rng, 5, 3)
    assert np.all(exact_treatment_effect(mdp, pb, pb) == 0.0)
    # one decision step: expected entry reward difference
    one = mdp.with_horizon(0)
    r1 = np.einsum("sat,t->sa", mdp.transition, mdp.reward)
    want = np.sum((pe.probs - pb.probs) * r1, axis=1)
    want[mdp.terminal] = 0.0
    assert np.allclose(exact_treatment_effect(one, pe, pb), want, atol=1e-14)
    assert exact_treatment_effect(one, pe, pb, state=1) == pytest.approx(want[1])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_exact_treatment_effect_antisymmetric(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, S=5, A=3)
    pb, pe = random_policy(rng, 5, 3), random_policy(rng, 5, 3)
    assert np.allclose(exact_treatment_effect(mdp, pe, pb), -exact_treatment_effect(mdp, pb, pe), atol=1e-14)


def test_exact_effect_agrees_with_rollouts():
    rng = np.random.default_rng(9)
    mdp = random_mdp(rng, S=4, A=2, horizon=2, n_terminal=1)
    start = TabularMDP(mdp.transition, mdp.reward, np.eye(4)[1], mdp.terminal, mdp.horizon, mdp.gamma)
    pb, pe = random_policy(rng, 4, 2), random_policy(rng, 4, 2)
    n = 10_000
    g = {}
    for name, pol in (("e", pe), ("b", pb)):
        _, _, rewards, _, _, _ = simulate_arrays(start, pol, pol, n, seed=10)
        g[name] = rewards @ (mdp.gamma ** np.arange(rewards.shape[1]))
    diff = g["e"].mean() - g["b"].mean()
    se = np.sqrt(g["e"].var(ddof=1) / n + g["b"].var(ddof=1) / n)
    assert abs(diff - exact_treatment_effect(mdp, pe, pb, state=1)) <= 3 * se


def test_exact_group_effect_examples():
    rng = np.random.default_rng(11)
    mdp = random_mdp(rng, S=5, A=2)
    pb, pe = random_policy(rng, 5, 2), random_policy(rng, 5, 2)
    t = exact_treatment_effect(mdp, pe, pb)
    assert exact_group_effect(mdp, pe, pb, [2]) == pytest.approx(t[2])
    assert exact_group_effect(mdp, pe, pb, range(5)) == pytest.approx(np.dot(mdp.initial, t))
    with pytest.raises(ZeroMassGroup):
        exact_group_effect(mdp, pe, pb, [4])  # terminal state, zero initial mass
    with pytest.raises(ZeroMassGroup):
        exact_group_effect(mdp, pe, pb, [])

    # two-state arithmetic: masses 0.2 / 0.6 with t = +1 / -1
    P = np.zeros((3, 2, 3))
    P[:, 0, 2] = 1.0
    P[0, 1, 0] = 1.0
    P[1, 1, 1] = 1.0
    P[2, :, 2] = 1.0
    mdp = TabularMDP(P, np.array([1.0, -1.0, 0.0]), np.array([0.2, 0.6, 0.2]), np.array([False, False, True]), 0, 1.0)
    stay = TabularPolicy.deterministic([1, 1, 0], 2)
    leave = TabularPolicy.deterministic([0, 0, 0], 2)
    assert exact_treatment_effect(mdp, stay, leave).tolist() == [1.0, -1.0, 0.0]
    assert exact_group_effect(mdp, stay, leave, [0, 1]) == pytest.approx(-0.5)


def test_toy_defaults_and_config():
    cfg = ToyConfig()
    assert (cfg.kappa, cfg.noise_sd) == (0.2, 0.05)
    assert ToyConfig.from_dict({"n": 7}).n_trajectories == 7
    assert ToyConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(SchemaError):
        ToyConfig(noise_sd=-1.0)
    assert len(toy_test_grid(25)) == 25 and toy_test_grid(25)[[0, -1]].tolist() == [0.0, 1.0]


def test_toy_frozen_dynamics_returns():
    cfg = ToyConfig(kappa=0.0, noise_sd=0.0, horizon=1, gamma=0.9)
    for t in toy_generate(cfg, seed=1, n=50):
        r = 1 - abs(t.x0[0] - 0.5)
        assert t.rewards == pytest.approx((r, r))
    ds = to_records(toy_generate(cfg, seed=1, n=50), cfg.gamma)
    assert np.allclose(ds.g, 1.9 * (1 - np.abs(ds.X[:, 0] - 0.5)))


def test_toy_probabilities_come_from_policy_tables():
    cfg = ToyConfig(horizon=4)
    trajs = toy_generate(cfg, seed=3, n=500)
    probs = {p for t in trajs for p in t.b_probs} | {p for t in trajs for p in t.e_probs}
    assert probs <= {0.25, 0.5}
    assert all(np.all(np.abs(t.x0) <= 1) and len(t) == cfg.horizon + 1 for t in trajs)
    assert trajs == toy_generate(cfg, seed=3, n=500)
    # positive support: every ratio is finite
    assert all(np.isfinite(importance_ratio(t)) for t in trajs)


def test_toy_policy_switch_points():
    cfg = ToyConfig(horizon=0)
    for t in toy_generate(cfg, seed=4, n=400):
        x, a = t.x0[0], t.actions[0]
        heavy_b = 1 if x < 0.2 else -1
        heavy_e = -1 if x > 0.8 else 1
        assert t.b_probs[0] == (0.5 if a == heavy_b else 0.25)
        assert t.e_probs[0] == (0.5 if a == heavy_e else 0.25)


def test_toy_oracle_examples():
    same = ToyConfig(same_policy=True)
    assert toy_oracle(same, 0.3, 30, seed=1) == 0.0
    frozen = ToyConfig(kappa=0.0, noise_sd=0.0)
    assert toy_oracle(frozen, 0.7, 30, seed=1) == 0.0
    assert toy_oracle(ToyConfig(), 0.4, 30, seed=5) == toy_oracle(ToyConfig(), 0.4, 30, seed=5)
    assert np.array_equal(toy_oracle_many(ToyConfig(), [0.1, 0.4], 30, 2), toy_oracle_many(ToyConfig(), [0.1, 0.4], 30, 2))
    with pytest.raises(ValueError):
        toy_oracle(ToyConfig(), 0.5, 0)


def test_toy_oracle_variance_halves_when_rollouts_double():
    cfg = ToyConfig()
    v30 = np.var([toy_oracle(cfg, 0.5, 30, seed=s) for s in range(100)], ddof=1)
    v60 = np.var([toy_oracle(cfg, 0.5, 60, seed=1000 + s) for s in range(100)], ddof=1)
    assert 0.5 * 0.5 <= v60 / v30 <= 1.5 * 0.5
