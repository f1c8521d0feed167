from .sepsis import SepsisConfig, ShiftSpec, build_sepsis_mdp, sepsis_policies
from .tabular import (
    TabularMDP,
    TabularPolicy,
    exact_group_effect,
    exact_treatment_effect,
    optimal_values,
    policy_iteration,
    policy_values,
    shift_action_mass,
    simulate,
    soften,
)
from .toy import ToyConfig, toy_generate, toy_oracle, toy_oracle_many, toy_test_grid

__all__ = [
    "SepsisConfig",
    "ShiftSpec",
    "build_sepsis_mdp",
    "sepsis_policies",
    "TabularMDP",
    "TabularPolicy",
    "exact_group_effect",
    "exact_treatment_effect",
    "optimal_values",
    "policy_iteration",
    "policy_values",
    "shift_action_mass",
    "simulate",
    "soften",
    "ToyConfig",
    "toy_generate",
    "toy_oracle",
    "toy_oracle_many",
    "toy_test_grid",
]
