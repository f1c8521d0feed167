"""Subgroup identification for off-policy policy evaluation.

Finds groups of initial states where the effect of switching from a behavior
policy to an evaluation policy can be estimated confidently, by growing a
treatment-effect tree over importance-sampling records.
"""

from .data import Dataset, EvalRecord, Trajectory, load_jsonl, save_jsonl, split_dataset, to_records
from .estimators import ess, group_te_estimate, variance_upper_bound, wis_value
from .inference import GroupEstimate, MetricsReport, bootstrap_ci, compute_metrics, estimate_groups
from .loss import LabeledPartition, LossConfig, emse, giope_loss
from .tree import Tree, assign_leaf, best_split, build_tree, tree_from_json, tree_to_json

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EvalRecord",
    "Trajectory",
    "load_jsonl",
    "save_jsonl",
    "split_dataset",
    "to_records",
    "ess",
    "group_te_estimate",
    "variance_upper_bound",
    "wis_value",
    "GroupEstimate",
    "MetricsReport",
    "bootstrap_ci",
    "compute_metrics",
    "estimate_groups",
    "LabeledPartition",
    "LossConfig",
    "emse",
    "giope_loss",
    "Tree",
    "assign_leaf",
    "best_split",
    "build_tree",
    "tree_from_json",
    "tree_to_json",
]
