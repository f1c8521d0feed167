"""Greedy recursive partitioning into a treatment-effect tree.

Routing rule: ``x[feature] <= threshold`` goes left, everything else right.
Leaf ids run ``0 .. leaf_count - 1`` in left-to-right (depth-first) order.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence, Union

import numpy as np

from .data import Dataset
from .errors import DimensionMismatch, InadmissibleGroup, InadmissibleRoot, ParseError, SchemaError
from .estimators import effect_terms
from .loss import LossConfig, giope_loss, group_terms

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Leaf:
    id: int


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    left: "Node"
    right: "Node"


Node = Union[Leaf, Split]


@dataclass(frozen=True)
class Tree:
    root: Node
    m: int
    leaf_count: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "leaf_count", sum(1 for _ in _iter_leaves(self.root)))

    def apply(self, X) -> np.ndarray:
        """Leaf id for every row of ``X``."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.m:
            raise DimensionMismatch(f"expected rows of length {self.m}, got shape {X.shape}")
        out = np.empty(len(X), dtype=int)
        stack = [(self.root, np.arange(len(X)))]
        while stack:
            node, idx = stack.pop()
            if isinstance(node, Leaf):
                out[idx] = node.id
                continue
            go_left = X[idx, node.feature] <= node.threshold
            stack.append((node.left, idx[go_left]))
            stack.append((node.right, idx[~go_left]))
        return out

    def rules(self, feature_names: Sequence[str] | None = None) -> dict[int, str]:
        """Conjunction of split conditions on the path to every leaf."""
        names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(self.m)]
        out: dict[int, str] = {}

        def walk(node, conds):
            if isinstance(node, Leaf):
                out[node.id] = " & ".join(conds) if conds else "all"
                return
            name = names[node.feature]
            walk(node.left, conds + [f"{name} <= {node.threshold!r}"])
            walk(node.right, conds + [f"{name} > {node.threshold!r}"])

        walk(self.root, [])
        return out

    def boxes(self) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        """Axis-aligned region ``lo < x <= hi`` of every leaf (unbounded sides are inf)."""
        out = {}

        def walk(node, lo, hi):
            if isinstance(node, Leaf):
                out[node.id] = (lo, hi)
                return
            j, thr = node.feature, node.threshold
            hi_left = hi.copy()
            hi_left[j] = min(hi[j], thr)
            lo_right = lo.copy()
            lo_right[j] = max(lo[j], thr)
            walk(node.left, lo, hi_left)
            walk(node.right, lo_right, hi)

        walk(self.root, np.full(self.m, -np.inf), np.full(self.m, np.inf))
        return out

    def depth(self) -> int:
        def d(node):
            return 0 if isinstance(node, Leaf) else 1 + max(d(node.left), d(node.right))

        return d(self.root)


def _iter_leaves(node):
    if isinstance(node, Leaf):
        yield node
    else:
        yield from _iter_leaves(node.left)
        yield from _iter_leaves(node.right)


def _relabel(node, counter):
    if isinstance(node, Leaf):
        leaf = Leaf(counter[0])
        counter[0] += 1
        return leaf
    left = _relabel(node.left, counter)
    right = _relabel(node.right, counter)
    return Split(node.feature, node.threshold, left, right)


def make_tree(root: Node, m: int) -> Tree:
    """Wrap ``root`` in a :class:`Tree`, renumbering leaves left to right."""
    return Tree(_relabel(root, [0]), m)


def assign_leaf(tree: Tree, x) -> int:
    x = list(x)
    if len(x) != tree.m:
        raise DimensionMismatch(f"expected {tree.m} features, got {len(x)}")
    node = tree.root
    while isinstance(node, Split):
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.id


class SplitChoice(NamedTuple):
    feature: int
    threshold: float
    loss_after: float


def _as_dataset(records) -> Dataset:
    if isinstance(records, Dataset):
        return records
    return Dataset.from_records(records)


def candidate_positions(xs_sorted: np.ndarray, max_thresholds: int) -> tuple[np.ndarray, np.ndarray]:
    """Left-child sizes and thresholds of the candidate splits of one sorted column.

    Candidates are midpoints between consecutive distinct values; when there are
    more than ``max_thresholds`` of them, an evenly spaced subset by rank is kept.
    """
    gaps = np.flatnonzero(xs_sorted[:-1] < xs_sorted[1:])
    if len(gaps) > max_thresholds:
        keep = np.unique(np.round(np.linspace(0, len(gaps) - 1, max_thresholds)).astype(int))
        gaps = gaps[keep]
    lo = xs_sorted[gaps]
    hi = xs_sorted[gaps + 1]
    thr = lo + (hi - lo) / 2.0
    # adjacent floats: the midpoint may round onto the upper value
    thr = np.where(thr < hi, thr, lo)
    return gaps + 1, thr


def _split_losses(y, rho, order, sizes, cfg, g_inf, needs_proxy):
    n = len(y)
    yo = y[order]
    ro = rho[order]
    mean = float(np.mean(yo))
    yc = yo - mean
    cy = np.cumsum(yc)
    cyy = np.cumsum(yc * yc)
    cr = np.cumsum(ro)
    cr2 = np.cumsum(ro * ro)
    cpos = np.cumsum(ro > 0)
    k = sizes
    i = k - 1
    nl = k.astype(float)
    nr = (n - k).astype(float)
    sum_l = cy[i]
    sum_r = cy[-1] - cy[i]
    ss_l = cyy[i] - sum_l * sum_l / nl
    ss_r = (cyy[-1] - cyy[i]) - sum_r * sum_r / nr
    ok = (k >= cfg.min_leaf) & (n - k >= cfg.min_leaf)
    if needs_proxy:
        ok &= (cpos[i] > 0) & (cpos[-1] - cpos[i] > 0)
    if cfg.variance_mode == "sample":
        ok &= (k >= 2) & (n - k >= 2)
    term_l = group_terms(nl, sum_l + nl * mean, ss_l, cr[i], cr2[i], cfg, g_inf)
    term_r = group_terms(nr, sum_r + nr * mean, ss_r, cr[-1] - cr[i], cr2[-1] - cr2[i], cfg, g_inf)
    losses = (nl * term_l + nr * term_r) / n
    return np.where(ok & np.isfinite(losses), losses, np.inf)


def best_split(records, cfg: LossConfig, g_inf: float) -> SplitChoice | None:
    """Best single split of a node, or ``None`` when no split lowers the loss by more than ``cfg.tol``.

    Features are scanned in index order and thresholds in ascending order; the
    first candidate reaching the minimal loss wins.
    """
    ds = _as_dataset(records)
    n = len(ds)
    if n < 2 * cfg.min_leaf:
        return None
    try:
        parent = giope_loss([(0, ds)], cfg, g_inf)
    except InadmissibleGroup:
        return None
    y = effect_terms(ds.rho, ds.g)
    needs_proxy = cfg.variance_mode == "proxy" or cfg.reg_mode != "off"
    best_loss = np.inf
    best = None
    for j in range(ds.m):
        order = np.argsort(ds.X[:, j], kind="stable")
        xs = ds.X[order, j]
        sizes, thresholds = candidate_positions(xs, cfg.max_thresholds)
        if len(sizes) == 0:
            continue
        losses = _split_losses(y, ds.rho, order, sizes, cfg, g_inf, needs_proxy)
        i = int(np.argmin(losses))
        if losses[i] < best_loss:
            best_loss = float(losses[i])
            best = (j, float(thresholds[i]))
    if best is None:
        return None
    j, thr = best
    mask = ds.X[:, j] <= thr
    after = giope_loss([(0, ds.subset(np.flatnonzero(mask))), (1, ds.subset(np.flatnonzero(~mask)))], cfg, g_inf)
    if parent - after > cfg.tol:
        return SplitChoice(j, thr, after)
    return None


def build_tree(ds: Dataset, cfg: LossConfig, g_inf: float | None = None, trace: list | None = None) -> Tree:
    """Grow a treatment-effect tree depth-first (left child first).

    ``g_inf`` defaults to ``ds.g_inf``.  Accepted splits are appended to
    ``trace`` as dicts when a list is supplied.
    """
    if not isinstance(ds, Dataset):
        ds = _as_dataset(ds)
    if len(ds) == 0:
        raise InadmissibleRoot("the root group is empty")
    g_inf = ds.g_inf if g_inf is None else float(g_inf)
    try:
        giope_loss([(0, ds)], cfg, g_inf)
    except InadmissibleGroup as exc:
        raise InadmissibleRoot(exc.reason) from None

    def grow(idx: np.ndarray, depth: int, path: str) -> Node:
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            return Leaf(-1)
        node_ds = ds.subset(idx)
        choice = best_split(node_ds, cfg, g_inf)
        if choice is None:
            return Leaf(-1)
        before = giope_loss([(0, node_ds)], cfg, g_inf)
        mask = node_ds.X[:, choice.feature] <= choice.threshold
        if trace is not None:
            trace.append(
                {
                    "path": path or "root",
                    "depth": depth,
                    "n": int(len(idx)),
                    "feature": choice.feature,
                    "threshold": choice.threshold,
                    "n_left": int(mask.sum()),
                    "n_right": int((~mask).sum()),
                    "loss_before": before,
                    "loss_after": choice.loss_after,
                }
            )
        logger.debug("split %s on x%d <= %r (%.6g -> %.6g)", path or "root", choice.feature,
                     choice.threshold, before, choice.loss_after)
        left = grow(idx[mask], depth + 1, path + "L")
        right = grow(idx[~mask], depth + 1, path + "R")
        return Split(choice.feature, choice.threshold, left, right)

    return make_tree(grow(np.arange(len(ds)), 0, ""), ds.m)


def partition_by_tree(tree: Tree, ds: Dataset) -> list[tuple[int, Dataset]]:
    """Records of ``ds`` grouped by leaf (leaves without records are omitted)."""
    leaves = tree.apply(ds.X) if len(ds) else np.zeros(0, dtype=int)
    return [(leaf, ds.subset(np.flatnonzero(leaves == leaf)))
            for leaf in range(tree.leaf_count) if np.any(leaves == leaf)]


def _node_to_obj(node: Node) -> dict:
    if isinstance(node, Leaf):
        return {"leaf": node.id}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _node_to_obj(node.left),
        "right": _node_to_obj(node.right),
    }


def tree_to_json(tree: Tree) -> str:
    return json.dumps({"m": tree.m, "root": _node_to_obj(tree.root)}, indent=2, allow_nan=False) + "\n"


def _node_from_obj(obj, m: int, counter: list) -> Node:
    if not isinstance(obj, dict):
        raise SchemaError("node must be an object", field="node")
    if "leaf" in obj:
        if set(obj) != {"leaf"}:
            raise SchemaError(f"unexpected keys {sorted(set(obj) - {'leaf'})}", field="leaf")
        lid = obj["leaf"]
        if isinstance(lid, bool) or not isinstance(lid, int):
            raise SchemaError("must be an integer", field="leaf")
        if lid != counter[0]:
            raise SchemaError(f"leaf id {lid} does not match left-to-right position {counter[0]}", field="leaf")
        counter[0] += 1
        return Leaf(lid)
    for key in ("feature", "threshold", "left", "right"):
        if key not in obj:
            raise SchemaError("missing", field=key)
    feat, thr = obj["feature"], obj["threshold"]
    if isinstance(feat, bool) or not isinstance(feat, int) or not 0 <= feat < m:
        raise SchemaError(f"must be an integer in [0, {m})", field="feature")
    if isinstance(thr, bool) or not isinstance(thr, (int, float)) or not math.isfinite(thr):
        raise SchemaError("must be a finite number", field="threshold")
    left = _node_from_obj(obj["left"], m, counter)
    right = _node_from_obj(obj["right"], m, counter)
    return Split(feat, float(thr), left, right)


def tree_from_json(text: str) -> Tree:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    if not isinstance(obj, dict) or "m" not in obj or "root" not in obj:
        raise SchemaError("tree document needs 'm' and 'root'", field="m" if isinstance(obj, dict) and "m" not in obj else "root")
    m = obj["m"]
    if isinstance(m, bool) or not isinstance(m, int) or m < 1:
        raise SchemaError("must be a positive integer", field="m")
    return Tree(_node_from_obj(obj["root"], m, [0]), m)
