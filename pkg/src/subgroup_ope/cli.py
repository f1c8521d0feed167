"""Command-line driver: ``subgroup-ope {simulate,fit,estimate,oracle,ablate}``.

Every output ``X`` gets a sidecar ``X.meta.json`` holding the resolved config,
the seed and the sha256 of each input file, which is enough to rerun it.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .data import load_jsonl, save_jsonl, to_records
from .errors import ParseError, SchemaError, SubgroupOPEError
from .harness import (
    METRIC_FIELDS,
    ExperimentConfig,
    aggregate,
    estimate,
    fit,
    make_env,
    oracle,
    run_sweep,
    simulate_dataset,
)
from .inference import write_group_report
from .tree import tree_from_json, tree_to_json

logger = logging.getLogger("subgroup_ope")

CELL_COLUMNS = ["variant", "horizon", "seed", "status", "error", *METRIC_FIELDS, "covered_groups"]


def load_config(path: str | Path, seed: int | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"cannot read config: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"config is not valid JSON: {exc.msg}", exc.lineno) from None
    cfg = ExperimentConfig.from_dict(raw)
    return cfg if seed is None else cfg.replace(seed=seed)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_sidecar(out: Path, command: str, cfg: ExperimentConfig, inputs: dict[str, str | None]) -> None:
    meta = {
        "command": command,
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "inputs": {k: {"path": str(v), "sha256": sha256_file(v)} for k, v in sorted(inputs.items()) if v},
    }
    _dump_json(meta, out.with_name(out.name + ".meta.json"))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_rows(rows: list[dict], columns: list[str], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _read_tree(path):
    return tree_from_json(Path(path).read_text(encoding="utf-8"))


def _dataset(args, cfg):
    return to_records(load_jsonl(args.data), cfg.gamma)


def cmd_simulate(args) -> None:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out)
    trajs = simulate_dataset(cfg)
    save_jsonl(trajs, out)
    write_sidecar(out, "simulate", cfg, {"config": args.config})
    logger.info("wrote %d trajectories to %s", len(trajs), out)


def cmd_fit(args) -> None:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out)
    ds = _dataset(args, cfg)
    env = make_env(cfg) if cfg.g_inf == "bound" else None
    tree, report = fit(cfg, ds, env=env)
    out.write_text(tree_to_json(tree), encoding="utf-8")
    _dump_json(report, out.with_name(out.name + ".report.json"))
    write_sidecar(out, "fit", cfg, {"config": args.config, "data": args.data})
    logger.info("fitted a tree with %d leaves", tree.leaf_count)


def cmd_estimate(args) -> None:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out)
    ds = _dataset(args, cfg)
    tree = _read_tree(args.tree)
    env = make_env(cfg)
    ests = estimate(cfg, ds, tree, env if cfg.g_inf == "bound" else None, feature_names=env.feature_names)
    write_group_report(ests, out)
    write_sidecar(out, "estimate", cfg, {"config": args.config, "data": args.data, "tree": args.tree})


def cmd_oracle(args) -> None:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out)
    env = make_env(cfg)
    tree = _read_tree(args.tree) if args.tree else None
    X, t, truth = oracle(cfg, env, tree)
    names = list(env.feature_names) if len(env.feature_names) == X.shape[1] else [f"x{j}" for j in range(X.shape[1])]
    with open(out, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["point", *names, "t_true"])
        for i, (x, ti) in enumerate(zip(X.tolist(), t.tolist())):
            w.writerow([i, *(repr(float(v)) for v in x), repr(float(ti))])
    if truth is not None:
        groups = out.with_name(out.name + ".groups.csv")
        write_rows([{"leaf": k, "T_true": v} for k, v in sorted(truth.items())], ["leaf", "T_true"], groups)
    write_sidecar(out, "oracle", cfg, {"config": args.config, "tree": args.tree})


def cmd_ablate(args) -> None:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out)
    cells = out / "cells"
    cells.mkdir(parents=True, exist_ok=True)
    rows = run_sweep(cfg, jobs=args.jobs)
    for r in rows:
        write_rows([r], CELL_COLUMNS, cells / f"{r['variant']}_H{r['horizon']}_seed{r['seed']}.csv")
    write_rows(rows, CELL_COLUMNS, out / "metrics.csv")
    agg = aggregate(rows)
    agg_cols = list(agg[0]) if agg else ["variant", "horizon"]
    write_rows(agg, agg_cols, out / "aggregate.csv")
    write_sidecar(out / "metrics.csv", "ablate", cfg, {"config": args.config})
    failed = sum(r["status"] != "ok" for r in rows)
    if failed:
        logger.warning("%d of %d cells failed; see metrics.csv", failed, len(rows))
    logger.info("wrote %d rows to %s", len(rows), out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subgroup-ope", description="Subgroup off-policy evaluation experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, data=False, tree=None):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", required=True, help="output path")
        p.add_argument("--seed", type=int, default=None, help="override the config's master seed")
        if data:
            p.add_argument("--data", required=True, help="trajectory dataset (JSONL)")
        if tree is not None:
            p.add_argument("--tree", required=tree, default=None, help="tree JSON")
        p.set_defaults(func=func)
        return p

    add("simulate", cmd_simulate, "generate behavior-policy trajectories")
    add("fit", cmd_fit, "partitioning phase: grow a tree on the first split", data=True)
    add("estimate", cmd_estimate, "estimation phase: per-leaf effects and CIs", data=True, tree=True)
    add("oracle", cmd_oracle, "ground-truth effects for test points (and leaves)", tree=False)
    p = add("ablate", cmd_ablate, "sweep variants x horizons x seeds (--out is a directory)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except SubgroupOPEError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
