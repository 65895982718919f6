"""Command-line pipeline: gen, cluster, merge, eval, sweep.

Every run is deterministic given its seed and inputs; each command freezes
its effective settings as ``run.cfg`` in the output directory.  Exit codes:
0 success, 2 usage/config error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .clustering import features_flat, features_svd, kmeans
from .errors import ConfigError, LorapackError
from .merge import MergeConfig, merge
from .metrics import purity
from .oracle import CommandOracle, SyntheticOracle, SyntheticTaskModel, synthetic_generate
from .partition import (
    PartitionMap,
    dirichlet_partition,
    random_partition,
    read_partition_manifest,
    storage_fraction,
    write_partition_manifest,
)
from .search import SearchConfig, d2c_run, evaluate_partition
from .store import read_adapter_set, write_adapter, write_adapter_set
from .tensors import AdapterSet, lora_schema

MODEL_FILENAME = "synthetic_model.json"
PARTITION_FILENAME = "partition.tsv"
TRACE_FILENAME = "trace.jsonl"
RUNCFG_FILENAME = "run.cfg"

METHODS = ("random", "kmeans", "kmeans_svd", "dirichlet", "d2c")


# ---------------------------------------------------------------------------
# config plumbing


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config_defaults(subparser: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in subparser._actions}
    converted = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            converted[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                converted[key] = action.type(raw)
            except ValueError as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from exc
        else:
            converted[key] = raw
        if action.choices is not None and converted[key] not in action.choices:
            raise ConfigError(
                f"config key {key!r} must be one of {sorted(action.choices)}, got {raw!r}"
            )
    subparser.set_defaults(**converted)


def _freeze_run_cfg(out_dir: Path, command: str, args: argparse.Namespace) -> None:
    # "out" is where this file itself lives; freezing it would make otherwise
    # identical runs differ byte-wise.
    skip = {"func", "command", "config", "out"}
    lines = [f"command = {command}"]
    for key in sorted(vars(args)):
        if key in skip:
            continue
        value = getattr(args, key)
        if value is None:
            continue
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key.replace('_', '-')} = {value}")
    (out_dir / RUNCFG_FILENAME).write_text("".join(line + "\n" for line in lines), "utf-8")


def _int_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {exc}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _float_list(text: str) -> list[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats: {exc}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one float")
    return values


# ---------------------------------------------------------------------------
# shared pipeline pieces


def _require(args, *names: str) -> None:
    missing = [n for n in names if getattr(args, n.replace("-", "_"), None) is None]
    if missing:
        flags = ", ".join("--" + n for n in missing)
        raise ConfigError(f"missing required option(s): {flags}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_set(args) -> AdapterSet:
    return read_adapter_set(args.adapters)


def _merge_cfg(args) -> MergeConfig:
    weights = tuple(args.merge_weights) if getattr(args, "merge_weights", None) else None
    return MergeConfig(
        method=args.merge,
        density=args.density,
        drop_rate=args.drop_rate,
        weights=weights,
        rng_seed=args.merge_seed,
    )


def _build_oracle(args, examples: int | None):
    if args.oracle == "synthetic":
        model_path = Path(args.adapters) / MODEL_FILENAME
        if not model_path.is_file():
            raise ConfigError(
                f"no {MODEL_FILENAME} in {args.adapters}; generate the fleet with "
                f"'lorapack gen' or use --oracle command"
            )
        model = SyntheticTaskModel.load(model_path)
        return SyntheticOracle(model, examples)
    if not args.oracle_cmd:
        raise ConfigError("--oracle command requires --oracle-cmd")
    return CommandOracle(
        args.oracle_cmd,
        examples_per_task=examples if examples is not None else 10,
        timeout=args.oracle_timeout,
    )


def _labels(adapter_set: AdapterSet, attribute: str) -> list[str] | None:
    labels = [getattr(a.meta, attribute) for a in adapter_set]
    return None if any(v is None for v in labels) else labels


def _cluster_once(adapter_set: AdapterSet, args, seed: int, search_examples: int | None):
    """Run the selected clustering method; returns (partition, trace_or_None)."""
    rng = np.random.default_rng(seed)
    n = len(adapter_set)
    if args.method == "random":
        return random_partition(n, args.k, rng), None
    if args.method == "kmeans":
        return kmeans(features_flat(adapter_set), args.k, rng).partition, None
    if args.method == "kmeans_svd":
        top_k = args.svd_top_k or min(4, adapter_set[0].meta.rank)
        return kmeans(features_svd(adapter_set, top_k), args.k, rng).partition, None
    if args.method == "dirichlet":
        return (
            dirichlet_partition(adapter_set, args.k, args.attribute, args.dirichlet_alpha, rng),
            None,
        )
    oracle = _build_oracle(args, search_examples)
    cfg = SearchConfig(k=args.k, iters=args.iters, rng_seed=seed, merge_cfg=_merge_cfg(args))
    partition, trace = d2c_run(adapter_set, oracle, cfg)
    return partition, trace


def _write_eval_report(
    out_dir: Path,
    evaluation,
    *,
    method: str,
    k: int,
    n: int,
    seed: int,
    storage_pct: float,
) -> None:
    records = [
        {"method": method, "k": k, "n": n, "seed": seed, "task_id": tid, "loss": loss}
        for tid, loss in evaluation.per_task.items()
    ]
    with (out_dir / "report.jsonl").open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    lines = [
        f"method={method} K={k} n={n} seed={seed} storage={storage_pct:g}%",
        f"tasks={len(evaluation.per_task)} failures={len(evaluation.failures)}",
    ]
    if evaluation.mean_loss is not None:
        lines.append(f"mean_loss={evaluation.mean_loss:.10g}")
    lines.append("")
    for tid, loss in evaluation.per_task.items():
        lines.append(f"{tid}\t{loss:.10g}")
    for tid, message in evaluation.failures.items():
        lines.append(f"{tid}\tFAILED\t{message}")
    (out_dir / "report.txt").write_text("".join(line + "\n" for line in lines), "utf-8")


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    _require(args, "out")
    if args.n_adapters < 1:
        raise ConfigError(f"--n-adapters must be >= 1, got {args.n_adapters}")
    if not (1 <= args.groups <= args.n_adapters):
        raise ConfigError("--groups must be in [1, n-adapters]")
    out = _out_dir(args)
    schema = lora_schema(args.layers, args.rank, args.d_in, args.d_out)
    adapter_set, model = synthetic_generate(
        groups=args.groups,
        n_adapters=args.n_adapters,
        schema=schema,
        center_scale=args.center_scale,
        noise=args.noise,
        rng=np.random.default_rng(args.seed),
        examples_per_task=args.examples_per_task,
        langs=args.langs,
        alpha=args.alpha,
    )
    names = write_adapter_set(adapter_set, out)
    model.save(out / MODEL_FILENAME)
    _freeze_run_cfg(out, "gen", args)
    print(f"wrote {len(names)} adapters + {MODEL_FILENAME} to {out}")
    return 0


def cmd_cluster(args) -> int:
    _require(args, "adapters", "method", "out")
    adapter_set = _load_set(args)
    if args.k > len(adapter_set):
        raise ConfigError(f"--k {args.k} exceeds the {len(adapter_set)} adapters in the catalog")
    out = _out_dir(args)
    partition, trace = _cluster_once(adapter_set, args, args.seed, args.examples_per_task)
    write_partition_manifest(
        out / PARTITION_FILENAME, partition, adapter_set.task_ids(), args.method, args.seed
    )
    if trace is not None:
        trace.write_jsonl(out / TRACE_FILENAME)
    _freeze_run_cfg(out, "cluster", args)

    used = len(partition.non_empty_clusters())
    pct = storage_fraction(used, partition.n)
    summary = (
        f"method={args.method} K={partition.k} N={partition.n} "
        f"non_empty={used} storage={pct:g}%"
    )
    if trace is not None:
        summary += f" accepted={trace.accepted_count()}/{len(trace.records)}"
    print(summary)
    attribute = args.attribute if args.method == "dirichlet" else "group_label"
    labels = _labels(adapter_set, attribute)
    if labels is not None:
        print(f"purity[{attribute}]={purity(partition.assignment, labels):.3f}")
    return 0


def _require_partition(args, adapter_set: AdapterSet) -> tuple[PartitionMap, str, int]:
    partition, task_ids, header = read_partition_manifest(args.partition)
    if list(task_ids) != list(adapter_set.task_ids()):
        raise ConfigError(
            f"partition manifest {args.partition} does not list the catalog's task ids "
            f"in catalog order"
        )
    return partition, header.get("method", "unknown"), int(header.get("seed", -1))


def cmd_merge(args) -> int:
    _require(args, "adapters", "partition", "out")
    adapter_set = _load_set(args)
    partition, _, _ = _require_partition(args, adapter_set)
    out = _out_dir(args)
    cfg = _merge_cfg(args)
    names = []
    for c in partition.non_empty_clusters():
        members = [adapter_set[i] for i in partition.members(c)]
        merged = merge(members, cfg, task_id=f"cluster_{c}")
        name = f"cluster_{c}.adpt"
        write_adapter(merged, out / name)
        names.append(name)
    (out / "index.txt").write_text("".join(n + "\n" for n in names), "utf-8")
    _freeze_run_cfg(out, "merge", args)
    print(f"wrote {len(names)} merged adapters to {out}")
    return 0


def cmd_eval(args) -> int:
    _require(args, "adapters", "partition", "out")
    adapter_set = _load_set(args)
    partition, method, seed = _require_partition(args, adapter_set)
    out = _out_dir(args)
    oracle = _build_oracle(args, args.examples_per_task)
    examples = getattr(oracle, "examples_per_task", args.examples_per_task or 10)
    evaluation = evaluate_partition(adapter_set, partition, oracle, _merge_cfg(args))
    pct = storage_fraction(len(partition.non_empty_clusters()), partition.n)
    _write_eval_report(
        out, evaluation, method=method, k=partition.k, n=examples, seed=seed, storage_pct=pct
    )
    _freeze_run_cfg(out, "eval", args)
    if evaluation.mean_loss is not None:
        print(f"mean_loss={evaluation.mean_loss:.10g} storage={pct:g}% tasks={len(evaluation.per_task)}")
    for tid, message in evaluation.failures.items():
        print(f"oracle failure for {tid}: {message}", file=sys.stderr)
    return 1 if evaluation.failures else 0


def cmd_sweep(args) -> int:
    _require(args, "adapters", "out")
    adapter_set = _load_set(args)
    out = _out_dir(args)
    rows = []
    cell_records = []
    for k in args.sweep_k:
        if k > len(adapter_set):
            raise ConfigError(f"sweep K={k} exceeds the catalog size {len(adapter_set)}")
        for n in args.sweep_n:
            means = []
            for r in range(args.repeats):
                seed = args.seed + r
                cell = out / "cells" / f"k{k}_n{n}_r{r}"
                cell.mkdir(parents=True, exist_ok=True)
                cell_args = argparse.Namespace(**vars(args))
                cell_args.k = k
                try:
                    partition, trace = _cluster_once(adapter_set, cell_args, seed, n)
                    write_partition_manifest(
                        cell / PARTITION_FILENAME,
                        partition,
                        adapter_set.task_ids(),
                        args.method,
                        seed,
                    )
                    if trace is not None:
                        trace.write_jsonl(cell / TRACE_FILENAME)
                    oracle = _build_oracle(args, args.eval_examples)
                    evaluation = evaluate_partition(
                        adapter_set, partition, oracle, _merge_cfg(args)
                    )
                    if evaluation.failures or evaluation.mean_loss is None:
                        raise LorapackError(
                            f"{len(evaluation.failures)} oracle failures in cell"
                        )
                    pct = storage_fraction(len(partition.non_empty_clusters()), partition.n)
                    _write_eval_report(
                        cell,
                        evaluation,
                        method=args.method,
                        k=k,
                        n=args.eval_examples,
                        seed=seed,
                        storage_pct=pct,
                    )
                except LorapackError as exc:
                    print(f"cell k={k} n={n} r={r} failed: {exc}", file=sys.stderr)
                    cell_records.append(
                        {"method": args.method, "k": k, "n": n, "repeat": r, "seed": seed,
                         "mean_loss": None, "status": "failed"}
                    )
                    continue
                means.append(evaluation.mean_loss)
                cell_records.append(
                    {"method": args.method, "k": k, "n": n, "repeat": r, "seed": seed,
                     "mean_loss": evaluation.mean_loss, "status": "ok"}
                )
            if means:
                mean = float(np.mean(means))
                std = float(np.std(means, ddof=1)) if len(means) > 1 else 0.0
            else:
                mean, std = float("nan"), float("nan")
            rows.append(
                {"method": args.method, "k": k, "n": n, "repeats": len(means),
                 "mean_loss": mean, "std_loss": std}
            )

    with (out / "sweep.jsonl").open("w", encoding="utf-8") as fh:
        for record in cell_records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    with (out / "sweep.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["method", "k", "n", "repeats", "mean_loss", "std_loss"]
        )
        writer.writeheader()
        writer.writerows(rows)
    _freeze_run_cfg(out, "sweep", args)
    print(f"{'method':<10} {'K':>4} {'n':>4} {'repeats':>7} {'mean_loss':>14} {'std_loss':>14}")
    for row in rows:
        print(
            f"{row['method']:<10} {row['k']:>4} {row['n']:>4} {row['repeats']:>7} "
            f"{row['mean_loss']:>14.6g} {row['std_loss']:>14.6g}"
        )
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_merge_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--merge", choices=("linear", "ties", "dare"), default="ties",
                   help="merge method (default: ties)")
    p.add_argument("--density", type=float, default=0.5,
                   help="fraction of coordinates TIES keeps (default: 0.5)")
    p.add_argument("--drop-rate", type=float, default=0.0,
                   help="DARE drop probability (default: 0.0)")
    p.add_argument("--merge-weights", type=_float_list, default=None,
                   help="comma-separated per-input weights (default: uniform)")
    p.add_argument("--merge-seed", type=int, default=0,
                   help="seed for DARE drop masks (default: 0)")


def _add_oracle_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--oracle", choices=("synthetic", "command"), default="synthetic",
                   help="loss oracle backend (default: synthetic)")
    p.add_argument("--oracle-cmd", default=None,
                   help="external evaluator command line (for --oracle command)")
    p.add_argument("--oracle-timeout", type=float, default=600.0,
                   help="external oracle timeout in seconds (default: 600)")
    p.add_argument("--examples-per-task", type=int, default=None,
                   help="examples per task the oracle simulates/passes through")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="lorapack",
        description="Cluster and merge single-task LoRA adapters under a storage budget.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers: dict[str, argparse.ArgumentParser] = {}

    def add(name: str, func, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--seed", type=int, default=0, help="run seed (default: 0)")
        p.add_argument("--out", help="output directory")
        p.set_defaults(func=func)
        subparsers[name] = p
        return p

    p = add("gen", cmd_gen, "generate a synthetic adapter fleet with planted groups")
    p.add_argument("--n-adapters", type=int, default=40)
    p.add_argument("--groups", type=int, default=5)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--d-in", type=int, default=16)
    p.add_argument("--d-out", type=int, default=16)
    p.add_argument("--alpha", type=float, default=None,
                   help="LoRA alpha written to metadata (default: 4*rank)")
    p.add_argument("--center-scale", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--langs", type=int, default=8)
    p.add_argument("--examples-per-task", type=int, default=10)

    p = add("cluster", cmd_cluster, "partition an adapter catalog into K clusters")
    p.add_argument("--adapters", help="adapter-set directory")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--iters", type=int, default=200,
                   help="search iterations for method=d2c (default: 200)")
    p.add_argument("--attribute", choices=("group_label", "lang_label"),
                   default="group_label", help="attribute for method=dirichlet")
    p.add_argument("--dirichlet-alpha", type=float, default=1.0)
    p.add_argument("--svd-top-k", type=int, default=None,
                   help="singular triples per layer for kmeans_svd (default: min(4, rank))")
    _add_merge_flags(p)
    _add_oracle_flags(p)

    p = add("merge", cmd_merge, "merge each cluster of a partition into one adapter")
    p.add_argument("--adapters")
    p.add_argument("--partition", help="partition manifest file")
    _add_merge_flags(p)

    p = add("eval", cmd_eval, "evaluate every task against its cluster's merged adapter")
    p.add_argument("--adapters")
    p.add_argument("--partition")
    _add_merge_flags(p)
    _add_oracle_flags(p)

    p = add("sweep", cmd_sweep, "grid of cluster+eval runs over K and example counts")
    p.add_argument("--adapters")
    p.add_argument("--method", choices=METHODS, default="d2c")
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--sweep-k", type=_int_list, default=[5],
                   help="comma-separated cluster budgets (default: 5)")
    p.add_argument("--sweep-n", type=_int_list, default=[10],
                   help="comma-separated search example counts (default: 10)")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--eval-examples", type=int, default=100,
                   help="example count for the final evaluation oracle (default: 100)")
    p.add_argument("--attribute", choices=("group_label", "lang_label"), default="group_label")
    p.add_argument("--dirichlet-alpha", type=float, default=1.0)
    p.add_argument("--svd-top-k", type=int, default=None)
    _add_merge_flags(p)
    _add_oracle_flags(p)

    return parser, subparsers


def main(argv=None) -> int:
    parser, subparsers = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
            if args.config:
                values = _read_config_file(args.config)
                _apply_config_defaults(subparsers[args.command], values)
                args = parser.parse_args(argv)
        except SystemExit as exc:
            return exc.code if isinstance(exc.code, int) else 2
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (LorapackError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
