"""Command-line pipeline: tables -> plan -> merge -> verify -> sweep.

Every subcommand is deterministic: identical inputs (plus ``--seed`` where
randomness is involved) produce byte-identical artifacts. Module errors
surface as machine-readable JSON on stderr with a nonzero exit status.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arch import NetworkDescriptor, load_network
from .bruteforce import brute_force_plan
from .errors import DepthforgeError, TableError
from .kernels import KernelTensor, conv_reference, fold_batchnorm, merge_sequence
from .planner import (
    LAYER_MERGE,
    LAYER_ONLY,
    MergePlan,
    solve,
    solve_layer_only,
    validate_plan,
)
from .serialize import (
    dump_json,
    load_batchnorm,
    load_kernel,
    read_importance_json,
    read_layer_importance_json,
    read_plan,
    save_kernel,
    write_latency_csv,
    write_plan,
)
from .tables import (
    AnalyticLatencyProvider,
    BudgetSpec,
    CostTables,
    LatencyProvider,
    TableLatencyProvider,
    build_importance_table,
    build_latency_table,
    default_discretization,
    iter_table_keys,
    segment_query,
)

EQUIVALENCE_TOLERANCE = 1e-5


@dataclass
class RunConfig:
    subcommand: str
    net: str | None = None
    latency: str | None = None
    analytic: str | None = None
    importance: str | None = None
    layer_importance: str | None = None
    weights: str | None = None
    plan: str | None = None
    out: str | None = None
    report: str | None = None
    budget_ms: float | None = None
    budget_pct: float | None = None
    budgets: str | None = None
    budget_kind: str = "pct"
    disc: int | None = None
    sense: str = "strict"
    mode: str = LAYER_MERGE
    seed: int = 0
    oracle: bool = False


def _require(config: RunConfig, *names: str) -> None:
    missing = [n for n in names if getattr(config, n) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise DepthforgeError(f"{config.subcommand} requires {flags}")


def _provider(config: RunConfig) -> LatencyProvider:
    if config.analytic is not None and config.latency is not None:
        raise DepthforgeError("give either --latency or --analytic, not both")
    if config.analytic is not None:
        with open(config.analytic, "r", encoding="utf-8") as fh:
            return AnalyticLatencyProvider.from_config(json.load(fh))
    if config.latency is not None:
        return TableLatencyProvider.from_csv(config.latency)
    raise DepthforgeError("a latency source is required: --latency CSV or --analytic CONFIG")


def _original_latency_ms(net: NetworkDescriptor, provider: LatencyProvider) -> dict[int, float]:
    """Per-layer latency of the unmodified network."""
    out = {}
    for layer in net.layers:
        query = segment_query(
            net, layer.index - 1, layer.index, layer.kernel_size, layer.is_depthwise
        )
        out[layer.index] = provider.latency_ms(query)
    return out


def _budget(config: RunConfig, net: NetworkDescriptor, provider: LatencyProvider) -> BudgetSpec:
    if (config.budget_ms is None) == (config.budget_pct is None):
        raise DepthforgeError("give exactly one of --budget-ms or --budget-pct")
    if config.budget_ms is not None:
        budget_ms = config.budget_ms
    else:
        t_orig = sum(_original_latency_ms(net, provider).values())
        budget_ms = config.budget_pct / 100.0 * t_orig
    units = config.disc if config.disc is not None else default_discretization(budget_ms)
    return BudgetSpec(budget_ms=budget_ms, units=units, sense=config.sense)


def _assemble_tables(config: RunConfig, net: NetworkDescriptor, provider: LatencyProvider) -> CostTables:
    _require(config, "importance")
    latency = build_latency_table(net, provider)
    importance = build_importance_table(read_importance_json(config.importance))
    return CostTables.assemble(net, latency, importance)


# ---------------------------------------------------------------------------
# subcommands

def _cmd_gen_tables(config: RunConfig) -> int:
    _require(config, "net", "out")
    net = load_network(config.net)
    keys = list(iter_table_keys(net))
    if config.analytic is not None or config.latency is not None:
        rows = build_latency_table(net, _provider(config))
    else:
        rows = {key: None for key in keys}
    write_latency_csv(rows, config.out)

    sizes: dict[tuple[int, int], list[int]] = {}
    for (i, j, k, _) in keys:
        sizes.setdefault((i, j), [])
        if k not in sizes[(i, j)]:
            sizes[(i, j)].append(k)
    report = {
        "net": net.name,
        "layer_count": net.layer_count,
        "kernel_size_sum": sum(l.kernel_size for l in net.layers),
        "key_count": len(keys),
        "segments": [
            {"i": i, "j": j, "sizes": sorted(v)} for (i, j), v in sorted(sizes.items())
        ],
    }
    dump_json(report, config.report or config.out + ".segments.json")
    return 0


def _cmd_plan(config: RunConfig) -> int:
    _require(config, "net", "out")
    net = load_network(config.net)
    provider = _provider(config)
    budget = _budget(config, net, provider)

    if config.mode == LAYER_ONLY:
        _require(config, "layer_importance")
        importance = read_layer_importance_json(config.layer_importance)
        latency = _original_latency_ms(net, provider)
        plan = solve_layer_only(importance, latency, budget, net)
        report = validate_plan(plan, None, budget, net, layer_tables=(importance, latency))
    else:
        tables = _assemble_tables(config, net, provider)
        plan = solve(tables, budget, net)
        report = validate_plan(plan, tables, budget, net)
    if not report.passed:
        raise DepthforgeError(
            f"emitted plan failed self-validation: {report.violations[0]}"
        )
    write_plan(plan, config.out)
    return 0


def _layer_kernels(
    net: NetworkDescriptor, weights_dir: str | Path
) -> dict[int, KernelTensor]:
    """Per-layer kernels from blob files, batch-norm folded when present."""
    weights_dir = Path(weights_dir)
    kernels = {}
    for layer in net.layers:
        stem = weights_dir / f"layer_{layer.index:03d}"
        if not stem.with_suffix(".json").exists():
            raise DepthforgeError(f"missing weight sidecar {stem}.json")
        kernel = load_kernel(stem)
        if (
            kernel.kernel_size != layer.kernel_size
            or kernel.stride != layer.stride
            or kernel.in_channels != layer.in_channels
            or kernel.out_channels != layer.out_channels
        ):
            raise DepthforgeError(
                f"weights for layer {layer.index} disagree with the descriptor"
            )
        bn_path = weights_dir / f"bn_{layer.index:03d}.json"
        if bn_path.exists():
            kernel = fold_batchnorm(kernel, load_batchnorm(bn_path))
        kernels[layer.index] = kernel
    return kernels


def _merged_segments(
    net: NetworkDescriptor, plan: MergePlan, kernels: dict[int, KernelTensor]
):
    kept = set(plan.kept_convs)
    for segment in plan.segments:
        members = list(range(segment.start + 1, segment.end + 1))
        stack = [kernels[l] for l in members]
        mask = [l in kept for l in members]
        merged = merge_sequence(stack, mask)
        if merged.kernel_size != segment.kernel_size:
            raise DepthforgeError(
                f"segment ({segment.start}, {segment.end}] merged to kernel "
                f"{merged.kernel_size}, plan says {segment.kernel_size}"
            )
        yield segment, stack, mask, merged


def _cmd_merge(config: RunConfig) -> int:
    _require(config, "net", "plan", "weights", "out")
    net = load_network(config.net)
    plan = read_plan(config.plan)
    kernels = _layer_kernels(net, config.weights)
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    for segment, _, _, merged in _merged_segments(net, plan, kernels):
        stem = out_dir / f"merged_{segment.start:03d}_{segment.end:03d}"
        save_kernel(merged, stem)
        manifest.append(
            {
                "start": segment.start,
                "end": segment.end,
                "kernel_size": merged.kernel_size,
                "depthwise": merged.is_depthwise,
                "stride": merged.stride,
                "blob": stem.name + ".bin",
            }
        )
    dump_json(manifest, out_dir / "segments.json")
    return 0


def _equivalence_report(
    net: NetworkDescriptor,
    plan: MergePlan,
    kernels: dict[int, KernelTensor],
    seed: int,
) -> list[dict]:
    """Merged kernel vs sequential evaluation per segment, random inputs."""
    rng = np.random.default_rng(seed)
    rows = []
    for segment, stack, mask, merged in _merged_segments(net, plan, kernels):
        spatial = merged.kernel_size + 5
        x = rng.standard_normal((stack[0].in_channels, spatial, spatial))
        direct = x
        for kernel, keep in zip(stack, mask):
            if keep:
                direct = conv_reference(direct, kernel)
        via_merged = conv_reference(x, merged)
        scale = max(float(np.max(np.abs(direct))), 1e-30)
        err = float(np.max(np.abs(via_merged - direct))) / scale
        rows.append(
            {
                "start": segment.start,
                "end": segment.end,
                "max_rel_err": err,
                "pass": err <= EQUIVALENCE_TOLERANCE,
            }
        )
    return rows


def _cmd_verify(config: RunConfig) -> int:
    _require(config, "net", "plan")
    net = load_network(config.net)
    plan = read_plan(config.plan)

    tables = None
    budget = None
    if config.latency is not None or config.analytic is not None:
        provider = _provider(config)
        if plan.mode == LAYER_MERGE and config.importance is not None:
            tables = _assemble_tables(config, net, provider)
        if config.budget_ms is not None or config.budget_pct is not None:
            budget = _budget(config, net, provider)
    if budget is None:
        # Structural validation only: reuse the plan's own discretization.
        budget = BudgetSpec(budget_ms=1.0, units=plan.budget_units, sense=config.sense)
        tables = None

    report = validate_plan(plan, tables, budget, net)
    doc = {"plan_valid": report.passed, "violations": list(report.violations)}

    if config.weights is not None:
        kernels = _layer_kernels(net, config.weights)
        rows = _equivalence_report(net, plan, kernels, config.seed)
        doc["equivalence"] = rows
        if any(not r["pass"] for r in rows):
            doc["plan_valid"] = False

    if config.oracle:
        if tables is None:
            raise DepthforgeError(
                "--oracle needs --importance, a latency source, and a budget"
            )
        reference = brute_force_plan(tables, budget, net)
        doc["oracle"] = {
            "objective": reference.objective,
            "matches": reference.objective == plan.objective,
        }
        if not doc["oracle"]["matches"]:
            doc["plan_valid"] = False

    if config.report:
        dump_json(doc, config.report)
    else:
        print(json.dumps(doc, indent=2, sort_keys=True))
    return 0 if doc["plan_valid"] else 2


def _cmd_sweep(config: RunConfig) -> int:
    _require(config, "net", "out", "budgets", "importance")
    net = load_network(config.net)
    provider = _provider(config)
    tables = _assemble_tables(config, net, provider)
    t_orig = sum(_original_latency_ms(net, provider).values())

    lines = ["budget,budget_ms,units,objective,latency_units,kept_convs,segments"]
    for token in config.budgets.split(","):
        value = float(token)
        budget_ms = value / 100.0 * t_orig if config.budget_kind == "pct" else value
        units = config.disc if config.disc is not None else default_discretization(budget_ms)
        budget = BudgetSpec(budget_ms=budget_ms, units=units, sense=config.sense)
        try:
            plan = solve(tables, budget, net)
            lines.append(
                f"{token},{budget_ms!r},{units},{plan.objective!r},"
                f"{plan.latency_units},{len(plan.kept_convs)},{len(plan.segments)}"
            )
        except DepthforgeError:
            lines.append(f"{token},{budget_ms!r},{units},,,,")
    Path(config.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depthforge",
        description="Plan and materialize latency-budgeted depth compression.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p, *, budget=False):
        p.add_argument("--net", help="network descriptor JSON")
        p.add_argument("--latency", help="measured latency CSV")
        p.add_argument("--analytic", help="analytic latency provider config JSON")
        p.add_argument("--importance", help="importance measurements JSON")
        p.add_argument("--out", help="output path")
        p.add_argument("--seed", type=int, default=0)
        if budget:
            p.add_argument("--budget-ms", type=float, dest="budget_ms")
            p.add_argument("--budget-pct", type=float, dest="budget_pct")
            p.add_argument("--disc", type=int, help="discretization level")
            p.add_argument("--sense", choices=["strict", "inclusive"], default="strict")

    p = sub.add_parser("gen-tables", help="emit the latency CSV (skeleton) and segment report")
    add_common(p)
    p.add_argument("--report", help="segment report path (default: <out>.segments.json)")

    p = sub.add_parser("plan", help="solve for an optimal plan")
    add_common(p, budget=True)
    p.add_argument("--mode", choices=["merge", "layer-merge", "layer-only"], default="merge")
    p.add_argument("--layer-importance", dest="layer_importance",
                   help="per-layer keep values JSON (layer-only mode)")

    p = sub.add_parser("merge", help="materialize merged kernels for a plan")
    add_common(p)
    p.add_argument("--plan", help="plan JSON")
    p.add_argument("--weights", help="directory of per-layer kernel blobs")

    p = sub.add_parser("verify", help="validate a plan and check merge equivalence")
    add_common(p, budget=True)
    p.add_argument("--plan", help="plan JSON")
    p.add_argument("--weights", help="directory of per-layer kernel blobs")
    p.add_argument("--report", help="write the verification report JSON here")
    p.add_argument("--oracle", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("sweep", help="plan across a list of budgets, emit a Pareto CSV")
    add_common(p, budget=True)
    p.add_argument("--budgets", help="comma-separated budget values")
    p.add_argument("--budget-kind", choices=["pct", "ms"], default="pct", dest="budget_kind")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    mode = getattr(args, "mode", "merge")
    if mode == "merge":
        mode = LAYER_MERGE
    fields = {f for f in RunConfig.__dataclass_fields__}
    values = {k: v for k, v in vars(args).items() if k in fields}
    values["mode"] = mode
    return RunConfig(**values)


def run(config: RunConfig) -> int:
    handlers = {
        "gen-tables": _cmd_gen_tables,
        "plan": _cmd_plan,
        "merge": _cmd_merge,
        "verify": _cmd_verify,
        "sweep": _cmd_sweep,
    }
    if config.subcommand not in handlers:
        raise DepthforgeError(f"unknown subcommand {config.subcommand!r}")
    return handlers[config.subcommand](config)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = config_from_args(args)
    try:
        return run(config)
    except DepthforgeError as exc:
        payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 1
    except OSError as exc:
        payload = {"error": {"type": "OSError", "message": str(exc)}}
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
