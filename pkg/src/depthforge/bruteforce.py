"""Exhaustive reference solvers, used in tests to certify the fast paths.

These intentionally share no solver code with the planner or the keep-set
modules: plans are enumerated from boundary bitmasks, keep sets from raw
subsets, knapsacks from item subsets. Guard limits keep full sweeps under a
minute on one core.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product

from .arch import NetworkDescriptor
from .errors import DepthforgeError
from .tables import BudgetSpec, CostTables

PLAN_GUARD = 12
SPAN_GUARD = 14
ITEM_GUARD = 20


@dataclass(frozen=True)
class OracleResult:
    """``objective`` is None when no feasible configuration exists."""

    objective: float | None
    witness: object
    explored: int


def brute_force_plan(
    tables: CostTables, budget: BudgetSpec, net: NetworkDescriptor
) -> OracleResult:
    """Enumerate every boundary set and per-segment kernel choice."""
    L = net.layer_count
    if L > PLAN_GUARD:
        raise DepthforgeError(f"plan enumeration guarded to L <= {PLAN_GUARD}")

    unit = Fraction(budget.budget_ms) / budget.units
    usable = budget.usable_units
    int_cost = {
        key: int(Fraction(ms) / unit) for key, ms in tables.latency.items()
    }
    keys_by_segment: dict[tuple[int, int], list] = {}
    for (i, j, k, dw) in sorted(tables.latency):
        keys_by_segment.setdefault((i, j), []).append(
            (k, dw, int_cost[(i, j, k, dw)], tables.importance[(i, j, k, dw)])
        )

    explored = 0
    best_obj: float | None = None
    best_witness = None
    for mask in range(1 << max(L - 1, 0)):
        bounds = [0] + [b for b in range(1, L) if mask >> (b - 1) & 1] + [L]
        segs = list(zip(bounds[:-1], bounds[1:]))
        if not all(net.segment_admissible(i, j) for i, j in segs):
            continue
        options = [keys_by_segment.get(seg) for seg in segs]
        if any(o is None for o in options):
            continue
        count = 1
        for o in options:
            count *= len(o)
        explored += count
        for combo in product(*options):
            cost = 0
            for _, _, c, _ in combo:
                cost += c
            if cost > usable:
                continue
            obj = 0.0
            for _, _, _, v in combo:
                obj += v
            if best_obj is None or obj > best_obj:
                best_obj = obj
                best_witness = (
                    tuple(bounds[1:-1]),
                    tuple((seg[0], seg[1], k, dw) for seg, (k, dw, _, _) in zip(segs, combo)),
                )
    return OracleResult(best_obj, best_witness, explored)


def brute_force_keep_set(
    i: int,
    j: int,
    k: int,
    net: NetworkDescriptor,
    depthwise: bool | None = None,
) -> OracleResult:
    """Exhaustive subset search for the maximal-l1 keep set of size k."""
    span = j - i
    if span > SPAN_GUARD:
        raise DepthforgeError(f"keep-set enumeration guarded to spans <= {SPAN_GUARD}")
    layers = [net.layer(l) for l in range(i + 1, j + 1)]
    forced = [
        l.index in net.irreducible or not l.identity_substitutable() for l in layers
    ]

    explored = 0
    best: tuple[float, tuple[int, ...]] | None = None
    for mask in range(1 << span):
        keep = [layers[p] for p in range(span) if mask >> p & 1]
        if any(f and not (mask >> p & 1) for p, f in enumerate(forced)):
            continue
        explored += 1
        size = 1 + sum(l.kernel_size - 1 for l in keep)
        if size != k:
            continue
        all_dw = all(l.is_depthwise for l in keep)
        if depthwise is True and not all_dw:
            continue
        if depthwise is False and all_dw:
            continue
        total = 0.0
        for l in keep:
            total += l.l1_norm
        indices = tuple(l.index for l in keep)
        if best is None or total > best[0] or (total == best[0] and indices < best[1]):
            best = (total, indices)
    if best is None:
        return OracleResult(None, None, explored)
    return OracleResult(best[0], best[1], explored)


def brute_force_knapsack(
    values: list[float],
    costs: list[int],
    budget_units: int,
    forced: frozenset[int] | set[int] = frozenset(),
) -> OracleResult:
    """Exhaustive 0-1 knapsack over items 1..n (1-based, like layer indices)."""
    n = len(values)
    if n > ITEM_GUARD:
        raise DepthforgeError(f"knapsack enumeration guarded to <= {ITEM_GUARD} items")
    if len(costs) != n:
        raise DepthforgeError("values and costs must have equal length")

    explored = 0
    best: tuple[float, tuple[int, ...]] | None = None
    for mask in range(1 << n):
        if any(not mask >> (item - 1) & 1 for item in forced):
            continue
        explored += 1
        cost = sum(costs[p] for p in range(n) if mask >> p & 1)
        if cost > budget_units:
            continue
        total = 0.0
        chosen = []
        for p in range(n):
            if mask >> p & 1:
                total += values[p]
                chosen.append(p + 1)
        chosen_t = tuple(chosen)
        if best is None or total > best[0] or (total == best[0] and chosen_t < best[1]):
            best = (total, chosen_t)
    if best is None:
        return OracleResult(None, None, explored)
    return OracleResult(best[0], best[1], explored)
