"""Budgeted planners: exact segmentation DP and the layer-only knapsack.

The main solver chooses activation boundaries and per-segment merged kernel
sizes maximizing total importance under a discretized latency budget. The
value table ``M[l, t]`` holds the best importance sum over the first ``l``
layers within ``t`` latency units; each cell stores a backpointer so the
winning plan can be reconstructed exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .arch import NetworkDescriptor
from .errors import InfeasibleBudgetError, TableError
from .keepsets import solve_keep_set
from .tables import BudgetSpec, CostTables, TableKey, discretize

LAYER_MERGE = "layer-merge"
LAYER_ONLY = "layer-only"


@dataclass(frozen=True)
class Segment:
    start: int
    end: int
    kernel_size: int
    depthwise: bool


@dataclass(frozen=True)
class MergePlan:
    """Solver output: kept activations/convolutions plus per-segment choices."""

    kept_activations: tuple[int, ...]
    kept_convs: tuple[int, ...]
    segments: tuple[Segment, ...]
    objective: float
    latency_units: int
    budget_units: int
    mode: str = LAYER_MERGE

    def to_doc(self) -> dict:
        return {
            "mode": self.mode,
            "objective": self.objective,
            "latency_units": self.latency_units,
            "budget_units": self.budget_units,
            "kept_activations": list(self.kept_activations),
            "kept_convs": list(self.kept_convs),
            "segments": [
                {
                    "start": s.start,
                    "end": s.end,
                    "kernel_size": s.kernel_size,
                    "depthwise": s.depthwise,
                }
                for s in self.segments
            ],
        }

    @staticmethod
    def from_doc(doc: dict) -> "MergePlan":
        return MergePlan(
            kept_activations=tuple(doc["kept_activations"]),
            kept_convs=tuple(doc["kept_convs"]),
            segments=tuple(
                Segment(s["start"], s["end"], s["kernel_size"], bool(s["depthwise"]))
                for s in doc["segments"]
            ),
            objective=float(doc["objective"]),
            latency_units=int(doc["latency_units"]),
            budget_units=int(doc["budget_units"]),
            mode=doc["mode"],
        )


@dataclass
class DPState:
    """Value table plus backpointers of one recurrence run.

    ``m`` has shape (L+1, units+1); unreachable cells are -inf. The choice
    arrays record, per cell, the segment start, kernel size, and depthwise
    flag of the winning last segment (-1 where unreachable).
    """

    m: np.ndarray
    choice_start: np.ndarray
    choice_kernel: np.ndarray
    choice_depthwise: np.ndarray


def _keys_by_end(
    net: NetworkDescriptor,
    int_latency: dict[TableKey, int],
    importance: dict[TableKey, float],
) -> list[list[tuple[int, int, bool, int, float]]]:
    """Group admissible table keys by segment end, in tie-break order."""
    by_end: list[list[tuple[int, int, bool, int, float]]] = [
        [] for _ in range(net.layer_count + 1)
    ]
    for key in sorted(int_latency):
        i, j, k, dw = key
        if key not in importance:
            raise TableError(f"importance missing for key {key}")
        if not net.segment_admissible(i, j):
            continue
        by_end[j].append((i, k, dw, int_latency[key], importance[key]))
    return by_end


def run_recurrence(
    net: NetworkDescriptor,
    int_latency: dict[TableKey, int],
    importance: dict[TableKey, float],
    units: int,
) -> DPState:
    """Fill the value table bottom-up.

    For each layer count l and unit budget t, the best plan either is empty
    (l = 0) or ends with a segment (l', l] of some kernel size; candidates
    are scanned in (l', k, depthwise) order and replace the incumbent only
    on strict improvement, which pins the tie-breaking.
    """
    L = net.layer_count
    m = np.full((L + 1, units + 1), -np.inf)
    m[0, :] = 0.0
    choice_start = np.full((L + 1, units + 1), -1, dtype=np.int32)
    choice_kernel = np.full((L + 1, units + 1), -1, dtype=np.int32)
    choice_depthwise = np.zeros((L + 1, units + 1), dtype=bool)

    by_end = _keys_by_end(net, int_latency, importance)
    for l in range(1, L + 1):
        best = m[l]
        for start, k, dw, cost, value in by_end[l]:
            if cost > units:
                continue
            cand = np.full(units + 1, -np.inf)
            cand[cost:] = m[start, : units + 1 - cost] + value
            better = cand > best
            if better.any():
                best[better] = cand[better]
                choice_start[l, better] = start
                choice_kernel[l, better] = k
                choice_depthwise[l, better] = dw
    return DPState(m, choice_start, choice_kernel, choice_depthwise)


def _min_cost_units(
    net: NetworkDescriptor, int_latency: dict[TableKey, int]
) -> int | None:
    """Cheapest achievable discretized latency over all admissible plans."""
    L = net.layer_count
    inf = float("inf")
    best = [0.0] + [inf] * L
    by_end: list[list[tuple[int, int]]] = [[] for _ in range(L + 1)]
    for (i, j, k, dw), cost in int_latency.items():
        if net.segment_admissible(i, j):
            by_end[j].append((i, cost))
    for l in range(1, L + 1):
        for start, cost in by_end[l]:
            total = best[start] + cost
            if total < best[l]:
                best[l] = total
    return None if best[L] == inf else int(best[L])


def solve(
    tables: CostTables, budget: BudgetSpec, net: NetworkDescriptor
) -> MergePlan:
    """Optimal segmentation plan for the discretized instance.

    Raises :class:`InfeasibleBudgetError` when even the cheapest admissible
    plan exceeds the budget.
    """
    int_latency, _ = discretize(tables.latency, budget.budget_ms, budget.units)
    usable = budget.usable_units
    if usable < 0:
        raise InfeasibleBudgetError(
            "strict budget with a single grid unit admits no plan",
            _min_cost_units(net, int_latency),
        )
    state = run_recurrence(net, int_latency, tables.importance, budget.units)
    L = net.layer_count
    if not np.isfinite(state.m[L, usable]):
        min_units = _min_cost_units(net, int_latency)
        detail = (
            "no admissible segmentation covers the network"
            if min_units is None
            else f"minimal achievable latency is {min_units} units "
            f"(~{min_units * budget.budget_ms / budget.units:.6g} ms), "
            f"budget allows {usable}"
        )
        raise InfeasibleBudgetError(f"budget infeasible: {detail}", min_units)

    segments: list[Segment] = []
    kept_convs: set[int] = set()
    latency_units = 0
    l, t = L, usable
    while l > 0:
        start = int(state.choice_start[l, t])
        k = int(state.choice_kernel[l, t])
        dw = bool(state.choice_depthwise[l, t])
        segments.append(Segment(start, l, k, dw))
        keep = solve_keep_set(start, l, k, net, depthwise=dw)
        kept_convs.update(keep.keep)
        cost = int_latency[(start, l, k, dw)]
        latency_units += cost
        l, t = start, t - cost

    segments.reverse()
    return MergePlan(
        kept_activations=tuple(s.end for s in segments[:-1]),
        kept_convs=tuple(sorted(kept_convs)),
        segments=tuple(segments),
        objective=float(state.m[L, usable]),
        latency_units=latency_units,
        budget_units=budget.units,
        mode=LAYER_MERGE,
    )


# ---------------------------------------------------------------------------
# layer-only baseline (0-1 knapsack over whole layers)

def _floor_units(value_ms: float, t0_ms: float, units: int) -> int:
    return int(Fraction(value_ms) * units / Fraction(t0_ms))


def solve_layer_only(
    layer_importance: dict[int, float],
    layer_latency_ms: dict[int, float],
    budget: BudgetSpec,
    net: NetworkDescriptor,
) -> MergePlan:
    """Keep the most valuable layers under the budget, no merging.

    Irreducible layers are always kept. The activation set retains the
    original activation positions of kept layers; everything else in the
    plan document is bookkeeping derived from the kept set.
    """
    L = net.layer_count
    for l in range(1, L + 1):
        if l not in layer_importance or l not in layer_latency_ms:
            raise TableError(f"layer-only tables missing layer {l}")
    costs = {
        l: _floor_units(layer_latency_ms[l], budget.budget_ms, budget.units)
        for l in range(1, L + 1)
    }
    forced_layers = {
        l for l in range(1, L + 1)
        if l in net.irreducible or not net.layer(l).identity_substitutable()
    }
    usable = budget.usable_units
    forced_cost = sum(costs[l] for l in forced_layers)
    if forced_cost > usable:
        raise InfeasibleBudgetError(
            f"irreducible layers alone need {forced_cost} units, budget allows {usable}",
            forced_cost,
        )

    order = list(range(1, L + 1))
    n = len(order)
    value = np.full((n + 1, usable + 1), -np.inf)
    value[0, :] = 0.0
    for idx, l in enumerate(order, start=1):
        v, c = layer_importance[l], costs[l]
        prev = value[idx - 1]
        take = np.full(usable + 1, -np.inf)
        if c <= usable:
            take[c:] = prev[: usable + 1 - c] + v
        if l in forced_layers:
            value[idx] = take
        else:
            value[idx] = np.maximum(prev, take)

    if not np.isfinite(value[n, usable]):
        raise InfeasibleBudgetError("no feasible layer subset", None)

    kept: list[int] = []
    t = usable
    for idx in range(n, 0, -1):
        l = order[idx - 1]
        # ties prefer skipping, matching the value-table construction
        if l in forced_layers or value[idx, t] != value[idx - 1, t]:
            kept.append(l)
            t -= costs[l]
    kept.reverse()

    kept_set = set(kept)
    objective = 0.0
    for l in kept:
        objective += layer_importance[l]
    latency_units = sum(costs[l] for l in kept)

    kept_acts = tuple(
        l for l in kept if l <= L - 1 and net.layer(l).has_activation_after
    )
    boundaries = [0, *kept_acts, L]
    segments = []
    for a, b in zip(boundaries[:-1], boundaries[1:]):
        members = [l for l in range(a + 1, b + 1) if l in kept_set]
        k = 1 + sum(net.layer(l).kernel_size - 1 for l in members)
        dw = all(net.layer(l).is_depthwise for l in members) if members else True
        segments.append(Segment(a, b, k, dw))

    return MergePlan(
        kept_activations=kept_acts,
        kept_convs=tuple(kept),
        segments=tuple(segments),
        objective=objective,
        latency_units=latency_units,
        budget_units=budget.units,
        mode=LAYER_ONLY,
    )


# ---------------------------------------------------------------------------
# plan validation

@dataclass(frozen=True)
class PlanReport:
    passed: bool
    violations: tuple[str, ...]


def validate_plan(
    plan: MergePlan,
    tables: CostTables | None,
    budget: BudgetSpec,
    net: NetworkDescriptor,
    layer_tables: tuple[dict[int, float], dict[int, float]] | None = None,
) -> PlanReport:
    """Re-derive every plan field and report violations instead of raising.

    Merge-mode plans are checked against the cost tables (importance sum,
    discretized latency, keep-set maximality, barriers, spans). Layer-only
    plans are structural: barrier and span rules restrict merging, not
    removal, so they are not applied; per-layer tables, when provided, are
    used to recompute the objective and latency.
    """
    v: list[str] = []
    L = net.layer_count

    boundaries = [0, *plan.kept_activations, L]
    if sorted(plan.kept_activations) != list(plan.kept_activations):
        v.append("kept_activations not sorted")
    if any(not 1 <= a <= L - 1 for a in plan.kept_activations):
        v.append("kept_activations outside 1..L-1")
    seg_bounds = [(s.start, s.end) for s in plan.segments]
    if seg_bounds != list(zip(boundaries[:-1], boundaries[1:])):
        v.append("segments do not partition (0, L] at the kept activations")

    kept = set(plan.kept_convs)
    missing_r = sorted(net.irreducible - kept)
    if missing_r:
        v.append(f"irreducible layer {missing_r[0]} missing from kept_convs")
    for l in sorted(set(range(1, L + 1)) - kept):
        if not net.layer(l).identity_substitutable():
            v.append(f"excluded layer {l} is not identity-substitutable")

    for s in plan.segments:
        members = [l for l in range(s.start + 1, s.end + 1) if l in kept]
        k = 1 + sum(net.layer(l).kernel_size - 1 for l in members)
        if k != s.kernel_size:
            v.append(
                f"segment ({s.start}, {s.end}] kernel size {s.kernel_size} "
                f"!= {k} derived from kept convs"
            )
        dw = all(net.layer(l).is_depthwise for l in members) if members else True
        if dw != s.depthwise:
            v.append(f"segment ({s.start}, {s.end}] depthwise flag mismatch")

    if plan.mode == LAYER_MERGE:
        for s in plan.segments:
            if not net.segment_allowed(s.start, s.end):
                bars = sorted(b for b in net.barriers if s.start < b < s.end)
                v.append(f"segment ({s.start}, {s.end}] spans barrier {bars[0]}")
            elif not net.segment_within_spans(s.start, s.end):
                v.append(f"segment ({s.start}, {s.end}] straddles a skip-addition span")

        if tables is not None and not v:
            int_latency, _ = discretize(tables.latency, budget.budget_ms, budget.units)
            objective = 0.0
            latency_units = 0
            for s in plan.segments:
                key = (s.start, s.end, s.kernel_size, s.depthwise)
                if key not in tables.importance:
                    v.append(f"no table entry for segment key {key}")
                    continue
                objective += tables.importance[key]
                latency_units += int_latency[key]
                best = solve_keep_set(s.start, s.end, s.kernel_size, net, depthwise=s.depthwise)
                if best.keep != {l for l in range(s.start + 1, s.end + 1) if l in kept}:
                    v.append(
                        f"kept convs in ({s.start}, {s.end}] are not the maximal-l1 keep set"
                    )
            if not v:
                if objective != plan.objective:
                    v.append(f"objective {plan.objective} != recomputed {objective}")
                if latency_units != plan.latency_units:
                    v.append(
                        f"latency_units {plan.latency_units} != recomputed {latency_units}"
                    )
    elif layer_tables is not None:
        imp, lat_ms = layer_tables
        objective = 0.0
        for l in plan.kept_convs:
            objective += imp[l]
        latency_units = sum(
            _floor_units(lat_ms[l], budget.budget_ms, budget.units)
            for l in plan.kept_convs
        )
        if objective != plan.objective:
            v.append(f"objective {plan.objective} != recomputed {objective}")
        if latency_units != plan.latency_units:
            v.append(f"latency_units {plan.latency_units} != recomputed {latency_units}")

    if plan.budget_units != budget.units:
        v.append(f"plan budget_units {plan.budget_units} != budget {budget.units}")
    if plan.latency_units > budget.usable_units:
        v.append(
            f"latency {plan.latency_units} units exceeds usable budget "
            f"{budget.usable_units} ({budget.sense})"
        )

    return PlanReport(passed=not v, violations=tuple(v))
