"""Cost tables: feasible merged kernel sizes, latency, importance, budgets.

Table keys are ``(i, j, k, depthwise)``: segment ``(i, j]`` merged down to a
single convolution of kernel size ``k``, with a flag telling whether that
merged layer is depthwise (all kept members depthwise) or standard. Latency
is in milliseconds; importance is the exp-normalized performance delta of
the replaced network against the original.
"""

from __future__ import annotations

import math
import os
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .arch import NetworkDescriptor
from .errors import TableError

TableKey = tuple[int, int, int, bool]

THREADS_ENV = "DEPTHFORGE_THREADS"


# ---------------------------------------------------------------------------
# feasible merged kernel sizes

def _keep_choices(net: NetworkDescriptor, i: int, j: int):
    """Per-layer (forced, increment, is_standard) for layers in (i, j]."""
    choices = []
    for l in range(i + 1, j + 1):
        layer = net.layer(l)
        forced = l in net.irreducible or not layer.identity_substitutable()
        choices.append((l, forced, layer.kernel_size - 1, not layer.is_depthwise))
    return choices


def _reachable_states(net: NetworkDescriptor, i: int, j: int) -> dict[tuple[int, bool], None]:
    """All (kernel-increment sum, any-standard-kept) states over keep sets."""
    states: set[tuple[int, bool]] = {(0, False)}
    for _, forced, inc, is_std in _keep_choices(net, i, j):
        nxt: set[tuple[int, bool]] = set()
        for total, has_std in states:
            if not forced:
                nxt.add((total, has_std))
            nxt.add((total + inc, has_std or is_std))
        states = nxt
    return {s: None for s in sorted(states)}


def enumerate_kernel_sizes(i: int, j: int, net: NetworkDescriptor) -> tuple[int, ...]:
    """Sorted feasible merged kernel sizes for segment ``(i, j]``.

    A size is feasible when some keep set containing every irreducible layer
    of the segment realizes it, with all excluded layers identity-
    substitutable. Computed by subset-sum over kernel increments.
    """
    if not net.segment_allowed(i, j):
        raise TableError(f"segment ({i}, {j}] spans a barrier")
    sums = {total for total, _ in _reachable_states(net, i, j)}
    return tuple(sorted(1 + total for total in sums))


def enumerate_kernel_keys(
    i: int, j: int, net: NetworkDescriptor
) -> tuple[tuple[int, bool], ...]:
    """Sorted feasible (kernel size, depthwise flag) pairs for ``(i, j]``.

    The same size can be realizable both by an all-depthwise keep set and by
    one containing a standard layer; both variants get their own key.
    """
    if not net.segment_allowed(i, j):
        raise TableError(f"segment ({i}, {j}] spans a barrier")
    keys = {(1 + total, has_std) for total, has_std in _reachable_states(net, i, j)}
    return tuple(sorted((k, not has_std) for k, has_std in keys))


# ---------------------------------------------------------------------------
# latency providers

@dataclass(frozen=True)
class MergedLayerQuery:
    """Everything a latency model needs to know about one merged layer."""

    i: int
    j: int
    kernel_size: int
    depthwise: bool
    in_channels: int
    out_channels: int
    out_height: int
    out_width: int
    stride: int
    groups: int


def segment_query(
    net: NetworkDescriptor, i: int, j: int, k: int, depthwise: bool
) -> MergedLayerQuery:
    first, last = net.layer(i + 1), net.layer(j)
    stride = 1
    for l in range(i + 1, j + 1):
        stride *= net.layer(l).stride
    if depthwise:
        groups = last.out_channels
    elif i + 1 == j:
        groups = first.groups
    else:
        groups = 1
    return MergedLayerQuery(
        i=i,
        j=j,
        kernel_size=k,
        depthwise=depthwise,
        in_channels=first.in_channels,
        out_channels=last.out_channels,
        out_height=last.out_shape[1],
        out_width=last.out_shape[2],
        stride=stride,
        groups=groups,
    )


class LatencyProvider(ABC):
    """Source of per-merged-layer latency, in milliseconds."""

    @abstractmethod
    def latency_ms(self, query: MergedLayerQuery) -> float:
        ...


class AnalyticLatencyProvider(LatencyProvider):
    """Deterministic MAC-count model: latency = constant * MACs.

    Depthwise layers get a separate multiplier since their cost per MAC is
    dominated by memory traffic rather than arithmetic. The optional
    per-layer overhead models fixed dispatch cost; it is what makes merging
    two layers ever cheaper than running them back to back.
    """

    def __init__(
        self,
        device_constant_ns_per_mac: float,
        depthwise_multiplier: float = 1.0,
        per_layer_overhead_ms: float = 0.0,
    ):
        if device_constant_ns_per_mac <= 0 or depthwise_multiplier <= 0:
            raise TableError("analytic provider constants must be positive")
        if per_layer_overhead_ms < 0:
            raise TableError("per-layer overhead must be nonnegative")
        self.device_constant_ns_per_mac = device_constant_ns_per_mac
        self.depthwise_multiplier = depthwise_multiplier
        self.per_layer_overhead_ms = per_layer_overhead_ms

    @staticmethod
    def from_config(config: dict) -> "AnalyticLatencyProvider":
        if "device_constant_ns_per_mac" not in config:
            raise TableError("analytic config needs 'device_constant_ns_per_mac'")
        return AnalyticLatencyProvider(
            float(config["device_constant_ns_per_mac"]),
            float(config.get("depthwise_multiplier", 1.0)),
            float(config.get("per_layer_overhead_ms", 0.0)),
        )

    def latency_ms(self, query: MergedLayerQuery) -> float:
        macs = (
            query.out_height
            * query.out_width
            * query.out_channels
            * (query.in_channels // query.groups)
            * query.kernel_size ** 2
        )
        ms = macs * self.device_constant_ns_per_mac * 1e-6
        if query.depthwise:
            ms *= self.depthwise_multiplier
        return ms + self.per_layer_overhead_ms


class TableLatencyProvider(LatencyProvider):
    """Exact lookup from measured values keyed by (i, j, k, depthwise)."""

    def __init__(self, measurements: dict[TableKey, float]):
        self.measurements = dict(measurements)

    @staticmethod
    def from_csv(path: str | Path) -> "TableLatencyProvider":
        measurements: dict[TableKey, float] = {}
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != "i,j,k,depthwise,latency_ms":
                raise TableError(
                    f"{path}: expected header 'i,j,k,depthwise,latency_ms', got {header!r}"
                )
            for lineno, line in enumerate(fh, start=2):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 5:
                    raise TableError(f"{path}:{lineno}: expected 5 fields")
                if parts[4] == "":
                    raise TableError(
                        f"{path}:{lineno}: latency_ms not filled in for key "
                        f"({parts[0]}, {parts[1]}, {parts[2]}, {parts[3]})"
                    )
                key = (int(parts[0]), int(parts[1]), int(parts[2]), bool(int(parts[3])))
                if key in measurements:
                    raise TableError(f"{path}:{lineno}: duplicate key {key}")
                measurements[key] = float(parts[4])
        return TableLatencyProvider(measurements)

    def latency_ms(self, query: MergedLayerQuery) -> float:
        key = (query.i, query.j, query.kernel_size, query.depthwise)
        if key not in self.measurements:
            raise TableError(f"no measured latency for key {key}")
        return self.measurements[key]


# ---------------------------------------------------------------------------
# table construction

def _span_cutoff(net: NetworkDescriptor, i: int) -> int:
    """Largest j such that (i, j] stays inside/outside every skip-add span."""
    cutoff = net.layer_count
    for s, e in net.skip_add_spans:
        if i >= e:
            continue
        cutoff = min(cutoff, e if i >= s else s)
    return cutoff


def segment_keys_by_segment(
    net: NetworkDescriptor,
) -> dict[tuple[int, int], tuple[tuple[int, bool], ...]]:
    """(k, depthwise) keys for every admissible segment.

    Grows each start index incrementally so the subset-sum states are shared
    across end indices; equivalent to calling :func:`enumerate_kernel_keys`
    per admissible pair.
    """
    L = net.layer_count
    out: dict[tuple[int, int], tuple[tuple[int, bool], ...]] = {}
    for i in range(L):
        cutoff = _span_cutoff(net, i)
        states: set[tuple[int, bool]] = {(0, False)}
        for j in range(i + 1, cutoff + 1):
            if j - 1 > i and (j - 1) in net.barriers:
                break
            layer = net.layer(j)
            forced = j in net.irreducible or not layer.identity_substitutable()
            inc, is_std = layer.kernel_size - 1, not layer.is_depthwise
            nxt: set[tuple[int, bool]] = set()
            for total, has_std in states:
                if not forced:
                    nxt.add((total, has_std))
                nxt.add((total + inc, has_std or is_std))
            states = nxt
            out[(i, j)] = tuple(
                sorted((1 + total, not has_std) for total, has_std in states)
            )
    return out


def iter_table_keys(net: NetworkDescriptor):
    """All (i, j, k, depthwise) keys for admissible segments, sorted."""
    by_segment = segment_keys_by_segment(net)
    for (i, j) in sorted(by_segment):
        for k, dw in by_segment[(i, j)]:
            yield (i, j, k, dw)


def build_latency_table(
    net: NetworkDescriptor,
    provider: LatencyProvider,
    max_workers: int | None = None,
) -> dict[TableKey, float]:
    """One latency entry per admissible segment key.

    Queries are independent, so they fan out over a thread pool when
    ``max_workers`` (or the DEPTHFORGE_THREADS env var) allows; assembly
    order is fixed, so the result is deterministic either way.
    """
    keys = list(iter_table_keys(net))
    queries = [segment_query(net, i, j, k, dw) for (i, j, k, dw) in keys]
    if max_workers is None:
        max_workers = int(os.environ.get(THREADS_ENV, "1"))
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            values = list(pool.map(provider.latency_ms, queries))
    else:
        values = [provider.latency_ms(q) for q in queries]
    table = dict(zip(keys, values))
    for key, value in table.items():
        if not math.isfinite(value) or value < 0:
            raise TableError(f"latency for {key} must be finite and nonnegative")
    return table


@dataclass(frozen=True)
class RawPerfMeasurement:
    """One ingested performance measurement for a replaced network.

    ``perf_pruned`` is the task metric after briefly fine-tuning the network
    with segment ``(i, j]`` replaced by its merged layer; ``perf_original``
    is the metric of the pre-trained network.
    """

    i: int
    j: int
    k: int
    depthwise: bool
    perf_pruned: float
    perf_original: float

    @property
    def key(self) -> TableKey:
        return (self.i, self.j, self.k, self.depthwise)


def build_importance_table(raw: list[RawPerfMeasurement]) -> dict[TableKey, float]:
    """exp(perf_pruned - perf_original) per key; strictly positive."""
    table: dict[TableKey, float] = {}
    for m in raw:
        if not (math.isfinite(m.perf_pruned) and math.isfinite(m.perf_original)):
            raise TableError(f"non-finite performance values for key {m.key}")
        if m.key in table:
            raise TableError(f"duplicate importance measurement for key {m.key}")
        table[m.key] = math.exp(m.perf_pruned - m.perf_original)
    return table


@dataclass(frozen=True)
class CostTables:
    """Latency and importance maps plus the feasible-size index.

    ``feasible_sizes`` maps (i, j) to the sorted kernel sizes realizable on
    that segment. ``k0`` is the sum of kernel sizes over the whole network,
    which bounds both table size and planner work.
    """

    latency: dict[TableKey, float]
    importance: dict[TableKey, float]
    feasible_sizes: dict[tuple[int, int], tuple[int, ...]]
    k0: int
    layer_count: int

    @staticmethod
    def assemble(
        net: NetworkDescriptor,
        latency: dict[TableKey, float],
        importance: dict[TableKey, float],
    ) -> "CostTables":
        required = set(iter_table_keys(net))
        for name, table in (("latency", latency), ("importance", importance)):
            extra = set(table) - required
            if extra:
                raise TableError(f"{name} table has unexpected key {sorted(extra)[0]}")
            missing = required - set(table)
            if missing:
                raise TableError(f"{name} table missing key {sorted(missing)[0]}")
        for key, value in importance.items():
            if not (math.isfinite(value) and value > 0):
                raise TableError(f"importance for {key} must be positive, got {value}")
        for key, value in latency.items():
            if not (math.isfinite(value) and value >= 0):
                raise TableError(f"latency for {key} must be nonnegative, got {value}")

        feasible: dict[tuple[int, int], tuple[int, ...]] = {}
        for (i, j), keys in segment_keys_by_segment(net).items():
            sizes = tuple(sorted({k for k, _ in keys}))
            bound = 1 + sum(net.layer(l).kernel_size - 1 for l in range(i + 1, j + 1))
            if len(sizes) > bound:
                raise TableError(f"|K({i},{j})| = {len(sizes)} exceeds bound {bound}")
            feasible[(i, j)] = sizes
        k0 = sum(layer.kernel_size for layer in net.layers)
        return CostTables(
            latency=dict(sorted(latency.items())),
            importance=dict(sorted(importance.items())),
            feasible_sizes=feasible,
            k0=k0,
            layer_count=net.layer_count,
        )


# ---------------------------------------------------------------------------
# discretization and budgets

def _floor_units(value_ms: float, t0_ms: float, units: int) -> int:
    # Fraction keeps the floor exact for the given float operands.
    return int(Fraction(value_ms) * units / Fraction(t0_ms))


def discretize(
    latency: dict[TableKey, float], t0_ms: float, units: int
) -> tuple[dict[TableKey, int], int]:
    """Round latencies down onto an integer grid of ``units`` steps per budget.

    Entries above the budget are kept; they are simply unusable on their own.
    """
    if t0_ms <= 0:
        raise TableError("budget must be positive")
    if units < 1:
        raise TableError("discretization level must be >= 1")
    return (
        {key: _floor_units(ms, t0_ms, units) for key, ms in latency.items()},
        units,
    )


def default_discretization(t0_ms: float) -> int:
    """Default grid: one unit per tenth of a millisecond."""
    if t0_ms <= 0:
        raise TableError("budget must be positive")
    units = int(Fraction(t0_ms) * 10)
    return max(units, 1)


@dataclass(frozen=True)
class BudgetSpec:
    """Latency budget in milliseconds plus its discretization.

    ``sense`` decides the boundary cell: "strict" keeps the original
    sum-strictly-below-budget reading (integer sum <= units - 1), while
    "inclusive" admits plans whose discretized sum equals the budget.
    """

    budget_ms: float
    units: int
    sense: str = "strict"

    def __post_init__(self):
        if self.budget_ms <= 0:
            raise TableError("budget_ms must be positive")
        if self.units < 1:
            raise TableError("units must be >= 1")
        if self.sense not in ("strict", "inclusive"):
            raise TableError(f"unknown constraint sense {self.sense!r}")

    @property
    def usable_units(self) -> int:
        return self.units - 1 if self.sense == "strict" else self.units

    @staticmethod
    def from_ms(budget_ms: float, units: int | None = None, sense: str = "strict") -> "BudgetSpec":
        if units is None:
            units = default_discretization(budget_ms)
        return BudgetSpec(budget_ms=budget_ms, units=units, sense=sense)
