"""Cost tables and keep-set selection.

Shows how a chain descriptor turns into the planner's lookup tables: which
segments may merge at all, which merged kernel sizes each segment can reach,
which layers realize a target size, and how latencies land on the integer
budget grid.
"""

import numpy as np

from depthforge import (
    AnalyticLatencyProvider,
    CostTables,
    RawPerfMeasurement,
    build_importance_table,
    build_latency_table,
    discretize,
    enumerate_kernel_sizes,
    solve_keep_set,
)
from depthforge.arch import LayerDescriptor, NetworkDescriptor
from depthforge.tables import iter_table_keys


def layer(idx, k, in_c, out_c, stride=1, depthwise=False, act=True, h=16):
    pad = (k - 1) // 2
    out_h = (h + 2 * pad - k) // stride + 1
    return LayerDescriptor(
        index=idx,
        kind="depthwise-conv" if depthwise else "standard-conv",
        kernel_size=k,
        stride=stride,
        in_channels=in_c,
        out_channels=out_c,
        groups=in_c if depthwise else 1,
        in_shape=(in_c, h, h),
        out_shape=(out_c, out_h, out_h),
        l1_norm=float(np.random.default_rng(idx).uniform(1, 9)),
        has_activation_after=act,
    )


print("== a five-layer chain with one strided layer ==")
net = NetworkDescriptor.from_layers(
    [
        layer(1, 3, 8, 8),
        layer(2, 3, 8, 8, depthwise=True),
        layer(3, 1, 8, 16),              # channel change: irreducible
        layer(4, 3, 16, 16, stride=2),   # strided: irreducible
        layer(5, 1, 16, 16, act=False, h=8),
    ],
    name="demo-chain",
)
print("irreducible layers:", sorted(net.irreducible))
print("barriers:", sorted(net.barriers))
print("(the stride rule walks through 1x1 layers; a 3x3 follower would add one)")
print()

print("== feasible merged kernel sizes per segment ==")
for i in range(net.layer_count):
    for j in range(i + 1, net.layer_count + 1):
        if net.segment_admissible(i, j):
            print(f"  segment ({i}, {j}]: sizes {enumerate_kernel_sizes(i, j, net)}")
print()

print("== keep sets: who realizes size 3 on (0, 3] ==")
for k in enumerate_kernel_sizes(0, 3, net):
    sol = solve_keep_set(0, 3, k, net)
    print(f"  k={k}: keep {sorted(sol.keep)}, total l1 {sol.total_l1:.3f}, "
          f"depthwise={sol.depthwise_result}")
print("The selector maximizes the kept layers' l1 norm; irreducible layers")
print("are always in, and ties go to the lexicographically smallest set.")
print()

print("== latency and importance tables ==")
provider = AnalyticLatencyProvider(
    device_constant_ns_per_mac=100.0, depthwise_multiplier=4.0,
    per_layer_overhead_ms=0.05,
)
latency = build_latency_table(net, provider)
rows = [
    RawPerfMeasurement(i, j, k, dw, 0.8 - 0.03 * (j - i) + 0.005 * k, 0.8)
    for (i, j, k, dw) in iter_table_keys(net)
]
tables = CostTables.assemble(net, latency, build_importance_table(rows))
print(f"{len(tables.latency)} table keys; kernel-size sum K0 = {tables.k0}")
for key in list(sorted(tables.latency))[:6]:
    print(f"  {key}: {tables.latency[key]:.4f} ms, importance {tables.importance[key]:.4f}")
print("  ...")
print()

print("== discretization ==")
budget_ms = 0.6 * sum(
    tables.latency[(l.index - 1, l.index, l.kernel_size, l.is_depthwise)]
    for l in net.layers
)
grid, units = discretize(tables.latency, budget_ms, 200)
print(f"budget {budget_ms:.4f} ms over {units} grid units")
sample = sorted(tables.latency)[0]
print(f"  {sample}: {tables.latency[sample]:.4f} ms -> {grid[sample]} units")
print("Rounding is downward, so a plan that fits on the grid never overshoots")
print("the real budget by more than one unit per segment.")
