"""Seeded random instance generation for tests, demos, and verification."""

from __future__ import annotations

import numpy as np

from .arch import DEPTHWISE_CONV, STANDARD_CONV, LayerDescriptor, NetworkDescriptor
from .kernels import KernelTensor
from .tables import CostTables, TableKey, iter_table_keys


def random_network(
    rng: np.random.Generator,
    layer_count: int,
    kernel_choices: tuple[int, ...] = (1, 3, 5),
    channel_choices: tuple[int, ...] = (8, 16),
    spatial: int = 8,
    reducible_prob: float = 0.75,
    depthwise_prob: float = 0.2,
    barrier_prob: float = 0.15,
    span_count: int = 0,
) -> NetworkDescriptor:
    """A random stride-1 chain with random irreducible layers and barriers.

    Layers become irreducible by changing their channel count; depthwise
    layers necessarily preserve channels.
    """
    layers = []
    channels = int(rng.choice(channel_choices))
    for l in range(1, layer_count + 1):
        kernel = int(rng.choice(kernel_choices))
        depthwise = kernel >= 1 and rng.random() < depthwise_prob
        if depthwise:
            out_channels = channels
        elif rng.random() < reducible_prob:
            out_channels = channels
        else:
            other = [c for c in channel_choices if c != channels]
            out_channels = int(rng.choice(other)) if other else channels + 8
        layers.append(
            LayerDescriptor(
                index=l,
                kind=DEPTHWISE_CONV if depthwise else STANDARD_CONV,
                kernel_size=kernel,
                stride=1,
                in_channels=channels,
                out_channels=out_channels,
                groups=channels if depthwise else 1,
                in_shape=(channels, spatial, spatial),
                out_shape=(out_channels, spatial, spatial),
                l1_norm=float(np.round(rng.uniform(0.1, 10.0), 6)),
                has_activation_after=l < layer_count,
            )
        )
        channels = out_channels
    barriers = [b for b in range(1, layer_count) if rng.random() < barrier_prob]
    spans = []
    for _ in range(span_count):
        s = int(rng.integers(0, layer_count - 1))
        e = int(rng.integers(s + 2, layer_count + 1)) if s + 2 <= layer_count else s + 1
        spans.append((s, e))
    return NetworkDescriptor.from_layers(
        layers, barriers=barriers, skip_add_spans=spans, name="synthetic"
    )


def random_tables(
    rng: np.random.Generator,
    net: NetworkDescriptor,
    latency_range: tuple[float, float] = (0.05, 2.0),
    importance_range: tuple[float, float] = (0.2, 3.0),
) -> CostTables:
    latency: dict[TableKey, float] = {}
    importance: dict[TableKey, float] = {}
    for key in iter_table_keys(net):
        latency[key] = float(np.round(rng.uniform(*latency_range), 6))
        importance[key] = float(np.round(rng.uniform(*importance_range), 6))
    return CostTables.assemble(net, latency, importance)


def random_conv_stack(
    rng: np.random.Generator,
    depth: int,
    channels: int = 8,
    kernel_choices: tuple[int, ...] = (1, 3),
    stride2_prob: float = 0.0,
    depthwise: bool = False,
) -> list[KernelTensor]:
    """A channel-preserving random kernel stack.

    When a stride-2 layer appears, every later layer gets kernel size 1, so
    the stack stays mergeable under the additive size rule.
    """
    stack = []
    seen_stride = False
    for _ in range(depth):
        k = 1 if seen_stride else int(rng.choice(kernel_choices))
        stride = 2 if (not seen_stride and rng.random() < stride2_prob) else 1
        if stride > 1:
            seen_stride = True
        if depthwise:
            weights = rng.standard_normal((channels, 1, k, k))
            groups = channels
        else:
            weights = rng.standard_normal((channels, channels, k, k))
            groups = 1
        stack.append(
            KernelTensor(weights, rng.standard_normal(channels), stride=stride, groups=groups)
        )
    return stack
