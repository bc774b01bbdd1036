import json
from pathlib import Path

import numpy as np
import pytest

from depthforge import (
    BatchNormParams,
    KernelTensor,
    LayerDescriptor,
    NetworkDescriptor,
    RawPerfMeasurement,
)
from depthforge.arch import DEPTHWISE_CONV, STANDARD_CONV
from depthforge.serialize import save_batchnorm, save_kernel
from depthforge.tables import iter_table_keys

DATA_DIR = Path(__file__).parent / "data"
WEIGHT_SEED = 2024


def out_spatial(h: int, k: int, s: int) -> int:
    return (h + 2 * ((k - 1) // 2) - k) // s + 1


def make_layer(
    index: int,
    k: int = 3,
    stride: int = 1,
    in_c: int = 8,
    out_c: int | None = None,
    spatial: int = 8,
    depthwise: bool = False,
    l1: float | None = 1.0,
    act: bool = True,
) -> LayerDescriptor:
    out_c = in_c if out_c is None else out_c
    return LayerDescriptor(
        index=index,
        kind=DEPTHWISE_CONV if depthwise else STANDARD_CONV,
        kernel_size=k,
        stride=stride,
        in_channels=in_c,
        out_channels=out_c,
        groups=in_c if depthwise else 1,
        in_shape=(in_c, spatial, spatial),
        out_shape=(out_c, out_spatial(spatial, k, stride), out_spatial(spatial, k, stride)),
        l1_norm=l1,
        has_activation_after=act,
    )


def make_chain(specs, **net_kwargs) -> NetworkDescriptor:
    """specs: list of dicts accepted by make_layer (index/act filled in).

    Feature-map sizes are threaded through so consecutive layers line up.
    """
    layers = []
    in_c, spatial = None, None
    for pos, spec in enumerate(specs, start=1):
        spec = dict(spec)
        if in_c is not None:
            spec.setdefault("in_c", in_c)
            spec.setdefault("spatial", spatial)
        spec.setdefault("act", pos < len(specs))
        layer = make_layer(pos, **spec)
        layers.append(layer)
        in_c, spatial = layer.out_channels, layer.out_shape[1]
    return NetworkDescriptor.from_layers(layers, **net_kwargs)


def bundled_layers():
    spec = [
        # (kind, k, in_c, out_c, act)
        (STANDARD_CONV, 3, 8, 8, True),
        (DEPTHWISE_CONV, 3, 8, 8, True),
        (STANDARD_CONV, 1, 8, 16, True),
        (STANDARD_CONV, 3, 16, 16, True),
        (STANDARD_CONV, 3, 16, 16, True),
        (STANDARD_CONV, 1, 16, 16, False),
    ]
    rng = np.random.default_rng(WEIGHT_SEED)
    layers, kernels = [], {}
    for idx, (kind, k, in_c, out_c, act) in enumerate(spec, start=1):
        groups = in_c if kind == DEPTHWISE_CONV else 1
        weights = rng.standard_normal((out_c, in_c // groups, k, k))
        bias = rng.standard_normal(out_c)
        kernels[idx] = KernelTensor(weights, bias, stride=1, groups=groups)
        layers.append(
            LayerDescriptor(
                index=idx,
                kind=kind,
                kernel_size=k,
                stride=1,
                in_channels=in_c,
                out_channels=out_c,
                groups=groups,
                in_shape=(in_c, 8, 8),
                out_shape=(out_c, 8, 8),
                l1_norm=float(np.abs(weights).sum()),
                has_activation_after=act,
            )
        )
    bn = BatchNormParams(
        gamma=rng.uniform(0.5, 1.5, 16),
        beta=rng.standard_normal(16),
        running_mean=rng.standard_normal(16),
        running_var=rng.uniform(0.2, 2.0, 16),
        epsilon=1e-5,
    )
    return layers, kernels, {4: bn}


def bundled_network() -> NetworkDescriptor:
    layers, _, _ = bundled_layers()
    return NetworkDescriptor.from_layers(
        layers, skip_add_spans=[(3, 5)], name="bundled-6"
    )


def bundled_importance_rows(net: NetworkDescriptor) -> list[RawPerfMeasurement]:
    rows = []
    for (i, j, k, dw) in iter_table_keys(net):
        delta = -0.05 * (j - i) + 0.011 * k + (0.004 if dw else 0.0)
        rows.append(
            RawPerfMeasurement(
                i=i, j=j, k=k, depthwise=dw,
                perf_pruned=0.8 + delta, perf_original=0.8,
            )
        )
    return rows


@pytest.fixture(scope="session")
def bundled():
    layers, kernels, bns = bundled_layers()
    net = bundled_network()
    return net, kernels, bns


@pytest.fixture()
def weights_dir(tmp_path, bundled):
    net, kernels, bns = bundled
    wdir = tmp_path / "weights"
    wdir.mkdir()
    for idx, kernel in kernels.items():
        save_kernel(kernel, wdir / f"layer_{idx:03d}")
    for idx, bn in bns.items():
        save_batchnorm(bn, wdir / f"bn_{idx:03d}.json")
    return wdir


@pytest.fixture(scope="session")
def data_dir():
    return DATA_DIR
