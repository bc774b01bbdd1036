"""File formats: kernel blobs, plan documents, cost-table files.

Kernel tensors are stored as a flat little-endian float64 blob (C-order
weights) next to a JSON sidecar carrying the geometry and the bias. Plans
and tables are plain JSON/CSV; all writers are deterministic so identical
inputs produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DepthforgeError, TableError
from .kernels import BatchNormParams, KernelTensor
from .planner import MergePlan
from .tables import RawPerfMeasurement, TableKey


def dump_json(doc: dict | list, path: str | Path) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def save_kernel(kernel: KernelTensor, stem: str | Path) -> tuple[Path, Path]:
    """Write ``<stem>.bin`` (weights) and ``<stem>.json`` (geometry + bias)."""
    stem = Path(stem)
    blob = stem.with_suffix(".bin")
    blob.write_bytes(np.ascontiguousarray(kernel.weights, dtype="<f8").tobytes())
    sidecar = {
        "out_channels": kernel.out_channels,
        "in_channels": kernel.in_channels,
        "groups": kernel.groups,
        "k": kernel.kernel_size,
        "stride": kernel.stride,
        "bias": [float(b) for b in kernel.bias],
    }
    dump_json(sidecar, stem.with_suffix(".json"))
    return blob, stem.with_suffix(".json")


def load_kernel(stem: str | Path) -> KernelTensor:
    stem = Path(stem)
    with open(stem.with_suffix(".json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    out_c = int(meta["out_channels"])
    in_c = int(meta["in_channels"])
    groups = int(meta["groups"])
    k = int(meta["k"])
    raw = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
    expected = out_c * (in_c // groups) * k * k
    if raw.size != expected:
        raise DepthforgeError(
            f"{stem}.bin holds {raw.size} values, expected {expected}"
        )
    weights = raw.reshape(out_c, in_c // groups, k, k).copy()
    return KernelTensor(
        weights, np.asarray(meta["bias"], dtype=np.float64),
        stride=int(meta["stride"]), groups=groups,
    )


def load_batchnorm(path: str | Path) -> BatchNormParams:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return BatchNormParams(
        gamma=np.asarray(doc["gamma"], dtype=np.float64),
        beta=np.asarray(doc["beta"], dtype=np.float64),
        running_mean=np.asarray(doc["running_mean"], dtype=np.float64),
        running_var=np.asarray(doc["running_var"], dtype=np.float64),
        epsilon=float(doc.get("epsilon", 1e-5)),
    )


def save_batchnorm(bn: BatchNormParams, path: str | Path) -> None:
    dump_json(
        {
            "gamma": [float(v) for v in bn.gamma],
            "beta": [float(v) for v in bn.beta],
            "running_mean": [float(v) for v in bn.running_mean],
            "running_var": [float(v) for v in bn.running_var],
            "epsilon": bn.epsilon,
        },
        path,
    )


def write_plan(plan: MergePlan, path: str | Path) -> None:
    dump_json(plan.to_doc(), path)


def read_plan(path: str | Path) -> MergePlan:
    with open(path, "r", encoding="utf-8") as fh:
        return MergePlan.from_doc(json.load(fh))


def write_latency_csv(
    rows: dict[TableKey, float | None], path: str | Path
) -> None:
    """Rows with value None become a skeleton for offline measurement."""
    lines = ["i,j,k,depthwise,latency_ms"]
    for (i, j, k, dw) in sorted(rows):
        value = rows[(i, j, k, dw)]
        rendered = "" if value is None else repr(float(value))
        lines.append(f"{i},{j},{k},{int(dw)},{rendered}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_importance_json(path: str | Path) -> list[RawPerfMeasurement]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, list):
        raise TableError(f"{path}: importance document must be a JSON array")
    out = []
    for pos, row in enumerate(doc):
        try:
            out.append(
                RawPerfMeasurement(
                    i=int(row["i"]),
                    j=int(row["j"]),
                    k=int(row["k"]),
                    depthwise=bool(row["depthwise"]),
                    perf_pruned=float(row["perf_pruned"]),
                    perf_original=float(row["perf_original"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TableError(f"{path}: bad importance row {pos}: {exc}") from None
    return out


def write_importance_json(rows: list[RawPerfMeasurement], path: str | Path) -> None:
    dump_json(
        [
            {
                "i": m.i,
                "j": m.j,
                "k": m.k,
                "depthwise": m.depthwise,
                "perf_pruned": m.perf_pruned,
                "perf_original": m.perf_original,
            }
            for m in rows
        ],
        path,
    )


def read_layer_importance_json(path: str | Path) -> dict[int, float]:
    """Per-layer keep values for the layer-only planner: [{"l", "importance"}]."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, list):
        raise TableError(f"{path}: layer importance must be a JSON array")
    out: dict[int, float] = {}
    for pos, row in enumerate(doc):
        try:
            l = int(row["l"])
            if l in out:
                raise ValueError(f"duplicate layer {l}")
            out[l] = float(row["importance"])
        except (KeyError, TypeError, ValueError) as exc:
            raise TableError(f"{path}: bad layer importance row {pos}: {exc}") from None
    return out
