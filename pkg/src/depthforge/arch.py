"""Network architecture descriptors and merge admissibility queries.

A network is modeled as a chain of convolution layers, indexed 1..L. Between
consecutive layers sits an (optional) non-linear activation; position ``l``
refers to the boundary between layer ``l`` and layer ``l+1``. A contiguous
"segment" ``(i, j]`` is the run of layers ``i+1 .. j`` considered for fusion
into a single convolution.

Three structural facts constrain fusion:

* the irreducible set ``R`` — layers whose input and output feature-map
  shapes differ and which therefore can never be replaced by an identity;
* barriers — boundary positions that no segment may span (strided layers
  followed by wide kernels, concatenations, attention, up/down-sampling);
* skip-addition spans — residual connections ``(s, e]``: a segment must lie
  entirely inside the span, entirely outside it, or cover it exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DescriptorError

STANDARD_CONV = "standard-conv"
DEPTHWISE_CONV = "depthwise-conv"

Shape = tuple[int, int, int]


@dataclass(frozen=True)
class LayerDescriptor:
    """One convolution layer of the chain.

    ``in_shape``/``out_shape`` are (channels, height, width). ``l1_norm`` is
    the sum of absolute weight values and may be None until weights are
    attached. ``has_activation_after`` records whether the original network
    applies a non-identity activation right after this layer (always False
    for the last layer).
    """

    index: int
    kind: str
    kernel_size: int
    stride: int
    in_channels: int
    out_channels: int
    groups: int = 1
    in_shape: Shape | None = None
    out_shape: Shape | None = None
    l1_norm: float | None = None
    has_activation_after: bool = True

    @property
    def is_depthwise(self) -> bool:
        return self.kind == DEPTHWISE_CONV

    @property
    def shape_preserving(self) -> bool:
        if self.in_shape is None or self.out_shape is None:
            raise DescriptorError(f"layer {self.index}: shapes not provided")
        return self.in_shape == self.out_shape

    def identity_substitutable(self) -> bool:
        """True when this layer may be replaced by a 1x1 identity kernel."""
        return (
            self.stride == 1
            and self.in_channels == self.out_channels
            and self.in_shape is not None
            and self.in_shape == self.out_shape
        )

    def validate(self) -> None:
        lid = f"layer {self.index}"
        if self.index < 1:
            raise DescriptorError(f"{lid}: index must be >= 1")
        if self.kind not in (STANDARD_CONV, DEPTHWISE_CONV):
            raise DescriptorError(f"{lid}: unknown kind {self.kind!r}")
        if self.kernel_size < 1 or self.stride < 1:
            raise DescriptorError(f"{lid}: kernel_size and stride must be >= 1")
        if self.in_channels < 1 or self.out_channels < 1 or self.groups < 1:
            raise DescriptorError(f"{lid}: channel counts and groups must be >= 1")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise DescriptorError(
                f"{lid}: groups={self.groups} must divide in_channels="
                f"{self.in_channels} and out_channels={self.out_channels}"
            )
        depthwise_structure = (
            self.groups == self.in_channels == self.out_channels
        )
        if self.is_depthwise != depthwise_structure:
            raise DescriptorError(
                f"{lid}: kind {self.kind!r} inconsistent with groups="
                f"{self.groups}, in={self.in_channels}, out={self.out_channels}"
            )
        if self.l1_norm is not None and self.l1_norm < 0:
            raise DescriptorError(f"{lid}: l1_norm must be nonnegative")
        if (self.in_shape is None) != (self.out_shape is None):
            raise DescriptorError(f"{lid}: in_shape and out_shape must come together")
        if self.in_shape is not None:
            self._validate_shapes(lid)

    def _validate_shapes(self, lid: str) -> None:
        for name, shape in (("in_shape", self.in_shape), ("out_shape", self.out_shape)):
            if len(shape) != 3 or any(int(v) < 1 for v in shape):
                raise DescriptorError(f"{lid}: {name} must be three positive ints")
        if self.in_shape[0] != self.in_channels:
            raise DescriptorError(
                f"{lid}: in_shape channels {self.in_shape[0]} != in_channels"
            )
        if self.out_shape[0] != self.out_channels:
            raise DescriptorError(
                f"{lid}: out_shape channels {self.out_shape[0]} != out_channels"
            )
        # Spatial dims follow from the block-leading padding convention:
        # each layer is padded by (k-1)//2 on both sides.
        pad = (self.kernel_size - 1) // 2
        for axis in (1, 2):
            expected = (self.in_shape[axis] + 2 * pad - self.kernel_size) // self.stride + 1
            if self.out_shape[axis] != expected:
                raise DescriptorError(
                    f"{lid}: out_shape axis {axis} is {self.out_shape[axis]}, "
                    f"expected {expected} from size {self.in_shape[axis]}, "
                    f"kernel {self.kernel_size}, stride {self.stride}"
                )


def compute_irreducible(layers: Sequence[LayerDescriptor]) -> frozenset[int]:
    """Indices of layers whose input and output shapes differ."""
    for layer in layers:
        if layer.in_shape is None or layer.out_shape is None:
            raise DescriptorError(f"layer {layer.index}: shapes required")
    return frozenset(l.index for l in layers if l.in_shape != l.out_shape)


def derive_stride_barriers(layers: Sequence[LayerDescriptor]) -> set[int]:
    """Boundary positions forced by strided layers.

    A merged block containing a stride>1 layer keeps the additive kernel-size
    law only while every later layer in the block has kernel size 1. The
    barrier therefore sits just before the first kernel>1 layer reachable
    from a strided layer through a (possibly empty) run of kernel-1 layers.
    """
    barriers: set[int] = set()
    L = len(layers)
    for l0, layer in enumerate(layers, start=1):
        if layer.stride <= 1:
            continue
        b = l0
        while b <= L - 1:
            if layers[b].kernel_size > 1:  # layers[b] is layer b+1 (0-based list)
                barriers.add(b)
                break
            b += 1
    return barriers


def _derive_structural_barriers(layers: Sequence[LayerDescriptor]) -> set[int]:
    """Barriers implied by the chain itself.

    Covers the stride rule, feature-map discontinuities between consecutive
    layers (pooling / resampling happening off-chain), and grouped-but-not-
    depthwise layers, which the merge algebra only supports as singleton
    segments.
    """
    barriers = derive_stride_barriers(layers)
    L = len(layers)
    for l in range(1, L):
        prev, nxt = layers[l - 1], layers[l]
        if prev.out_shape is not None and nxt.in_shape is not None:
            if prev.out_shape != nxt.in_shape:
                barriers.add(l)
    for layer in layers:
        if 1 < layer.groups and not layer.is_depthwise:
            if layer.index - 1 >= 1:
                barriers.add(layer.index - 1)
            if layer.index <= L - 1:
                barriers.add(layer.index)
    return barriers


@dataclass(frozen=True)
class NetworkDescriptor:
    """Validated, immutable description of a convolution chain."""

    layers: tuple[LayerDescriptor, ...]
    irreducible: frozenset[int]
    barriers: frozenset[int]
    skip_add_spans: tuple[tuple[int, int], ...] = ()
    name: str = ""

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    def layer(self, l: int) -> LayerDescriptor:
        """Layer by 1-based index."""
        if not 1 <= l <= len(self.layers):
            raise DescriptorError(f"layer index {l} out of range 1..{len(self.layers)}")
        return self.layers[l - 1]

    def segment_allowed(self, i: int, j: int) -> bool:
        """True when no barrier lies strictly between ``i`` and ``j``.

        ``(i, j]`` then names a run of layers that may merge into one, as far
        as barriers are concerned.
        """
        if not 0 <= i < j <= len(self.layers):
            raise DescriptorError(f"invalid segment ({i}, {j}] for L={len(self.layers)}")
        return not any(i < b < j for b in self.barriers)

    def segment_within_spans(self, i: int, j: int) -> bool:
        """True when ``(i, j]`` is inside, outside, or exactly equal to every
        skip-addition span."""
        for s, e in self.skip_add_spans:
            if j <= s or i >= e:
                continue
            if s <= i and j <= e:
                continue
            return False
        return True

    def segment_admissible(self, i: int, j: int) -> bool:
        return self.segment_allowed(i, j) and self.segment_within_spans(i, j)

    @staticmethod
    def from_layers(
        layers: Iterable[LayerDescriptor],
        *,
        irreducible: Iterable[int] | None = None,
        barriers: Iterable[int] = (),
        skip_add_spans: Iterable[Sequence[int]] = (),
        name: str = "",
    ) -> "NetworkDescriptor":
        layers = tuple(layers)
        if not layers:
            raise DescriptorError("network must contain at least one layer")
        for layer in layers:
            layer.validate()
        indices = [l.index for l in layers]
        if indices != list(range(1, len(layers) + 1)):
            raise DescriptorError(
                f"layer indices must be exactly 1..{len(layers)} in order, got {indices}"
            )
        if layers[-1].has_activation_after:
            raise DescriptorError("last layer cannot have an activation after it")
        L = len(layers)

        computed_r = compute_irreducible(layers)
        if irreducible is not None:
            declared = frozenset(int(x) for x in irreducible)
            if declared != computed_r:
                raise DescriptorError(
                    f"declared irreducible set {sorted(declared)} disagrees with "
                    f"shapes, expected {sorted(computed_r)}"
                )

        barrier_set = set(int(b) for b in barriers)
        for b in barrier_set:
            if not 1 <= b <= L - 1:
                raise DescriptorError(f"barrier {b} outside 1..{L - 1}")
        barrier_set |= _derive_structural_barriers(layers)

        spans: list[tuple[int, int]] = []
        for span in skip_add_spans:
            s, e = (int(v) for v in span)
            if not 0 <= s < e <= L:
                raise DescriptorError(f"skip-add span ({s}, {e}] outside 0..{L}")
            spans.append((s, e))
        spans.sort()

        return NetworkDescriptor(
            layers=layers,
            irreducible=computed_r,
            barriers=frozenset(barrier_set),
            skip_add_spans=tuple(spans),
            name=name,
        )


def _parse_l1(value, lid: str) -> float | None:
    if value is None:
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        raise DescriptorError(f"{lid}: l1_norm {value!r} is not a number") from None


def parse_network(doc: dict) -> NetworkDescriptor:
    """Build a validated descriptor from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise DescriptorError("descriptor document must be a JSON object")
    if "layers" not in doc or not isinstance(doc["layers"], list) or not doc["layers"]:
        raise DescriptorError("descriptor must contain a nonempty 'layers' array")

    required = (
        "index", "kind", "kernel_size", "stride",
        "in_channels", "out_channels", "groups",
        "in_shape", "out_shape", "has_activation_after",
    )
    layers = []
    for pos, entry in enumerate(doc["layers"]):
        if not isinstance(entry, dict):
            raise DescriptorError(f"layers[{pos}] must be an object")
        missing = [key for key in required if key not in entry]
        if missing:
            raise DescriptorError(f"layers[{pos}] missing fields {missing}")
        lid = f"layers[{pos}]"
        try:
            layers.append(
                LayerDescriptor(
                    index=int(entry["index"]),
                    kind=str(entry["kind"]),
                    kernel_size=int(entry["kernel_size"]),
                    stride=int(entry["stride"]),
                    in_channels=int(entry["in_channels"]),
                    out_channels=int(entry["out_channels"]),
                    groups=int(entry["groups"]),
                    in_shape=tuple(int(v) for v in entry["in_shape"]),
                    out_shape=tuple(int(v) for v in entry["out_shape"]),
                    l1_norm=_parse_l1(entry.get("l1_norm"), lid),
                    has_activation_after=bool(entry["has_activation_after"]),
                )
            )
        except (TypeError, ValueError) as exc:
            raise DescriptorError(f"{lid}: {exc}") from None

    return NetworkDescriptor.from_layers(
        layers,
        irreducible=doc.get("irreducible"),
        barriers=doc.get("barriers", ()),
        skip_add_spans=doc.get("skip_add_spans", ()),
        name=str(doc.get("name", "")),
    )


def network_to_doc(net: NetworkDescriptor) -> dict:
    """Inverse of :func:`parse_network` (modulo derived barriers)."""
    return {
        "name": net.name,
        "layers": [
            {
                "index": l.index,
                "kind": l.kind,
                "kernel_size": l.kernel_size,
                "stride": l.stride,
                "in_channels": l.in_channels,
                "out_channels": l.out_channels,
                "groups": l.groups,
                "in_shape": list(l.in_shape) if l.in_shape else None,
                "out_shape": list(l.out_shape) if l.out_shape else None,
                "l1_norm": l.l1_norm,
                "has_activation_after": l.has_activation_after,
            }
            for l in net.layers
        ],
        "irreducible": sorted(net.irreducible),
        "barriers": sorted(net.barriers),
        "skip_add_spans": [list(span) for span in net.skip_add_spans],
    }


def load_network(path: str | Path) -> NetworkDescriptor:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_network(json.load(fh))
