"""Convolution kernel tensors and their composition algebra.

Two stacked convolutions (no padding or nonlinearity in between) are exactly
one convolution whose kernel is the composition of the pair. This module
builds those composed kernels, handles depthwise/standard promotion, folds
batch normalization into kernels, and provides a direct (naive) evaluator
used as the equivalence oracle in tests.

Convention: cross-correlation, no kernel flip, matching mainstream framework
semantics. All arithmetic is double precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MergeError


@dataclass(frozen=True)
class KernelTensor:
    """A convolution parameter: weights (out, in/groups, k, k) plus bias.

    ``groups == in_channels == out_channels`` marks a depthwise kernel, whose
    weight array has shape (C, 1, k, k).
    """

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    groups: int = 1

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        if w.ndim != 4:
            raise MergeError(f"weights must be 4-D, got shape {w.shape}")
        if w.shape[2] != w.shape[3]:
            raise MergeError(f"only square kernels supported, got {w.shape[2:]}")
        if w.shape[2] < 1:
            raise MergeError("kernel size must be >= 1")
        if self.stride < 1 or self.groups < 1:
            raise MergeError("stride and groups must be >= 1")
        if w.shape[0] % self.groups:
            raise MergeError(
                f"groups={self.groups} must divide out_channels={w.shape[0]}"
            )
        b = np.ascontiguousarray(np.asarray(self.bias, dtype=np.float64))
        if b.shape != (w.shape[0],):
            raise MergeError(f"bias shape {b.shape} != ({w.shape[0]},)")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1] * self.groups

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[2]

    @property
    def is_depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels


def identity_kernel(channels: int) -> KernelTensor:
    """The 1x1 depthwise kernel with unit weights: applies as a no-op."""
    if channels < 1:
        raise MergeError("identity kernel needs at least one channel")
    return KernelTensor(
        weights=np.ones((channels, 1, 1, 1)),
        bias=np.zeros(channels),
        stride=1,
        groups=channels,
    )


def merged_kernel_size(sizes: list[int] | tuple[int, ...]) -> int:
    """Kernel size of a merged stack of stride-1 layers: 1 + sum(k - 1)."""
    if not sizes:
        raise MergeError("merged_kernel_size needs at least one kernel size")
    return 1 + sum(int(k) - 1 for k in sizes)


def merged_kernel_size_strided(k1: int, s1: int, k2: int) -> int:
    """Kernel size of (second of size k2) composed after (k1, stride s1)."""
    return (k2 - 1) * s1 + k1


def _to_standard(kernel: KernelTensor) -> KernelTensor:
    """Materialize a depthwise kernel as an equivalent groups=1 kernel."""
    if kernel.groups == 1:
        return kernel
    if not kernel.is_depthwise:
        raise MergeError("only depthwise kernels can be promoted to standard")
    c, _, k, _ = kernel.weights.shape
    dense = np.zeros((c, c, k, k))
    dense[np.arange(c), np.arange(c)] = kernel.weights[:, 0]
    return KernelTensor(dense, kernel.bias, stride=kernel.stride, groups=1)


def merge_pair(first: KernelTensor, second: KernelTensor) -> KernelTensor:
    """Compose two kernels into one equivalent kernel.

    Equivalent means: evaluating the result on x equals evaluating ``first``
    then ``second`` sequentially (valid padding in between). The composed
    weights place a copy of ``first`` at each tap of ``second``, offset by
    the first stride; this is the batched form of evaluating ``first`` on
    shifted unit impulses.
    """
    if second.in_channels != first.out_channels:
        raise MergeError(
            f"channel mismatch: second expects {second.in_channels} inputs, "
            f"first produces {first.out_channels}"
        )
    both_depthwise = first.is_depthwise and second.is_depthwise
    if not both_depthwise:
        if (first.groups > 1 and not first.is_depthwise) or (
            second.groups > 1 and not second.is_depthwise
        ):
            raise MergeError("grouped non-depthwise kernels cannot be composed")
        first = _to_standard(first)
        second = _to_standard(second)

    k1, s1 = first.kernel_size, first.stride
    k2 = second.kernel_size
    k = merged_kernel_size_strided(k1, s1, k2)
    w1, w2 = first.weights, second.weights

    if both_depthwise:
        c = first.out_channels
        merged = np.zeros((c, 1, k, k))
        for e in range(k2):
            for f in range(k2):
                merged[:, 0, e * s1 : e * s1 + k1, f * s1 : f * s1 + k1] += (
                    w2[:, 0, e, f][:, None, None] * w1[:, 0]
                )
        bias = second.bias + w2[:, 0].sum(axis=(1, 2)) * first.bias
        groups = c
    else:
        merged = np.zeros((second.out_channels, first.in_channels, k, k))
        for e in range(k2):
            for f in range(k2):
                merged[:, :, e * s1 : e * s1 + k1, f * s1 : f * s1 + k1] += (
                    np.einsum("dc,cipq->dipq", w2[:, :, e, f], w1)
                )
        bias = second.bias + w2.sum(axis=(2, 3)) @ first.bias
        groups = 1

    return KernelTensor(merged, bias, stride=first.stride * second.stride, groups=groups)


def merge_sequence(
    kernels: list[KernelTensor] | tuple[KernelTensor, ...],
    keep_mask: list[bool] | tuple[bool, ...],
) -> KernelTensor:
    """Fold a kernel stack left-to-right, substituting identities for
    masked-out positions.

    Masked-out kernels must be channel-preserving with stride 1 (otherwise
    an identity cannot stand in for them).
    """
    if not kernels:
        raise MergeError("merge_sequence needs at least one kernel")
    if len(kernels) != len(keep_mask):
        raise MergeError("keep_mask length must match kernel list length")

    effective = []
    for pos, (kernel, keep) in enumerate(zip(kernels, keep_mask)):
        if keep:
            effective.append(kernel)
            continue
        if kernel.in_channels != kernel.out_channels or kernel.stride != 1:
            raise MergeError(
                f"kernel at position {pos} (in={kernel.in_channels}, "
                f"out={kernel.out_channels}, stride={kernel.stride}) cannot "
                "be replaced by an identity"
            )
        effective.append(identity_kernel(kernel.in_channels))

    merged = effective[0]
    for kernel in effective[1:]:
        merged = merge_pair(merged, kernel)
    return merged


def conv_reference(
    x: np.ndarray, kernel: KernelTensor, padding: int = 0
) -> np.ndarray:
    """Direct cross-correlation of a (C, H, W) input with a kernel.

    Used as the ground-truth evaluator for all equivalence checks; double
    precision accumulation throughout.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise MergeError(f"input must be (C, H, W), got shape {x.shape}")
    if x.shape[0] != kernel.in_channels:
        raise MergeError(
            f"input channels {x.shape[0]} != kernel in_channels {kernel.in_channels}"
        )
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    c_in, h, w = x.shape
    k, s, g = kernel.kernel_size, kernel.stride, kernel.groups
    if h < k or w < k:
        raise MergeError(f"padded input {h}x{w} smaller than kernel {k}")
    h_out = (h - k) // s + 1
    w_out = (w - k) // s + 1
    c_out = kernel.out_channels
    in_per_g = c_in // g
    out_per_g = c_out // g

    out = np.zeros((c_out, h_out, w_out))
    for gi in range(g):
        xg = x[gi * in_per_g : (gi + 1) * in_per_g]
        wg = kernel.weights[gi * out_per_g : (gi + 1) * out_per_g]
        og = out[gi * out_per_g : (gi + 1) * out_per_g]
        for di in range(k):
            for dj in range(k):
                patch = xg[:, di : di + s * (h_out - 1) + 1 : s,
                           dj : dj + s * (w_out - 1) + 1 : s]
                og += np.einsum("oc,chw->ohw", wg[:, :, di, dj], patch)
    out += kernel.bias[:, None, None]
    return out


@dataclass(frozen=True)
class BatchNormParams:
    """Per-channel affine normalization statistics."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        for name in ("gamma", "beta", "running_mean", "running_var"):
            v = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float64))
            if v.ndim != 1:
                raise MergeError(f"{name} must be a vector")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        n = self.gamma.shape[0]
        if any(getattr(self, f).shape[0] != n
               for f in ("beta", "running_mean", "running_var")):
            raise MergeError("batch-norm vectors must share one length")
        if np.any(self.running_var < 0):
            raise MergeError("running_var must be nonnegative")
        if not self.epsilon > 0:
            raise MergeError("epsilon must be positive")


def fold_batchnorm(kernel: KernelTensor, bn: BatchNormParams) -> KernelTensor:
    """Absorb a trailing batch-norm into the kernel.

    The returned kernel satisfies conv'(x) == bn(conv(x)) exactly.
    """
    if bn.gamma.shape[0] != kernel.out_channels:
        raise MergeError(
            f"batch-norm length {bn.gamma.shape[0]} != out_channels "
            f"{kernel.out_channels}"
        )
    scale = bn.gamma / np.sqrt(bn.running_var + bn.epsilon)
    weights = kernel.weights * scale[:, None, None, None]
    bias = (kernel.bias - bn.running_mean) * scale + bn.beta
    return KernelTensor(weights, bias, stride=kernel.stride, groups=kernel.groups)
