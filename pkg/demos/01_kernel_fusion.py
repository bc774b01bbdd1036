"""Kernel fusion walk-through.

Two stacked convolutions with nothing nonlinear in between are exactly one
convolution. This script builds merged kernels, shows how their size grows,
and checks the merged layer against plain sequential evaluation.
"""

import numpy as np

from depthforge import (
    BatchNormParams,
    KernelTensor,
    conv_reference,
    fold_batchnorm,
    identity_kernel,
    merge_pair,
    merge_sequence,
    merged_kernel_size,
    merged_kernel_size_strided,
)

rng = np.random.default_rng(7)


def rel_err(a, b):
    return np.max(np.abs(a - b)) / np.max(np.abs(b))


print("== kernel size arithmetic ==")
print("two 3x3 layers merge to:  ", merged_kernel_size([3, 3]))
print("three 3x3 layers merge to:", merged_kernel_size([3, 3, 3]))
print("3x3 stride 2 then 3x3:    ", merged_kernel_size_strided(3, 2, 3))
print("3x3 stride 2 then 1x1:    ", merged_kernel_size_strided(3, 2, 1))
print()
print("Merging grows the kernel: every extra 3x3 layer adds 2 to the width.")
print("Replacing a layer with the identity adds nothing, which is the whole")
print("point of dropping convolutions inside a merged block.")
print()

print("== merging two 3x3 convolutions ==")
a = KernelTensor(rng.standard_normal((8, 8, 3, 3)), rng.standard_normal(8))
b = KernelTensor(rng.standard_normal((8, 8, 3, 3)), rng.standard_normal(8))
merged = merge_pair(a, b)
x = rng.standard_normal((8, 12, 12))
sequential = conv_reference(conv_reference(x, a), b)
fused = conv_reference(x, merged)
print(f"merged kernel: {merged.kernel_size}x{merged.kernel_size}, "
      f"stride {merged.stride}")
print(f"max relative error vs sequential evaluation: {rel_err(fused, sequential):.2e}")
print()

print("== identity substitution inside a stack ==")
stack = [
    KernelTensor(rng.standard_normal((8, 8, 3, 3)), rng.standard_normal(8))
    for _ in range(3)
]
full = merge_sequence(stack, [True, True, True])
thin = merge_sequence(stack, [True, False, True])
print(f"all three kept:   {full.kernel_size}x{full.kernel_size}")
print(f"middle one dropped: {thin.kernel_size}x{thin.kernel_size}")
ident = identity_kernel(8)
print("identity kernel shape:", ident.weights.shape, "(all ones, depthwise)")
print()

print("== depthwise stacks stay depthwise ==")
dw = [
    KernelTensor(rng.standard_normal((8, 1, 3, 3)), rng.standard_normal(8), groups=8)
    for _ in range(2)
]
dw_merged = merge_pair(*dw)
print(f"depthwise 3x3 * depthwise 3x3 -> {dw_merged.kernel_size}x"
      f"{dw_merged.kernel_size}, depthwise={dw_merged.is_depthwise}")
mixed = merge_pair(dw[0], a)
print(f"depthwise then standard        -> groups={mixed.groups} (promoted)")
print()

print("== batch-norm folding ==")
bn = BatchNormParams(
    gamma=rng.uniform(0.5, 1.5, 8),
    beta=rng.standard_normal(8),
    running_mean=rng.standard_normal(8),
    running_var=rng.uniform(0.2, 2.0, 8),
)
folded = fold_batchnorm(a, bn)
scale = bn.gamma / np.sqrt(bn.running_var + bn.epsilon)
want = (conv_reference(x, a) - bn.running_mean[:, None, None]) * scale[:, None, None]
want += bn.beta[:, None, None]
print(f"|bn(conv(x)) - folded(x)| = {np.max(np.abs(conv_reference(x, folded) - want)):.2e}")
print("Folding first, merging second keeps every later equivalence check exact.")
