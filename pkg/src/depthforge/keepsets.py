"""Exact keep-set selection inside one segment.

Given a segment ``(i, j]`` and a target merged kernel size ``k``, pick the
layers to keep so that the merged size is exactly ``k``, every irreducible
layer stays, and the total l1 norm of the kept weights is maximal. Solved by
dynamic programming over kernel-increment sums; ties break toward the
lexicographically smallest keep set so plans are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

from .arch import NetworkDescriptor
from .errors import DescriptorError, KeepSetError

State = tuple[int, bool]  # (kernel-increment sum, any standard layer kept)
Value = tuple[float, tuple[int, ...]]  # (total l1, kept indices ascending)


@dataclass(frozen=True)
class KeepSetSolution:
    keep: frozenset[int]
    total_l1: float
    achieved_k: int
    depthwise_result: bool


def _better(a: Value, b: Value) -> Value:
    """Higher l1 wins; exact ties go to the lexicographically smaller set."""
    if a[0] != b[0]:
        return a if a[0] > b[0] else b
    return a if a[1] <= b[1] else b


def _dp_states(net: NetworkDescriptor, i: int, j: int) -> dict[State, Value]:
    states: dict[State, Value] = {(0, False): (0.0, ())}
    for l in range(i + 1, j + 1):
        layer = net.layer(l)
        if layer.l1_norm is None:
            raise DescriptorError(f"layer {l}: l1_norm required for keep-set selection")
        forced = l in net.irreducible or not layer.identity_substitutable()
        inc = layer.kernel_size - 1
        is_std = not layer.is_depthwise
        nxt: dict[State, Value] = {}
        for (total, has_std), (l1, keep) in states.items():
            candidates = [((total + inc, has_std or is_std), (l1 + layer.l1_norm, keep + (l,)))]
            if not forced:
                candidates.append(((total, has_std), (l1, keep)))
            for state, value in candidates:
                if state in nxt:
                    nxt[state] = _better(nxt[state], value)
                else:
                    nxt[state] = value
        states = nxt
    return states


def solve_keep_set(
    i: int,
    j: int,
    k: int,
    net: NetworkDescriptor,
    depthwise: bool | None = None,
) -> KeepSetSolution:
    """Maximal-l1 keep set realizing merged kernel size ``k`` on ``(i, j]``.

    ``depthwise`` constrains the merged layer's structure: True demands an
    all-depthwise keep set, False demands at least one standard layer, None
    takes the best of both.
    """
    if not net.segment_allowed(i, j):
        raise KeepSetError(f"segment ({i}, {j}] spans a barrier")
    states = _dp_states(net, i, j)

    candidates: list[tuple[Value, bool]] = []
    wanted = k - 1
    for (total, has_std), value in states.items():
        if total != wanted:
            continue
        if depthwise is True and has_std:
            continue
        if depthwise is False and not has_std:
            continue
        candidates.append((value, has_std))
    if not candidates:
        raise KeepSetError(
            f"no keep set on ({i}, {j}] realizes kernel size {k}"
            + ("" if depthwise is None else f" with depthwise={depthwise}")
        )
    best_value, best_has_std = candidates[0]
    for value, has_std in candidates[1:]:
        chosen = _better(best_value, value)
        if chosen is not best_value:
            best_value, best_has_std = value, has_std
    l1, keep = best_value
    return KeepSetSolution(
        keep=frozenset(keep),
        total_l1=l1,
        achieved_k=k,
        depthwise_result=not best_has_std,
    )


def extend_sets(
    i: int, j: int, keep: KeepSetSolution, layer_count: int
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Lift a segment keep set to whole-network index sets.

    Returns the full convolution keep set (everything outside the segment
    plus the kept members) and the activation set that isolates the segment
    (all boundaries except those strictly inside it).
    """
    conv = sorted(set(range(1, i + 1)) | set(keep.keep) | set(range(j + 1, layer_count + 1)))
    act = sorted(set(range(1, i + 1)) | set(range(j, layer_count)))
    return tuple(conv), tuple(act)
