"""Reference implementations of the hot numeric kernels.

The compiled twin (``_fast.pyx``) mirrors these line by line: both perform the
same floating-point operations in the same order, so results are bit-identical
whichever backend gets loaded.
"""

from __future__ import annotations

import math


def water_fill(capacity, floors, ceilings, weights):
    """Divide ``capacity`` among consumers with floors, ceilings and weights.

    Every consumer starts at min(floor, ceiling); the remainder is handed out
    proportionally to weight, repeatedly capping consumers at their ceiling
    and re-offering what they could not absorb.  Zero-weight consumers never
    receive more than their floor.  Returns the allocation list; the sum never
    exceeds max(capacity, sum of granted floors) beyond float error.
    """
    n = len(floors)
    if n == 0:
        return []
    alloc = [0.0] * n
    for i in range(n):
        f = floors[i]
        c = ceilings[i]
        alloc[i] = f if f < c else c
    remaining = capacity
    for i in range(n):
        remaining -= alloc[i]
    scale = capacity if capacity > 1.0 else 1.0
    eps = 1e-12 * scale
    active = [i for i in range(n) if weights[i] > 0.0 and alloc[i] < ceilings[i] - eps]
    while remaining > eps and active:
        total_w = 0.0
        for i in active:
            total_w += weights[i]
        share = remaining / total_w
        capped_any = False
        for i in active:
            if alloc[i] + weights[i] * share >= ceilings[i] - eps:
                remaining -= ceilings[i] - alloc[i]
                alloc[i] = ceilings[i]
                capped_any = True
        if not capped_any:
            for i in active:
                alloc[i] += weights[i] * share
            break
        active = [i for i in active if alloc[i] < ceilings[i] - eps]
    return alloc


def pstdev(values):
    """Population standard deviation; empty input is an error."""
    n = len(values)
    if n == 0:
        raise ValueError("pstdev() requires at least one value")
    mean = 0.0
    for i in range(n):
        mean += values[i]
    mean /= n
    var = 0.0
    for i in range(n):
        d = values[i] - mean
        d *= d
        var += d
    var /= n
    return math.sqrt(var)
