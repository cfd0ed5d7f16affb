"""Linear host power/capacity model and rack-planning arithmetic.

A host draws ``p_idle`` watts when idle and ``p_peak`` at full load, linearly
in between.  A power cap between those two points therefore bounds the usable
CPU capacity; the cap<->capacity mapping and its inverse are the core of this
module.  ``plan_rack_deployment`` answers the provisioning question: how many
identical hosts fit in a fixed power budget at a given per-host cap, and what
aggregate CPU/memory does that buy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

__all__ = [
    "PowerModelParams",
    "RackPlan",
    "cap_for_capacity",
    "capped_capacity",
    "managed_capacity",
    "plan_rack_deployment",
    "power_consumed",
]


@dataclass(frozen=True)
class PowerModelParams:
    """Static power/capacity characteristics of one host."""

    p_idle_w: float
    p_peak_w: float
    c_peak_mhz: float
    c_hypervisor_mhz: float = 0.0
    p_nameplate_w: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_idle_w < self.p_peak_w:
            raise ValueError(
                f"need 0 <= p_idle < p_peak, got {self.p_idle_w}/{self.p_peak_w} W"
            )
        if self.c_peak_mhz <= 0.0:
            raise ValueError(f"c_peak must be positive, got {self.c_peak_mhz} MHz")
        if not 0.0 <= self.c_hypervisor_mhz < self.c_peak_mhz:
            raise ValueError(
                "hypervisor overhead must lie in [0, c_peak), "
                f"got {self.c_hypervisor_mhz} MHz"
            )
        if self.p_nameplate_w is not None and self.p_nameplate_w < self.p_peak_w:
            raise ValueError(
                f"nameplate power {self.p_nameplate_w} W below peak {self.p_peak_w} W"
            )


def capped_capacity(params: PowerModelParams, cap_w: float) -> float:
    """Raw CPU capacity (MHz) available under ``cap_w``."""
    if not params.p_idle_w <= cap_w <= params.p_peak_w:
        raise ValueError(
            f"cap {cap_w} W outside [{params.p_idle_w}, {params.p_peak_w}] W"
        )
    span = params.p_peak_w - params.p_idle_w
    return params.c_peak_mhz * (cap_w - params.p_idle_w) / span


def managed_capacity(params: PowerModelParams, cap_w: float) -> float:
    """Capacity the scheduler may hand out: capped capacity minus overhead."""
    return max(0.0, capped_capacity(params, cap_w) - params.c_hypervisor_mhz)


def cap_for_capacity(params: PowerModelParams, c_mhz: float) -> float:
    """Lowest cap (W) delivering ``c_mhz``; inverse of :func:`capped_capacity`."""
    if not 0.0 <= c_mhz <= params.c_peak_mhz:
        raise ValueError(f"capacity {c_mhz} MHz outside [0, {params.c_peak_mhz}] MHz")
    span = params.p_peak_w - params.p_idle_w
    return params.p_idle_w + span * (c_mhz / params.c_peak_mhz)


def power_consumed(params: PowerModelParams, utilization: float) -> float:
    """Estimated draw (W) at ``utilization`` (fraction of c_peak in [0, 1]).

    Deliberately an upper bound: real hosts draw at or below the linear
    interpolation, so budgeting against it is safe.
    """
    if not 0.0 <= utilization <= 1.0:
        raise ValueError(f"utilization {utilization} outside [0, 1]")
    return params.p_idle_w + (params.p_peak_w - params.p_idle_w) * utilization


class RackPlan(NamedTuple):
    host_count: int
    total_cpu_mhz: float
    total_memory_mb: float


def plan_rack_deployment(
    params: PowerModelParams,
    memory_mb: float,
    budget_w: float,
    cap_w: float,
) -> RackPlan:
    """Fit identical hosts capped at ``cap_w`` into a ``budget_w`` rack budget.

    The budget is divided by the cap at face value (capped at the nameplate
    rating, the most a host can physically be provisioned for), while the
    delivered capacity per host is bounded by what the cap can actually buy,
    never above ``c_peak``.
    """
    if cap_w <= 0.0:
        raise ValueError(f"cap must be positive, got {cap_w} W")
    if budget_w <= 0.0:
        raise ValueError(f"budget must be positive, got {budget_w} W")
    divisor = cap_w
    if params.p_nameplate_w is not None:
        divisor = min(divisor, params.p_nameplate_w)
    count = math.floor(budget_w / divisor)
    effective_cap = min(cap_w, params.p_peak_w)
    if effective_cap < params.p_idle_w:
        per_host_mhz = 0.0
    else:
        per_host_mhz = min(capped_capacity(params, effective_cap), params.c_peak_mhz)
    return RackPlan(count, count * per_host_mhz, count * memory_mb)
