"""Per-host power-cap management for resource-managed clusters.

The package models hosts whose usable CPU capacity is bounded by a per-host
power cap, plans cap changes (redistribution, balancing, power on/off
support), integrates them with a DRS-style VM resource manager, and replays
the whole thing in a deterministic discrete-time simulator.
"""

from clustercap.power_model import (
    PowerModelParams,
    RackPlan,
    cap_for_capacity,
    capped_capacity,
    managed_capacity,
    plan_rack_deployment,
    power_consumed,
)

__version__ = "0.1.0"
