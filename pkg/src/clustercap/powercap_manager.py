"""Per-host power-cap planning against a fixed cluster budget.

Four planning moves, all pure snapshot-in/actions-out:

* ``get_flexible_power`` builds the reserved-cap view: what each host's cap
  could shrink to while still covering its residents' CPU reservations, and
  how much budget that leaves unreserved.
* ``redivvy_power_cap`` re-divides the budget after constraint correction has
  raised some hosts' required caps: requirements are met first (funded by
  other hosts' slack and by unreserved budget), then leftover budget is
  re-shared proportionally to required caps with peak clamping.
* ``balance_power_cap`` runs progressive filling toward max-min fairness of
  normalized entitlements: repeatedly move watts from the least-loaded host
  to the most-loaded one until the imbalance drops below threshold or every
  remaining transfer is blocked by a peak clamp or reservation floor.
* ``redistribute_for_power_on`` / ``reclaim_on_power_off`` shift budget
  around DPM host power state changes.

Worked two-host example used throughout the tests: zero-idle 600 W / 6 GHz
hosts under a 960 W budget; caps (480, 480) with required caps (240, 600)
redivvy to (360, 600) - capacities (3.6, 6.0) GHz.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Mapping, Protocol

from clustercap._kernels import water_fill
from clustercap.cluster_core import (
    Action,
    ActionPlan,
    ClusterSnapshot,
    PowerState,
    SetPowerCap,
    compute_entitlements,
    imbalance_metric,
)
from clustercap.power_model import cap_for_capacity, managed_capacity

__all__ = [
    "FlexiblePower",
    "InfeasibleRedivvy",
    "PowerHooks",
    "RedistributingPowerHooks",
    "FixedCapPowerHooks",
    "get_flexible_power",
    "redivvy_power_cap",
    "balance_power_cap",
    "redistribute_for_power_on",
    "reclaim_on_power_off",
]

_EPS_W = 1e-6
_EPS_MHZ = 1e-6


@dataclass(frozen=True)
class FlexiblePower:
    """Snapshot clone whose caps are the reserved (or required) caps."""

    snapshot: ClusterSnapshot
    reserved_cap_w: Mapping[str, float]
    unreserved_budget_w: float

    def with_required_cap(self, host_id: str, watts: float) -> "FlexiblePower":
        """Record a correction-imposed required cap for one host."""
        reserved = dict(self.reserved_cap_w)
        reserved[host_id] = float(watts)
        snap = self.snapshot.with_cap(host_id, float(watts))
        unreserved = snap.power_budget_w - sum(
            reserved[h] for h in snap.powered_on_host_ids()
        )
        return FlexiblePower(
            snapshot=snap, reserved_cap_w=reserved, unreserved_budget_w=unreserved
        )


def get_flexible_power(snapshot: ClusterSnapshot) -> FlexiblePower:
    """Reserved-cap view: each powered-on host shrunk to its reservation floor."""
    reserved: dict[str, float] = {}
    clone = snapshot
    for h in sorted(snapshot.host_states):
        st = snapshot.host_states[h]
        if st.power_state is PowerState.ON:
            spec = snapshot.host_specs[h]
            need = snapshot.cpu_reservation_mhz(h) + spec.power.c_hypervisor_mhz
            if need > spec.power.c_peak_mhz + _EPS_MHZ:
                raise ValueError(
                    f"host {h}: reservations {need} MHz exceed peak capacity "
                    f"{spec.power.c_peak_mhz} MHz"
                )
            cap = snapshot.reservation_floor_cap_w(h)
            reserved[h] = cap
            clone = clone.with_cap(h, cap)
        else:
            reserved[h] = 0.0
    unreserved = snapshot.power_budget_w - sum(
        reserved[h] for h in snapshot.powered_on_host_ids()
    )
    return FlexiblePower(
        snapshot=clone, reserved_cap_w=reserved, unreserved_budget_w=unreserved
    )


class InfeasibleRedivvy(ValueError):
    """Required cap raises exceed slack plus unreserved budget."""


def _emit_cap_changes(
    snapshot: ClusterSnapshot, new_caps: Mapping[str, float]
) -> tuple[Action, ...]:
    """SetPowerCap actions for changed hosts, decreases funding increases."""
    decreases = []
    increases = []
    for h in sorted(new_caps):
        old = snapshot.host_states[h].power_cap_w
        new = new_caps[h]
        if new < old - _EPS_W:
            decreases.append((h, new))
        elif new > old + _EPS_W:
            increases.append((h, new))
    plan = ActionPlan()
    down = [plan.add(SetPowerCap(host_id=h, watts=w)) for h, w in decreases]
    for h, w in increases:
        plan.add(SetPowerCap(host_id=h, watts=w), after=down)
    return plan.actions


def redivvy_power_cap(
    snapshot: ClusterSnapshot,
    flexible: FlexiblePower,
    *,
    literal_form: bool = False,
) -> tuple[Action, ...]:
    """Re-divide the budget to meet required caps, then share the remainder.

    Hosts whose required cap exceeds their current cap get exactly the
    requirement; the total raise is funded by shrinking the other hosts
    toward their requirements (proportionally to their slack) and by
    unreserved budget.  Whatever budget then remains is offered to all hosts
    proportionally to their required caps, clamped at peak power with
    overflow re-offered.  ``literal_form`` applies the slack multiplier as
    printed in the source algorithm instead (kept for study; it does not
    conserve the budget when the raise differs from half the slack).
    """
    hosts = snapshot.powered_on_host_ids()
    current = {h: snapshot.host_states[h].power_cap_w for h in hosts}
    required = {h: flexible.reserved_cap_w[h] for h in hosts}
    needed = sum(max(0.0, required[h] - current[h]) for h in hosts)
    excess = sum(max(0.0, current[h] - required[h]) for h in hosts)
    free = snapshot.power_budget_w - sum(current.values())
    if needed > excess + free + _EPS_W:
        raise InfeasibleRedivvy(
            f"required cap raises ({needed} W) exceed reclaimable slack "
            f"({excess} W) plus unreserved budget ({free} W)"
        )

    new_caps: dict[str, float] = {}
    if needed <= _EPS_W:
        new_caps.update(current)
    else:
        for h in hosts:
            if required[h] >= current[h]:
                new_caps[h] = required[h]
            elif literal_form:
                ratio = needed / excess
                new_caps[h] = required[h] + ratio * (current[h] - required[h])
            else:
                keep = max(0.0, 1.0 - needed / excess)
                new_caps[h] = required[h] + keep * (current[h] - required[h])

    if not literal_form:
        remaining = snapshot.power_budget_w - sum(new_caps.values())
        if remaining > _EPS_W and hosts:
            order = list(hosts)
            filled = water_fill(
                snapshot.power_budget_w,
                [new_caps[h] for h in order],
                [snapshot.host_specs[h].power.p_peak_w for h in order],
                [required[h] for h in order],
            )
            new_caps = dict(zip(order, filled))

    return _emit_cap_changes(snapshot, new_caps)


def _watt_slope(snapshot: ClusterSnapshot, host_id: str) -> float:
    pw = snapshot.host_specs[host_id].power
    return (pw.p_peak_w - pw.p_idle_w) / pw.c_peak_mhz


def _host_cpu_demand(
    snapshot: ClusterSnapshot,
    estimates: Mapping[str, tuple[float, float]],
    host_id: str,
) -> float:
    """Sum of residents' entitlement ceilings: max(res, min(limit, est))."""
    total = 0.0
    for v in snapshot.residents_of(host_id):
        spec = snapshot.vm_specs[v]
        total += max(
            spec.cpu.reservation, min(spec.cpu.effective_limit, estimates[v][0])
        )
    return total


def _transfer_watts(
    snapshot: ClusterSnapshot,
    ents,
    demand: Mapping[str, float],
    n_mean: float,
    recv: str,
    donor: str,
) -> float:
    """Watts the donor can give the receiver toward mean normalized entitlement.

    The target capacity for either endpoint is the one at which its normalized
    entitlement would equal the cluster mean; for a host whose demand fits its
    capacity that is entitled/mean, and for a contended host the demand sum is
    what the capacity must chase (its entitlement merely equals capacity).
    """
    pw_r = snapshot.host_specs[recv].power
    peak_managed = max(0.0, pw_r.c_peak_mhz - pw_r.c_hypervisor_mhz)
    target_recv = min(peak_managed, demand[recv] / n_mean)
    c_needed = target_recv - ents.host_cpu_capacity[recv]
    floor_donor = max(
        demand[donor] / n_mean,
        snapshot.cpu_reservation_mhz(donor),
    )
    c_avail = ents.host_cpu_capacity[donor] - floor_donor
    if c_needed <= _EPS_MHZ or c_avail <= _EPS_MHZ:
        return 0.0
    return min(
        c_needed * _watt_slope(snapshot, recv),
        c_avail * _watt_slope(snapshot, donor),
    )


def balance_power_cap(
    snapshot: ClusterSnapshot,
    estimates: Mapping[str, tuple[float, float]],
    threshold: float = 0.05,
    max_transfers: int = 500,
) -> tuple[tuple[Action, ...], ClusterSnapshot]:
    """Progressive-filling cap balancing toward max-min fair entitlements.

    Returns the net cap-change actions (decreases funding increases) and the
    balanced snapshot.  Stops when imbalance <= threshold, when every
    orderable (receiver, donor) pair is blocked, or at the transfer limit.
    """
    snap = snapshot
    blocked: set[tuple[str, str]] = set()
    transfers = 0
    while transfers < max_transfers:
        hosts = snap.powered_on_host_ids()
        if len(hosts) < 2:
            break
        ents = compute_entitlements(snap, estimates)
        sd = imbalance_metric(snap, ents)
        if sd <= threshold:
            break
        norm = ents.host_normalized
        n_mean = sum(norm[h] for h in hosts) / len(hosts)
        if n_mean <= 1e-12:
            break
        demand = {h: _host_cpu_demand(snap, estimates, h) for h in hosts}
        by_load_desc = sorted(hosts, key=lambda h: (-norm[h], h))
        by_load_asc = sorted(hosts, key=lambda h: (norm[h], h))
        moved = False
        for recv in by_load_desc:
            for donor in by_load_asc:
                if recv == donor or (recv, donor) in blocked:
                    continue
                if norm[recv] <= norm[donor] + 1e-12:
                    continue
                dw = _transfer_watts(snap, ents, demand, n_mean, recv, donor)
                if dw <= _EPS_W:
                    blocked.add((recv, donor))
                    continue
                pw_r = snap.host_specs[recv].power
                pw_d = snap.host_specs[donor].power
                cand = snap.with_cap(
                    recv,
                    min(pw_r.p_peak_w, snap.host_states[recv].power_cap_w + dw),
                ).with_cap(
                    donor,
                    max(pw_d.p_idle_w, snap.host_states[donor].power_cap_w - dw),
                )
                sd_after = imbalance_metric(
                    cand, compute_entitlements(cand, estimates)
                )
                if sd_after < sd - 1e-12:
                    snap = cand
                    transfers += 1
                    blocked.clear()
                    moved = True
                    break
                blocked.add((recv, donor))
            if moved:
                break
        if not moved:
            break

    new_caps = {h: snap.host_states[h].power_cap_w for h in snap.powered_on_host_ids()}
    actions = _emit_cap_changes(snapshot, new_caps)
    return actions, (snap if actions else snapshot)


def redistribute_for_power_on(
    snapshot: ClusterSnapshot,
    candidate_id: str,
    *,
    high_threshold: float,
    window_cpu_mhz: Mapping[str, float],
) -> tuple[tuple[Action, ...], float]:
    """Budget support for powering on ``candidate_id``.

    Free budget is granted first; if that falls short of peak power, donors
    are shrunk in ascending CPU-utilization order, never below the cap that
    keeps their window demand under the high-utilization threshold (nor below
    their reservation floor).  Returns (donor cap decreases, achievable W).
    """
    if snapshot.host_states[candidate_id].power_state is not PowerState.OFF:
        raise ValueError(f"host {candidate_id} is not powered off")
    peak = snapshot.host_specs[candidate_id].power.p_peak_w
    free = snapshot.power_budget_w - snapshot.capped_power_sum_w()
    achievable = min(peak, free)
    plan = ActionPlan()
    need = peak - achievable
    if need > _EPS_W:
        donors = list(snapshot.powered_on_host_ids())

        def utilization(h: str) -> float:
            cap = snapshot.managed_capacity_of(h)
            if cap <= _EPS_MHZ:
                return float("inf")
            return window_cpu_mhz.get(h, 0.0) / cap

        donors.sort(key=lambda h: (utilization(h), h))
        for h in donors:
            if need <= _EPS_W:
                break
            spec = snapshot.host_specs[h]
            floor_capacity = max(
                snapshot.cpu_reservation_mhz(h),
                window_cpu_mhz.get(h, 0.0) / high_threshold,
            )
            floor_cap = cap_for_capacity(
                spec.power,
                min(spec.power.c_peak_mhz, floor_capacity + spec.power.c_hypervisor_mhz),
            )
            donation = snapshot.host_states[h].power_cap_w - floor_cap
            if donation <= _EPS_W:
                continue
            take = min(donation, need)
            plan.add(
                SetPowerCap(host_id=h, watts=snapshot.host_states[h].power_cap_w - take)
            )
            need -= take
            achievable += take
    return plan.actions, achievable


def reclaim_on_power_off(
    snapshot: ClusterSnapshot, host_id: str
) -> tuple[Action, ...]:
    """Zero the departing host's cap and share the freed watts.

    Computed against the pre-power-off snapshot (the host still carries its
    cap); the returned actions are meant to execute after the power-off
    itself.  Freed budget goes to remaining powered-on hosts proportionally
    to their current caps, clamped at peak; anything left stays unreserved.
    """
    freed = snapshot.host_states[host_id].power_cap_w
    others = [h for h in snapshot.powered_on_host_ids() if h != host_id]
    plan = ActionPlan()
    zero = plan.add(SetPowerCap(host_id=host_id, watts=0.0))
    if others and freed > _EPS_W:
        caps = [snapshot.host_states[h].power_cap_w for h in others]
        filled = water_fill(
            sum(caps) + freed,
            caps,
            [snapshot.host_specs[h].power.p_peak_w for h in others],
            caps,
        )
        for h, new in zip(others, filled):
            if new > snapshot.host_states[h].power_cap_w + _EPS_W:
                plan.add(SetPowerCap(host_id=h, watts=new), after=[zero])
    return plan.actions


class PowerHooks(Protocol):
    """Cap-policy side of DPM decisions (duck-typed)."""

    def power_on_support(
        self,
        snapshot: ClusterSnapshot,
        candidate_id: str,
        *,
        high_threshold: float,
        window_cpu_mhz: Mapping[str, float],
    ) -> tuple[tuple[Action, ...], float]: ...

    def power_off_reclaim(
        self, snapshot: ClusterSnapshot, host_id: str
    ) -> tuple[Action, ...]: ...


class RedistributingPowerHooks:
    """Full cap redistribution around power on/off."""

    def power_on_support(self, snapshot, candidate_id, *, high_threshold, window_cpu_mhz):
        return redistribute_for_power_on(
            snapshot,
            candidate_id,
            high_threshold=high_threshold,
            window_cpu_mhz=window_cpu_mhz,
        )

    def power_off_reclaim(self, snapshot, host_id):
        return reclaim_on_power_off(snapshot, host_id)


class FixedCapPowerHooks:
    """Caps never move: power-on gets min(fixed cap, free budget)."""

    def __init__(self, cap_w: float | None = None) -> None:
        self.cap_w = cap_w

    def power_on_support(self, snapshot, candidate_id, *, high_threshold, window_cpu_mhz):
        peak = snapshot.host_specs[candidate_id].power.p_peak_w
        free = snapshot.power_budget_w - snapshot.capped_power_sum_w()
        cap = peak if self.cap_w is None else self.cap_w
        return (), min(cap, free, peak)

    def power_off_reclaim(self, snapshot, host_id):
        return ()
