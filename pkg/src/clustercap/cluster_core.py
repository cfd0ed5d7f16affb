"""Domain model and entitlement engine.

Hosts, VMs, placement rules, immutable cluster snapshots, the action
vocabulary planners emit (cap changes, migrations, power on/off with
prerequisites), and the entitlement math used everywhere else: per-VM
water-filled entitlements, per-host normalized entitlement, and the cluster
imbalance metric.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

from clustercap._kernels import pstdev, water_fill
from clustercap.power_model import (
    PowerModelParams,
    cap_for_capacity,
    managed_capacity,
)

_EPS_W = 1e-6  # watt-scale comparisons
_EPS_MHZ = 1e-6

_UNLIMITED = float("inf")


class PowerState(enum.Enum):
    ON = "on"
    OFF = "off"
    POWERING_ON = "powering_on"
    POWERING_OFF = "powering_off"


@dataclass(frozen=True)
class ResourceControls:
    """Reservation floor, optional limit ceiling, and share weight."""

    reservation: float = 0.0
    limit: float | None = None
    shares: float = 1000.0

    def __post_init__(self) -> None:
        if self.reservation < 0.0:
            raise ValueError(f"reservation must be >= 0, got {self.reservation}")
        if self.limit is not None and self.limit < self.reservation:
            raise ValueError(
                f"limit {self.limit} below reservation {self.reservation}"
            )
        if self.shares <= 0.0:
            raise ValueError(f"shares must be positive, got {self.shares}")

    @property
    def effective_limit(self) -> float:
        return _UNLIMITED if self.limit is None else self.limit


@dataclass(frozen=True)
class DemandTrace:
    """Piecewise-constant (cpu MHz, mem MB) demand over time."""

    segments: tuple[tuple[float, float, float], ...]

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("trace needs at least one segment")
        if self.segments[0][0] != 0.0:
            raise ValueError("first trace segment must start at t=0")
        prev = -1.0
        for start, cpu, mem in self.segments:
            if start <= prev:
                raise ValueError("trace segment starts must be strictly increasing")
            if cpu < 0.0 or mem < 0.0:
                raise ValueError("trace demands must be >= 0")
            prev = start

    def at(self, t: float) -> tuple[float, float]:
        """Demand (cpu MHz, mem MB) at time ``t``."""
        if t < 0.0:
            raise ValueError(f"time must be >= 0, got {t}")
        starts = [s[0] for s in self.segments]
        seg = self.segments[bisect_right(starts, t) - 1]
        return (seg[1], seg[2])


@dataclass(frozen=True)
class VmSpec:
    vm_id: str
    vcpus: int
    memory_mb: float
    cpu: ResourceControls = ResourceControls()
    mem: ResourceControls = ResourceControls()
    trace: DemandTrace | None = None

    def __post_init__(self) -> None:
        if self.vcpus < 1:
            raise ValueError(f"vm {self.vm_id}: vcpus must be >= 1")
        if self.memory_mb <= 0.0:
            raise ValueError(f"vm {self.vm_id}: memory must be positive")


@dataclass(frozen=True)
class HostSpec:
    host_id: str
    cores: int
    mhz_per_core: float
    memory_mb: float
    power: PowerModelParams

    def __post_init__(self) -> None:
        if self.cores < 1 or self.mhz_per_core <= 0.0 or self.memory_mb <= 0.0:
            raise ValueError(f"host {self.host_id}: bad core/frequency/memory sizing")
        if abs(self.cores * self.mhz_per_core - self.power.c_peak_mhz) > _EPS_MHZ:
            raise ValueError(
                f"host {self.host_id}: cores x mhz_per_core "
                f"({self.cores * self.mhz_per_core}) != peak capacity "
                f"({self.power.c_peak_mhz})"
            )


@dataclass(frozen=True)
class HostState:
    power_state: PowerState
    power_cap_w: float


class RuleKind(enum.Enum):
    VM_VM_AFFINITY = "vm_vm_affinity"
    VM_VM_ANTI_AFFINITY = "vm_vm_anti_affinity"
    VM_HOST_PIN = "vm_host_pin"


@dataclass(frozen=True)
class Rule:
    kind: RuleKind
    members: tuple[str, ...]
    hosts: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.members:
            raise ValueError("rule needs at least one member VM")
        if self.kind is RuleKind.VM_HOST_PIN and not self.hosts:
            raise ValueError("host pin rule needs at least one host")


# --------------------------------------------------------------------- actions


@dataclass(frozen=True, kw_only=True)
class Action:
    """Base planner action; ids and prerequisites are wired by ActionPlan."""

    action_id: int = -1
    prereq_ids: tuple[int, ...] = ()


@dataclass(frozen=True, kw_only=True)
class SetPowerCap(Action):
    host_id: str
    watts: float


@dataclass(frozen=True, kw_only=True)
class MigrateVm(Action):
    vm_id: str
    src: str
    dst: str


@dataclass(frozen=True, kw_only=True)
class PowerOnHost(Action):
    host_id: str


@dataclass(frozen=True, kw_only=True)
class PowerOffHost(Action):
    host_id: str


class ActionPlan:
    """Builder that assigns action ids and prerequisite edges."""

    def __init__(self) -> None:
        self._actions: list[Action] = []

    def add(self, action: Action, after: Sequence[Action | int] = ()) -> Action:
        prereqs = tuple(
            a.action_id if isinstance(a, Action) else int(a) for a in after
        )
        wired = dataclasses.replace(
            action, action_id=len(self._actions), prereq_ids=prereqs
        )
        self._actions.append(wired)
        return wired

    @property
    def actions(self) -> tuple[Action, ...]:
        return tuple(self._actions)

    def __len__(self) -> int:
        return len(self._actions)


class InvalidAction(ValueError):
    def __init__(self, action: Action, reason: str) -> None:
        self.action = action
        self.reason = reason
        super().__init__(f"{type(action).__name__}: {reason} ({action})")


class ReservationOvercommit(ValueError):
    def __init__(self, host_id: str, resource: str, reserved: float, capacity: float):
        self.host_id = host_id
        super().__init__(
            f"host {host_id}: {resource} reservations {reserved} exceed capacity "
            f"{capacity}"
        )


# -------------------------------------------------------------------- snapshot


@dataclass(frozen=True)
class ClusterSnapshot:
    """Immutable point-in-time view of the cluster.

    Mapping fields are plain dicts treated as immutable by convention; the
    ``with_*`` helpers produce updated copies.
    """

    host_specs: Mapping[str, HostSpec]
    host_states: Mapping[str, HostState]
    vm_specs: Mapping[str, VmSpec]
    placement: Mapping[str, str]  # vm id -> host id
    rules: tuple[Rule, ...] = ()
    power_budget_w: float = 0.0
    time_s: float = 0.0

    # -- read helpers ------------------------------------------------------

    def residents_of(self, host_id: str) -> tuple[str, ...]:
        return tuple(
            sorted(v for v, h in self.placement.items() if h == host_id)
        )

    def powered_on_host_ids(self) -> tuple[str, ...]:
        return tuple(
            sorted(
                h
                for h, st in self.host_states.items()
                if st.power_state is PowerState.ON
            )
        )

    def managed_capacity_of(self, host_id: str) -> float:
        st = self.host_states[host_id]
        if st.power_state is not PowerState.ON:
            return 0.0
        return managed_capacity(self.host_specs[host_id].power, st.power_cap_w)

    def cpu_reservation_mhz(self, host_id: str) -> float:
        return sum(
            self.vm_specs[v].cpu.reservation for v in self.residents_of(host_id)
        )

    def mem_reservation_mb(self, host_id: str) -> float:
        return sum(
            self.vm_specs[v].mem.reservation for v in self.residents_of(host_id)
        )

    def reservation_floor_cap_w(self, host_id: str) -> float:
        """Lowest legal cap for the host given its residents' cpu reservations."""
        spec = self.host_specs[host_id]
        need = min(
            spec.power.c_peak_mhz,
            self.cpu_reservation_mhz(host_id) + spec.power.c_hypervisor_mhz,
        )
        return cap_for_capacity(spec.power, need)

    def capped_power_sum_w(self) -> float:
        """Budget-relevant cap total (on and powering-on hosts)."""
        return sum(
            st.power_cap_w
            for st in self.host_states.values()
            if st.power_state in (PowerState.ON, PowerState.POWERING_ON)
        )

    # -- evolve helpers ----------------------------------------------------

    def with_cap(self, host_id: str, watts: float) -> "ClusterSnapshot":
        states = dict(self.host_states)
        states[host_id] = dataclasses.replace(states[host_id], power_cap_w=watts)
        return dataclasses.replace(self, host_states=states)

    def with_power_state(
        self, host_id: str, state: PowerState, cap_w: float
    ) -> "ClusterSnapshot":
        states = dict(self.host_states)
        states[host_id] = HostState(power_state=state, power_cap_w=cap_w)
        return dataclasses.replace(self, host_states=states)

    def with_vm_placed(self, vm_id: str, host_id: str) -> "ClusterSnapshot":
        placement = dict(self.placement)
        placement[vm_id] = host_id
        return dataclasses.replace(self, placement=placement)

    # -- invariants --------------------------------------------------------

    def validate(self) -> None:
        if set(self.host_specs) != set(self.host_states):
            raise ValueError("host specs and states disagree on host ids")
        total = self.capped_power_sum_w()
        if total > self.power_budget_w + _EPS_W:
            raise ValueError(
                f"cap total {total} W exceeds budget {self.power_budget_w} W"
            )
        for h, st in self.host_states.items():
            pw = self.host_specs[h].power
            if st.power_state is PowerState.OFF:
                if st.power_cap_w != 0.0:
                    raise ValueError(f"host {h}: powered off but cap nonzero")
                if self.residents_of(h):
                    raise ValueError(f"host {h}: powered off but has residents")
            elif st.power_state is PowerState.ON:
                if not pw.p_idle_w - _EPS_W <= st.power_cap_w <= pw.p_peak_w + _EPS_W:
                    raise ValueError(
                        f"host {h}: cap {st.power_cap_w} W outside "
                        f"[{pw.p_idle_w}, {pw.p_peak_w}] W"
                    )
        for v, h in self.placement.items():
            if v not in self.vm_specs:
                raise ValueError(f"placement references unknown vm {v}")
            if h not in self.host_specs:
                raise ValueError(f"vm {v} placed on unknown host {h}")
            if self.host_states[h].power_state is not PowerState.ON:
                raise ValueError(f"vm {v} placed on host {h} which is not powered on")
        for h in self.powered_on_host_ids():
            spec = self.host_specs[h]
            cpu_res = self.cpu_reservation_mhz(h)
            if cpu_res > self.managed_capacity_of(h) + _EPS_MHZ:
                raise ValueError(
                    f"host {h}: cpu reservations {cpu_res} MHz exceed managed "
                    f"capacity {self.managed_capacity_of(h)} MHz"
                )
            mem_res = self.mem_reservation_mb(h)
            if mem_res > spec.memory_mb + _EPS_MHZ:
                raise ValueError(
                    f"host {h}: mem reservations {mem_res} MB exceed memory "
                    f"{spec.memory_mb} MB"
                )
        for rule in self.rules:
            for v in rule.members:
                if v not in self.vm_specs:
                    raise ValueError(f"rule references unknown vm {v}")
            for h in rule.hosts:
                if h not in self.host_specs:
                    raise ValueError(f"rule references unknown host {h}")


# ---------------------------------------------------------------- entitlements


class DemandEstimate(NamedTuple):
    cpu_mhz: float
    mem_mb: float


class Entitlement(NamedTuple):
    cpu_mhz: float
    mem_mb: float


@dataclass(frozen=True)
class Entitlements:
    """Per-VM entitlements plus per-host aggregates for powered-on hosts."""

    per_vm: Mapping[str, Entitlement]
    host_cpu_entitled: Mapping[str, float]
    host_cpu_capacity: Mapping[str, float]
    host_normalized: Mapping[str, float]


def compute_entitlements(
    snapshot: ClusterSnapshot,
    estimates: Mapping[str, tuple[float, float]],
) -> Entitlements:
    """Water-fill each host's managed capacity (and memory) across its VMs.

    Floors are reservations, ceilings are min(limit, demand estimate) but never
    below the reservation, weights are shares.  Raises ReservationOvercommit
    when a host cannot honor its floors.
    """
    per_vm: dict[str, Entitlement] = {}
    host_entitled: dict[str, float] = {}
    host_capacity: dict[str, float] = {}
    host_norm: dict[str, float] = {}
    for h in snapshot.powered_on_host_ids():
        residents = snapshot.residents_of(h)
        capacity = snapshot.managed_capacity_of(h)
        mem_capacity = snapshot.host_specs[h].memory_mb
        floors_c: list[float] = []
        ceils_c: list[float] = []
        weights_c: list[float] = []
        floors_m: list[float] = []
        ceils_m: list[float] = []
        weights_m: list[float] = []
        for v in residents:
            spec = snapshot.vm_specs[v]
            if v not in estimates:
                raise ValueError(f"no demand estimate for placed vm {v}")
            est_cpu, est_mem = estimates[v]
            floors_c.append(spec.cpu.reservation)
            ceils_c.append(
                max(spec.cpu.reservation, min(spec.cpu.effective_limit, est_cpu))
            )
            weights_c.append(spec.cpu.shares)
            floors_m.append(spec.mem.reservation)
            ceils_m.append(
                max(spec.mem.reservation, min(spec.mem.effective_limit, est_mem))
            )
            weights_m.append(spec.mem.shares)
        if sum(floors_c) > capacity + _EPS_MHZ:
            raise ReservationOvercommit(h, "cpu", sum(floors_c), capacity)
        if sum(floors_m) > mem_capacity + _EPS_MHZ:
            raise ReservationOvercommit(h, "mem", sum(floors_m), mem_capacity)
        got_cpu = water_fill(capacity, floors_c, ceils_c, weights_c)
        got_mem = water_fill(mem_capacity, floors_m, ceils_m, weights_m)
        total = 0.0
        for v, ec, em in zip(residents, got_cpu, got_mem):
            per_vm[v] = Entitlement(cpu_mhz=ec, mem_mb=em)
            total += ec
        host_entitled[h] = total
        host_capacity[h] = capacity
        if capacity > _EPS_MHZ:
            host_norm[h] = total / capacity
        else:
            # Degenerate: a host throttled to zero capacity counts as fully
            # loaded when anything on it wants CPU, so balancing and DPM still
            # see it as needing relief.
            host_norm[h] = 1.0 if sum(ceils_c) > _EPS_MHZ else 0.0
    return Entitlements(
        per_vm=per_vm,
        host_cpu_entitled=host_entitled,
        host_cpu_capacity=host_capacity,
        host_normalized=host_norm,
    )


def normalized_entitlement(
    snapshot: ClusterSnapshot, entitlements: Entitlements, host_id: str
) -> float:
    """Entitled fraction of the host's managed capacity (N_h)."""
    if snapshot.host_states[host_id].power_state is not PowerState.ON:
        raise ValueError(f"host {host_id} is not powered on")
    return entitlements.host_normalized[host_id]


def imbalance_metric(snapshot: ClusterSnapshot, entitlements: Entitlements) -> float:
    """Population stddev of powered-on hosts' normalized entitlements."""
    hosts = snapshot.powered_on_host_ids()
    if not hosts:
        raise ValueError("imbalance undefined without powered-on hosts")
    return pstdev([entitlements.host_normalized[h] for h in hosts])


# ------------------------------------------------------------- apply actions


def apply_actions(
    snapshot: ClusterSnapshot, actions: Sequence[Action]
) -> ClusterSnapshot:
    """Apply a dependency-ordered action list, validating every step.

    The input snapshot is never mutated; on any violation an InvalidAction
    is raised naming the offending action and nothing is applied.
    """
    states = dict(snapshot.host_states)
    placement = dict(snapshot.placement)
    seen_ids: set[int] = set()

    def residents(h: str) -> list[str]:
        return [v for v, hh in placement.items() if hh == h]

    def cpu_res(h: str) -> float:
        return sum(snapshot.vm_specs[v].cpu.reservation for v in residents(h))

    def mem_res(h: str) -> float:
        return sum(snapshot.vm_specs[v].mem.reservation for v in residents(h))

    def budget_total() -> float:
        return sum(
            st.power_cap_w
            for st in states.values()
            if st.power_state in (PowerState.ON, PowerState.POWERING_ON)
        )

    for act in actions:
        if act.action_id != -1:
            if act.action_id in seen_ids:
                raise InvalidAction(act, "duplicate action id")
        for pid in act.prereq_ids:
            if pid not in seen_ids:
                raise InvalidAction(act, f"prerequisite {pid} not applied yet")

        if isinstance(act, SetPowerCap):
            if act.host_id not in states:
                raise InvalidAction(act, f"unknown host {act.host_id}")
            st = states[act.host_id]
            pw = snapshot.host_specs[act.host_id].power
            if st.power_state is PowerState.OFF:
                if act.watts != 0.0:
                    raise InvalidAction(
                        act, f"host {act.host_id} is off; only cap 0 is valid"
                    )
            elif st.power_state is PowerState.ON:
                if not pw.p_idle_w - _EPS_W <= act.watts <= pw.p_peak_w + _EPS_W:
                    raise InvalidAction(
                        act,
                        f"cap {act.watts} W outside [{pw.p_idle_w}, {pw.p_peak_w}] W",
                    )
                floor = cpu_res(act.host_id) + pw.c_hypervisor_mhz
                usable = managed_capacity(
                    pw, min(max(act.watts, pw.p_idle_w), pw.p_peak_w)
                )
                if usable + _EPS_MHZ < cpu_res(act.host_id):
                    raise InvalidAction(
                        act,
                        f"cap {act.watts} W leaves {usable} MHz, below cpu "
                        f"reservations {cpu_res(act.host_id)} MHz",
                    )
                states[act.host_id] = dataclasses.replace(
                    st, power_cap_w=float(act.watts)
                )
            else:
                raise InvalidAction(
                    act, f"host {act.host_id} is {st.power_state.value}"
                )
        elif isinstance(act, MigrateVm):
            if act.vm_id not in snapshot.vm_specs:
                raise InvalidAction(act, f"unknown vm {act.vm_id}")
            if placement.get(act.vm_id) != act.src:
                raise InvalidAction(act, f"vm {act.vm_id} is not on {act.src}")
            if act.dst not in states:
                raise InvalidAction(act, f"unknown host {act.dst}")
            if act.dst == act.src:
                raise InvalidAction(act, "source and destination are the same host")
            if states[act.dst].power_state is not PowerState.ON:
                raise InvalidAction(act, f"destination {act.dst} is not powered on")
            dst_spec = snapshot.host_specs[act.dst]
            vm_spec = snapshot.vm_specs[act.vm_id]
            dst_cpu_cap = managed_capacity(
                dst_spec.power, states[act.dst].power_cap_w
            )
            if cpu_res(act.dst) + vm_spec.cpu.reservation > dst_cpu_cap + _EPS_MHZ:
                raise InvalidAction(
                    act, f"destination {act.dst} lacks cpu reservation room"
                )
            if (
                mem_res(act.dst) + vm_spec.mem.reservation
                > dst_spec.memory_mb + _EPS_MHZ
            ):
                raise InvalidAction(
                    act, f"destination {act.dst} lacks memory reservation room"
                )
            if (
                vm_spec.cpu.limit is not None
                and vm_spec.cpu.limit
                > vm_spec.vcpus * dst_spec.mhz_per_core + _EPS_MHZ
            ):
                raise InvalidAction(
                    act,
                    f"vm {act.vm_id} cpu limit exceeds its vcpu capacity on "
                    f"{act.dst}",
                )
            placement[act.vm_id] = act.dst
        elif isinstance(act, PowerOnHost):
            if act.host_id not in states:
                raise InvalidAction(act, f"unknown host {act.host_id}")
            if states[act.host_id].power_state is not PowerState.OFF:
                raise InvalidAction(act, f"host {act.host_id} is not powered off")
            pw = snapshot.host_specs[act.host_id].power
            states[act.host_id] = HostState(
                power_state=PowerState.ON, power_cap_w=pw.p_idle_w
            )
        elif isinstance(act, PowerOffHost):
            if act.host_id not in states:
                raise InvalidAction(act, f"unknown host {act.host_id}")
            if states[act.host_id].power_state is not PowerState.ON:
                raise InvalidAction(act, f"host {act.host_id} is not powered on")
            if residents(act.host_id):
                raise InvalidAction(act, f"host {act.host_id} still has residents")
            states[act.host_id] = HostState(
                power_state=PowerState.OFF, power_cap_w=0.0
            )
        else:
            raise InvalidAction(act, "unknown action kind")

        if budget_total() > snapshot.power_budget_w + _EPS_W:
            raise InvalidAction(
                act,
                f"cap total {budget_total()} W exceeds budget "
                f"{snapshot.power_budget_w} W",
            )
        if act.action_id != -1:
            seen_ids.add(act.action_id)

    return dataclasses.replace(
        snapshot, host_states=states, placement=placement
    )
