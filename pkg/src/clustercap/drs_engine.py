"""Resource-manager planning passes: rule correction, balancing, and DPM.

Three planners, all pure snapshot-in/plan-out:

* ``correct_constraints`` repairs placement-rule violations (affinity,
  anti-affinity, host pinning) with first-fit migrations over hosts ordered
  by ascending normalized entitlement.  When given a flexible-power view it
  sizes destinations by peak-capacity headroom and records the cap each
  destination will need - the VM's reservations plus the demand headroom the
  host had before the move - so a later budget re-division can fund the move;
  without one it is confined to current capped capacities.
* ``balance_entitlements`` greedily migrates VMs to reduce the population
  stddev of hosts' normalized entitlements, one best move at a time, with an
  optional cost/benefit filter: a move must promise at least ``risk_factor``
  times its modeled migration CPU cost in entitlement-imbalance relief
  (stddev reduction x total managed MHz x remaining seconds in the pass).
* ``dpm_evaluate`` proposes host power state changes from windowed demand:
  any host above the high utilization threshold recruits the standby host
  that can be granted the most capacity (donor cap cuts, power-on, then the
  granted cap); when every host is below the low threshold the least loaded
  host is evacuated and powered off, with the freed budget re-shared through
  the supplied power hooks.

Worked example used in the tests: two zero-idle 600 W / 6 GHz hosts under a
960 W budget, caps (480, 480).  An affinity rule pulls a 1.2 GHz-reservation
VM onto the host already holding 3 GHz of reservations; that destination must
keep its pre-move 1.8 GHz headroom, so its required cap is the full 600 W and
the source's floor drops to 240 W.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from clustercap._kernels import pstdev, water_fill
from clustercap.cluster_core import (
    Action,
    ActionPlan,
    ClusterSnapshot,
    HostSpec,
    InvalidAction,
    MigrateVm,
    PowerOffHost,
    PowerOnHost,
    PowerState,
    Rule,
    RuleKind,
    SetPowerCap,
    VmSpec,
    apply_actions,
    compute_entitlements,
)
from clustercap.power_model import cap_for_capacity, managed_capacity
from clustercap.powercap_manager import FlexiblePower, PowerHooks

__all__ = [
    "MigrationCostModel",
    "DrsConfig",
    "DpmConfig",
    "CorrectionResult",
    "find_rule_violations",
    "correct_constraints",
    "balance_entitlements",
    "dpm_evaluate",
]

_EPS_W = 1e-6
_EPS_MHZ = 1e-6
_EPS_SD = 1e-12


# ------------------------------------------------------------------- configs


@dataclass(frozen=True)
class MigrationCostModel:
    """Live-migration cost: memory copied at a fixed bandwidth while both
    endpoints burn a fraction of one core on the transfer."""

    bandwidth_mb_per_s: float = 1280.0
    cpu_overhead_fraction: float = 0.10

    def __post_init__(self) -> None:
        if self.bandwidth_mb_per_s <= 0.0:
            raise ValueError("migration bandwidth must be positive")
        if self.cpu_overhead_fraction < 0.0:
            raise ValueError("migration cpu overhead must be >= 0")

    def duration_s(self, memory_mb: float) -> float:
        return memory_mb / self.bandwidth_mb_per_s

    def cpu_cost_mhz_s(self, vm: VmSpec, src: HostSpec, dst: HostSpec) -> float:
        overhead = self.cpu_overhead_fraction * (src.mhz_per_core + dst.mhz_per_core)
        return overhead * self.duration_s(vm.memory_mb)


@dataclass(frozen=True)
class DrsConfig:
    invocation_period_s: float = 300.0
    imbalance_threshold: float = 0.05
    max_moves_per_pass: int = 8
    costbenefit_enabled: bool = True
    risk_factor: float = 1.0
    migration_cost_model: MigrationCostModel = field(
        default_factory=MigrationCostModel
    )

    def __post_init__(self) -> None:
        if self.invocation_period_s <= 0.0:
            raise ValueError("invocation period must be positive")
        if self.imbalance_threshold < 0.0:
            raise ValueError("imbalance threshold must be >= 0")
        if self.max_moves_per_pass < 1:
            raise ValueError("max moves per pass must be >= 1")
        if self.risk_factor < 0.0:
            raise ValueError("risk factor must be >= 0")


@dataclass(frozen=True)
class DpmConfig:
    high_utilization_threshold: float = 0.81
    low_utilization_threshold: float = 0.45
    evaluation_window_s: float = 900.0

    def __post_init__(self) -> None:
        if not 0.0 < self.low_utilization_threshold < self.high_utilization_threshold:
            raise ValueError("need 0 < low threshold < high threshold")
        if self.high_utilization_threshold > 1.0:
            raise ValueError("high threshold must be <= 1")
        if self.evaluation_window_s <= 0.0:
            raise ValueError("evaluation window must be positive")


# ------------------------------------------------------------ rule violations


def _rule_violated(snapshot: ClusterSnapshot, rule: Rule) -> bool:
    placed = [v for v in rule.members if v in snapshot.placement]
    if rule.kind is RuleKind.VM_VM_AFFINITY:
        return len({snapshot.placement[v] for v in placed}) > 1
    if rule.kind is RuleKind.VM_VM_ANTI_AFFINITY:
        hosts = [snapshot.placement[v] for v in placed]
        return len(hosts) != len(set(hosts))
    return any(snapshot.placement[v] not in rule.hosts for v in placed)


def find_rule_violations(snapshot: ClusterSnapshot) -> tuple[Rule, ...]:
    """Violated rules, in the snapshot's rule order."""
    return tuple(r for r in snapshot.rules if _rule_violated(snapshot, r))


# ------------------------------------------------------ constraint correction


@dataclass(frozen=True)
class CorrectionResult:
    """Migrations that repair rule violations (unwired, dependency-free),
    the flexible-power view updated with the destinations' required caps,
    and the rules no migration set could repair."""

    migrations: tuple[MigrateVm, ...]
    flexible: FlexiblePower | None
    unresolved: tuple[Rule, ...]


def _move_valid(snapshot: ClusterSnapshot, vm_id: str, dst: str) -> bool:
    """Mirror of the migration checks ``apply_actions`` enforces."""
    if snapshot.host_states[dst].power_state is not PowerState.ON:
        return False
    if snapshot.placement.get(vm_id) == dst:
        return False
    vm_spec = snapshot.vm_specs[vm_id]
    dst_spec = snapshot.host_specs[dst]
    dst_cap = managed_capacity(dst_spec.power, snapshot.host_states[dst].power_cap_w)
    if snapshot.cpu_reservation_mhz(dst) + vm_spec.cpu.reservation > dst_cap + _EPS_MHZ:
        return False
    if (
        snapshot.mem_reservation_mb(dst) + vm_spec.mem.reservation
        > dst_spec.memory_mb + _EPS_MHZ
    ):
        return False
    if (
        vm_spec.cpu.limit is not None
        and vm_spec.cpu.limit > vm_spec.vcpus * dst_spec.mhz_per_core + _EPS_MHZ
    ):
        return False
    return True


def _correction_fits(
    snapshot: ClusterSnapshot,
    flexible: FlexiblePower | None,
    vm_id: str,
    dst: str,
) -> bool:
    """Like _move_valid, but with cap headroom exposed when flexible power
    is available: the destination's usable capacity is its peak."""
    if flexible is None:
        return _move_valid(snapshot, vm_id, dst)
    if snapshot.host_states[dst].power_state is not PowerState.ON:
        return False
    vm_spec = snapshot.vm_specs[vm_id]
    dst_spec = snapshot.host_specs[dst]
    cpu_room = max(0.0, dst_spec.power.c_peak_mhz - dst_spec.power.c_hypervisor_mhz)
    if snapshot.cpu_reservation_mhz(dst) + vm_spec.cpu.reservation > cpu_room + _EPS_MHZ:
        return False
    if (
        snapshot.mem_reservation_mb(dst) + vm_spec.mem.reservation
        > dst_spec.memory_mb + _EPS_MHZ
    ):
        return False
    if (
        vm_spec.cpu.limit is not None
        and vm_spec.cpu.limit > vm_spec.vcpus * dst_spec.mhz_per_core + _EPS_MHZ
    ):
        return False
    return True


def _required_cap_w(
    snapshot: ClusterSnapshot, host_id: str, headroom0: Mapping[str, float]
) -> float:
    """Cap that covers the host's (post-move) reservations plus the demand
    headroom it had before correction started, clamped at peak capacity."""
    spec = snapshot.host_specs[host_id]
    raw = min(
        spec.power.c_peak_mhz,
        snapshot.cpu_reservation_mhz(host_id)
        + headroom0.get(host_id, 0.0)
        + spec.power.c_hypervisor_mhz,
    )
    return cap_for_capacity(spec.power, raw)


def _commit_move(
    scratch: ClusterSnapshot,
    flex: FlexiblePower | None,
    vm_id: str,
    dst: str,
    headroom0: Mapping[str, float],
    raised: frozenset[str],
) -> tuple[ClusterSnapshot, FlexiblePower | None, frozenset[str]]:
    src = scratch.placement[vm_id]
    scratch = scratch.with_vm_placed(vm_id, dst)
    if flex is not None:
        flex = flex.with_required_cap(dst, _required_cap_w(scratch, dst, headroom0))
        if src in raised:
            # The source itself carries a correction-imposed requirement;
            # shrink it consistently with its reduced residency.
            flex = flex.with_required_cap(src, _required_cap_w(scratch, src, headroom0))
        else:
            flex = flex.with_required_cap(src, scratch.reservation_floor_cap_w(src))
    return scratch, flex, raised | {dst}


def _entitlement_order(
    snapshot: ClusterSnapshot, estimates: Mapping[str, tuple[float, float]]
) -> list[str]:
    norm = compute_entitlements(snapshot, estimates).host_normalized
    return sorted(norm, key=lambda h: (norm[h], h))


def _plan_rule_fix(
    scratch: ClusterSnapshot,
    flex: FlexiblePower | None,
    estimates: Mapping[str, tuple[float, float]],
    rule: Rule,
    headroom0: Mapping[str, float],
    raised: frozenset[str],
):
    """Migrations repairing one rule, or None if it cannot be repaired.

    Returns (moves, scratch, flex, raised) on success; all four reflect the
    committed moves.  Nothing is committed on failure.
    """
    order = _entitlement_order(scratch, estimates)

    def try_move(local, vm_id, dst):
        l_scratch, l_flex, l_raised = local
        if not _correction_fits(l_scratch, l_flex, vm_id, dst):
            return None
        src = l_scratch.placement[vm_id]
        committed = _commit_move(l_scratch, l_flex, vm_id, dst, headroom0, l_raised)
        if committed[1] is not None and committed[1].unreserved_budget_w < -_EPS_W:
            return None
        return committed, MigrateVm(vm_id=vm_id, src=src, dst=dst)

    if rule.kind is RuleKind.VM_VM_AFFINITY:
        placed = [v for v in rule.members if v in scratch.placement]
        for target in order:
            movers = sorted(v for v in placed if scratch.placement[v] != target)
            if not movers:
                continue
            local = (scratch, flex, raised)
            planned: list[MigrateVm] = []
            for v in movers:
                step = try_move(local, v, target)
                if step is None:
                    planned = []
                    break
                local, move = step
                planned.append(move)
            if planned:
                return planned, *local
        return None

    if rule.kind is RuleKind.VM_VM_ANTI_AFFINITY:
        local = (scratch, flex, raised)
        planned = []
        while _rule_violated(local[0], rule):
            by_host: dict[str, list[str]] = {}
            for v in rule.members:
                if v in local[0].placement:
                    by_host.setdefault(local[0].placement[v], []).append(v)
            host, crowd = sorted(
                (h, vs) for h, vs in by_host.items() if len(vs) > 1
            )[0]
            mover = min(
                crowd, key=lambda v: (local[0].vm_specs[v].cpu.reservation, v)
            )
            member_hosts = set(by_host)
            step = None
            for dst in order:
                if dst == host or dst in member_hosts:
                    continue
                step = try_move(local, mover, dst)
                if step is not None:
                    break
            if step is None:
                return None
            local, move = step
            planned.append(move)
        return planned, *local

    # Host pin: move every stray member onto an allowed host.
    local = (scratch, flex, raised)
    planned = []
    allowed = [d for d in order if d in rule.hosts]
    for v in sorted(rule.members):
        if v not in local[0].placement or local[0].placement[v] in rule.hosts:
            continue
        step = None
        for dst in allowed:
            step = try_move(local, v, dst)
            if step is not None:
                break
        if step is None:
            return None
        local, move = step
        planned.append(move)
    return planned, *local


def correct_constraints(
    snapshot: ClusterSnapshot,
    flexible: FlexiblePower | None,
    estimates: Mapping[str, tuple[float, float]],
) -> CorrectionResult:
    """Plan migrations that repair rule violations, rule by rule.

    Destinations are found first-fit over hosts in ascending normalized
    entitlement order.  With ``flexible`` given, fits are judged against
    peak-capacity headroom and each receiving host's required cap (its new
    reservations plus its pre-correction demand headroom) is recorded on
    the returned view for the budget re-division to fund; sources fall back
    to their reservation floors.  With ``flexible=None`` fits are confined
    to current capped capacities and caps are left alone.

    Rules that cannot be repaired are reported in ``unresolved`` and
    contribute no migrations at all.
    """
    scratch = snapshot
    flex = flexible
    headroom0 = {
        h: max(
            0.0,
            snapshot.managed_capacity_of(h) - snapshot.cpu_reservation_mhz(h),
        )
        for h in snapshot.powered_on_host_ids()
    }
    raised: frozenset[str] = frozenset()
    migrations: list[MigrateVm] = []
    unresolved: list[Rule] = []
    for rule in snapshot.rules:
        if not _rule_violated(scratch, rule):
            continue
        fix = _plan_rule_fix(scratch, flex, estimates, rule, headroom0, raised)
        if fix is None:
            unresolved.append(rule)
            continue
        moves, scratch, flex, raised = fix
        migrations.extend(moves)
    return CorrectionResult(
        migrations=tuple(migrations),
        flexible=flex,
        unresolved=tuple(unresolved),
    )


# -------------------------------------------------------- balance entitlements


def _host_cpu_norm(
    snapshot: ClusterSnapshot,
    estimates: Mapping[str, tuple[float, float]],
    host_id: str,
    residents: Iterable[str],
) -> float | None:
    """Normalized cpu entitlement for a hypothetical resident set (matches
    compute_entitlements); None when reservations overcommit the host."""
    capacity = snapshot.managed_capacity_of(host_id)
    floors: list[float] = []
    ceils: list[float] = []
    weights: list[float] = []
    for v in residents:
        spec = snapshot.vm_specs[v]
        floors.append(spec.cpu.reservation)
        ceils.append(
            max(spec.cpu.reservation, min(spec.cpu.effective_limit, estimates[v][0]))
        )
        weights.append(spec.cpu.shares)
    if sum(floors) > capacity + _EPS_MHZ:
        return None
    entitled = sum(water_fill(capacity, floors, ceils, weights))
    if capacity > _EPS_MHZ:
        return entitled / capacity
    return 1.0 if sum(ceils) > _EPS_MHZ else 0.0


def _violation_keys(snapshot: ClusterSnapshot) -> frozenset[int]:
    return frozenset(
        i for i, r in enumerate(snapshot.rules) if _rule_violated(snapshot, r)
    )


def balance_entitlements(
    snapshot: ClusterSnapshot,
    estimates: Mapping[str, tuple[float, float]],
    config: DrsConfig,
    *,
    remaining_period_s: float | None = None,
) -> tuple[MigrateVm, ...]:
    """Greedy entitlement balancing: repeatedly apply the single migration
    that most reduces the imbalance metric.

    A candidate move must be executable (reservation and limit fits at the
    destination's current cap), must not violate any rule that currently
    holds, and - when the cost/benefit filter is on - must promise at least
    ``risk_factor`` times its migration cost in imbalance relief, valued as
    stddev reduction x total managed capacity x the remaining seconds the new
    placement will be enjoyed (defaults to the invocation period).  Stops at
    the threshold, at ``max_moves_per_pass``, or when no candidate passes.

    Returned migrations are unwired (no ids or prerequisite edges) and are
    ordered; each assumes the previous ones have landed.
    """
    remaining = (
        config.invocation_period_s if remaining_period_s is None else remaining_period_s
    )
    model = config.migration_cost_model
    scratch = snapshot
    hosts = scratch.powered_on_host_ids()
    if len(hosts) < 2:
        return ()
    violations_ok = _violation_keys(scratch)
    moves: list[MigrateVm] = []
    while len(moves) < config.max_moves_per_pass:
        ents = compute_entitlements(scratch, estimates)
        norm = dict(ents.host_normalized)
        sd = pstdev([norm[h] for h in hosts])
        if sd <= config.imbalance_threshold:
            break
        total_managed = sum(ents.host_cpu_capacity.values())
        residents = {h: list(scratch.residents_of(h)) for h in hosts}
        best: tuple[float, str, str, str] | None = None
        for vm_id in sorted(scratch.placement):
            src = scratch.placement[vm_id]
            if src not in norm:
                continue
            for dst in hosts:
                if dst == src or not _move_valid(scratch, vm_id, dst):
                    continue
                moved = scratch.with_vm_placed(vm_id, dst)
                if _violation_keys(moved) - violations_ok:
                    continue
                src_norm = _host_cpu_norm(
                    scratch,
                    estimates,
                    src,
                    (v for v in residents[src] if v != vm_id),
                )
                dst_norm = _host_cpu_norm(
                    scratch, estimates, dst, residents[dst] + [vm_id]
                )
                if src_norm is None or dst_norm is None:
                    continue
                trial = dict(norm)
                trial[src] = src_norm
                trial[dst] = dst_norm
                sd_after = pstdev([trial[h] for h in hosts])
                if sd_after >= sd - _EPS_SD:
                    continue
                if config.costbenefit_enabled:
                    cost = model.cpu_cost_mhz_s(
                        scratch.vm_specs[vm_id],
                        scratch.host_specs[src],
                        scratch.host_specs[dst],
                    )
                    benefit = (sd - sd_after) * total_managed * remaining
                    if benefit < config.risk_factor * cost - 1e-9:
                        continue
                if best is None or sd_after < best[0] - _EPS_SD:
                    best = (sd_after, vm_id, src, dst)
        if best is None:
            break
        _, vm_id, src, dst = best
        moves.append(MigrateVm(vm_id=vm_id, src=src, dst=dst))
        scratch = scratch.with_vm_placed(vm_id, dst)
    return tuple(moves)


# ------------------------------------------------------------------------ dpm


def _graft(
    plan: ActionPlan,
    actions: Sequence[Action],
    extra_after: Sequence[Action] = (),
) -> list[Action]:
    """Re-add externally wired actions to ``plan``: ids are reassigned, their
    internal prerequisite edges preserved, and ``extra_after`` edges added."""
    id_map: dict[int, Action] = {}
    grafted: list[Action] = []
    for a in actions:
        prereqs: list[Action] = [id_map[p] for p in a.prereq_ids if p in id_map]
        bare = dataclasses.replace(a, action_id=-1, prereq_ids=())
        wired = plan.add(bare, after=list(prereqs) + list(extra_after))
        if a.action_id != -1:
            id_map[a.action_id] = wired
        grafted.append(wired)
    return grafted


def dpm_evaluate(
    snapshot: ClusterSnapshot,
    vm_window_cpu_mhz: Mapping[str, float],
    vm_window_mem_mb: Mapping[str, float],
    config: DpmConfig,
    hooks: PowerHooks,
) -> tuple[Action, ...]:
    """Propose power state changes from windowed per-VM demand.

    If any powered-on host's cpu or memory utilization exceeds the high
    threshold, the standby host that can be granted the most capacity is
    powered on (donor cap cuts, then power-on, then the granted cap).  If
    every host sits below the low threshold on both resources, the least
    utilized host is evacuated and powered off, its budget reclaimed through
    the hooks - at most one power-off per call, and never one that would
    push any remaining host above the high threshold or strand reservations.
    Returns a wired, dependency-ordered plan (possibly empty).
    """
    on_hosts = snapshot.powered_on_host_ids()
    if not on_hosts:
        return ()
    host_cpu = {
        h: sum(vm_window_cpu_mhz.get(v, 0.0) for v in snapshot.residents_of(h))
        for h in on_hosts
    }
    host_mem = {
        h: sum(vm_window_mem_mb.get(v, 0.0) for v in snapshot.residents_of(h))
        for h in on_hosts
    }

    def cpu_util(h: str, snap: ClusterSnapshot, load: Mapping[str, float]) -> float:
        cap = snap.managed_capacity_of(h)
        if cap <= _EPS_MHZ:
            return float("inf") if load.get(h, 0.0) > _EPS_MHZ else 0.0
        return load.get(h, 0.0) / cap

    def mem_util(h: str, load: Mapping[str, float]) -> float:
        return load.get(h, 0.0) / snapshot.host_specs[h].memory_mb

    high = config.high_utilization_threshold
    low = config.low_utilization_threshold
    if any(
        cpu_util(h, snapshot, host_cpu) > high or mem_util(h, host_mem) > high
        for h in on_hosts
    ):
        return _plan_power_on(snapshot, host_cpu, config, hooks)
    if len(on_hosts) >= 2 and all(
        cpu_util(h, snapshot, host_cpu) < low and mem_util(h, host_mem) < low
        for h in on_hosts
    ):
        return _plan_power_off(
            snapshot, vm_window_cpu_mhz, vm_window_mem_mb, host_cpu, host_mem,
            config, hooks,
        )
    return ()


def _plan_power_on(
    snapshot: ClusterSnapshot,
    host_cpu: Mapping[str, float],
    config: DpmConfig,
    hooks: PowerHooks,
) -> tuple[Action, ...]:
    standby = sorted(
        h
        for h, st in snapshot.host_states.items()
        if st.power_state is PowerState.OFF
    )
    best: tuple[float, str, Sequence[Action], float] | None = None
    for h in standby:
        donor_actions, achievable_w = hooks.power_on_support(
            snapshot,
            h,
            high_threshold=config.high_utilization_threshold,
            window_cpu_mhz=host_cpu,
        )
        capacity = managed_capacity(snapshot.host_specs[h].power, achievable_w)
        if capacity <= _EPS_MHZ:
            continue
        if best is None or capacity > best[0] + _EPS_MHZ:
            best = (capacity, h, donor_actions, achievable_w)
    if best is None:
        return ()
    _, host, donor_actions, achievable_w = best
    plan = ActionPlan()
    donors = _graft(plan, donor_actions)
    on = plan.add(PowerOnHost(host_id=host), after=donors)
    plan.add(SetPowerCap(host_id=host, watts=achievable_w), after=[on])
    try:
        apply_actions(snapshot, plan.actions)
    except InvalidAction:
        return ()
    return plan.actions


def _plan_power_off(
    snapshot: ClusterSnapshot,
    vm_window_cpu_mhz: Mapping[str, float],
    vm_window_mem_mb: Mapping[str, float],
    host_cpu: Mapping[str, float],
    host_mem: Mapping[str, float],
    config: DpmConfig,
    hooks: PowerHooks,
) -> tuple[Action, ...]:
    on_hosts = snapshot.powered_on_host_ids()

    def load_util(h: str, cpu: Mapping[str, float], mem: Mapping[str, float]) -> float:
        cap = snapshot.managed_capacity_of(h)
        if cap <= _EPS_MHZ:
            c = float("inf") if cpu.get(h, 0.0) > _EPS_MHZ else 0.0
        else:
            c = cpu.get(h, 0.0) / cap
        return max(c, mem.get(h, 0.0) / snapshot.host_specs[h].memory_mb)

    victim = min(on_hosts, key=lambda h: (load_util(h, host_cpu, host_mem), h))
    others = [h for h in on_hosts if h != victim]
    if not others:
        return ()

    cpu_load = dict(host_cpu)
    mem_load = dict(host_mem)
    scratch = snapshot
    plan = ActionPlan()
    move_actions: list[Action] = []
    for v in snapshot.residents_of(victim):
        order = sorted(others, key=lambda h: (load_util(h, cpu_load, mem_load), h))
        dst = next((d for d in order if _move_valid(scratch, v, d)), None)
        if dst is None:
            return ()
        move_actions.append(
            plan.add(MigrateVm(vm_id=v, src=victim, dst=dst))
        )
        scratch = scratch.with_vm_placed(v, dst)
        cpu_load[dst] = cpu_load.get(dst, 0.0) + vm_window_cpu_mhz.get(v, 0.0)
        mem_load[dst] = mem_load.get(dst, 0.0) + vm_window_mem_mb.get(v, 0.0)

    off = plan.add(PowerOffHost(host_id=victim), after=move_actions)
    _graft(plan, hooks.power_off_reclaim(scratch, victim), extra_after=[off])
    try:
        final = apply_actions(snapshot, plan.actions)
    except InvalidAction:
        return ()
    # The consolidation must leave every survivor under the high threshold
    # at its (possibly reclaimed) cap.
    high = config.high_utilization_threshold
    for h in final.powered_on_host_ids():
        cap = final.managed_capacity_of(h)
        cpu = cpu_load.get(h, 0.0)
        over_cpu = cpu > _EPS_MHZ if cap <= _EPS_MHZ else cpu / cap > high + 1e-9
        over_mem = (
            mem_load.get(h, 0.0) / final.host_specs[h].memory_mb > high + 1e-9
        )
        if over_cpu or over_mem:
            return ()
    return plan.actions
