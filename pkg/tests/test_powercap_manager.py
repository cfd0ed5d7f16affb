"""Cap planner: reserved-cap view, redivvy, cap balancing, power on/off support.

All expected values are hand arithmetic on the zero-idle 600 W / 6 GHz
two-host scenario or on the reference 160/320 W rack host, worked out before
the implementation (see the worked examples in the planner docstrings).
"""

import pytest
from helpers import ref_host, snapshot, toy_host, vm

from clustercap.cluster_core import (
    MigrateVm,
    PowerOffHost,
    PowerState,
    SetPowerCap,
    apply_actions,
    compute_entitlements,
    imbalance_metric,
)
from clustercap.powercap_manager import (
    FixedCapPowerHooks,
    InfeasibleRedivvy,
    RedistributingPowerHooks,
    balance_power_cap,
    get_flexible_power,
    reclaim_on_power_off,
    redistribute_for_power_on,
    redivvy_power_cap,
)


def caps_after(snap, actions):
    out = apply_actions(snap, actions)
    return {h: out.host_states[h].power_cap_w for h in out.host_specs}


# -------------------------------------------------------------- flexible power


def reserved_pair_snap():
    """A: 2.4 GHz reserved; B: 3.0 + 1.2 GHz reserved; caps 480/480; budget 960."""
    hosts = [toy_host("a"), toy_host("b")]
    vms = [
        vm("v1", cpu_res=2400.0),
        vm("v2", cpu_res=1200.0),
        vm("v3", cpu_res=3000.0),
    ]
    return snapshot(
        hosts,
        vms,
        {"v1": "a", "v2": "b", "v3": "b"},
        {"a": 480.0, "b": 480.0},
        960.0,
    )


def test_flexible_power_reserved_caps_and_unreserved_budget():
    flex = get_flexible_power(reserved_pair_snap())
    assert flex.reserved_cap_w["a"] == pytest.approx(240.0, abs=1e-9)
    assert flex.reserved_cap_w["b"] == pytest.approx(420.0, abs=1e-9)
    assert flex.unreserved_budget_w == pytest.approx(300.0, abs=1e-9)
    assert flex.snapshot.host_states["a"].power_cap_w == pytest.approx(240.0)
    assert flex.snapshot.host_states["b"].power_cap_w == pytest.approx(420.0)


def test_flexible_power_idle_floor_and_off_hosts():
    hosts = [ref_host("r1"), ref_host("r2")]
    snap = snapshot(hosts, [], {}, {"r1": 250.0}, 750.0, off=("r2",))
    flex = get_flexible_power(snap)
    assert flex.reserved_cap_w["r1"] == pytest.approx(160.0)  # empty host -> idle
    assert flex.reserved_cap_w["r2"] == 0.0
    assert flex.unreserved_budget_w == pytest.approx(590.0)


def test_flexible_power_required_cap_updates():
    flex = get_flexible_power(reserved_pair_snap())
    flex2 = flex.with_required_cap("a", 240.0).with_required_cap("b", 600.0)
    assert flex2.reserved_cap_w["b"] == 600.0
    assert flex2.unreserved_budget_w == pytest.approx(120.0)


# --------------------------------------------------------------------- redivvy


def test_redivvy_worked_example_reaches_360_600():
    snap = reserved_pair_snap()
    flex = (
        get_flexible_power(snap)
        .with_required_cap("a", 240.0)
        .with_required_cap("b", 600.0)
    )
    actions = redivvy_power_cap(snap, flex)
    # Decrease funds the increase.
    assert [type(a).__name__ for a in actions] == ["SetPowerCap", "SetPowerCap"]
    assert actions[0].watts < 480.0 < actions[1].watts
    assert actions[0].action_id in actions[1].prereq_ids
    got = caps_after(snap, actions)
    assert got["a"] == pytest.approx(360.0, abs=1e-6)
    assert got["b"] == pytest.approx(600.0, abs=1e-6)


def test_redivvy_unreserved_share_variant_reaches_360_600():
    # Caps (300, 300) under a 960 W budget: the 420 W requirement on b is
    # funded by a's slack plus unreserved budget, then the remaining free
    # budget is shared 240:420 with peak clamping - landing on (360, 600).
    hosts = [toy_host("a"), toy_host("b")]
    vms = [vm("v1", cpu_res=2400.0), vm("v2", cpu_res=1800.0)]
    snap = snapshot(
        hosts, vms, {"v1": "a", "v2": "b"}, {"a": 300.0, "b": 300.0}, 960.0
    )
    flex = (
        get_flexible_power(snap)
        .with_required_cap("a", 240.0)
        .with_required_cap("b", 420.0)
    )
    got = caps_after(snap, redivvy_power_cap(snap, flex))
    assert got["a"] == pytest.approx(360.0, abs=1e-6)
    assert got["b"] == pytest.approx(600.0, abs=1e-6)


def test_redivvy_no_change_no_actions():
    hosts = [toy_host("a"), toy_host("b")]
    snap = snapshot(hosts, [], {}, {"a": 480.0, "b": 480.0}, 960.0)
    flex = (
        get_flexible_power(snap)
        .with_required_cap("a", 480.0)
        .with_required_cap("b", 480.0)
    )
    assert redivvy_power_cap(snap, flex) == ()


def test_redivvy_three_host_conservation():
    hosts = [toy_host(h) for h in ("a", "b", "c")]
    snap = snapshot(
        hosts, [], {}, {"a": 400.0, "b": 400.0, "c": 400.0}, 1200.0
    )
    flex = get_flexible_power(snap)
    flex = (
        flex.with_required_cap("a", 460.0)
        .with_required_cap("b", 340.0)
        .with_required_cap("c", 340.0)
    )
    got = caps_after(snap, redivvy_power_cap(snap, flex))
    assert got["a"] == pytest.approx(460.0, abs=1e-6)
    assert got["b"] == pytest.approx(370.0, abs=1e-6)
    assert got["c"] == pytest.approx(370.0, abs=1e-6)
    assert sum(got.values()) == pytest.approx(1200.0, abs=1e-6)


def test_redivvy_free_budget_reshare_proportional_to_required():
    hosts = [toy_host("a"), toy_host("b")]
    snap = snapshot(hosts, [], {}, {"a": 300.0, "b": 480.0}, 960.0)
    flex = (
        get_flexible_power(snap)
        .with_required_cap("a", 420.0)
        .with_required_cap("b", 480.0)
    )
    got = caps_after(snap, redivvy_power_cap(snap, flex))
    # needed 120 funded by unreserved; leftover 60 shared 420:480.
    assert got["a"] == pytest.approx(448.0, abs=1e-6)
    assert got["b"] == pytest.approx(512.0, abs=1e-6)


def test_redivvy_infeasible_raise():
    hosts = [toy_host("a"), toy_host("b")]
    snap = snapshot(hosts, [], {}, {"a": 480.0, "b": 480.0}, 960.0)
    flex = (
        get_flexible_power(snap)
        .with_required_cap("a", 600.0)
        .with_required_cap("b", 480.0)
    )
    with pytest.raises(InfeasibleRedivvy):
        redivvy_power_cap(snap, flex)


def test_redivvy_literal_form_does_not_conserve():
    hosts = [toy_host(h) for h in ("a", "b", "c")]
    snap = snapshot(
        hosts, [], {}, {"a": 500.0, "b": 400.0, "c": 300.0}, 1200.0
    )
    flex = get_flexible_power(snap)
    flex = (
        flex.with_required_cap("a", 560.0)
        .with_required_cap("b", 370.0)
        .with_required_cap("c", 270.0)
    )
    amended = redivvy_power_cap(snap, flex)
    # All three hosts change: 560 + 370 + 270 conserves the 1200 W total.
    assert sum(a.watts for a in amended) == pytest.approx(1200.0, abs=1e-6)
    literal = redivvy_power_cap(snap, flex, literal_form=True)
    final = {a.host_id: a.watts for a in literal}
    total = sum(final.get(h, snap.host_states[h].power_cap_w) for h in ("a", "b", "c"))
    assert total != pytest.approx(1200.0, abs=1e-3)


# ----------------------------------------------------------- balance_power_cap


def balance_pair_snap():
    """A: one 1.8 GHz VM; B: three 1.2 GHz VMs; both capped 480 W."""
    hosts = [toy_host("a"), toy_host("b")]
    vms = [vm("va"), vm("vb1"), vm("vb2"), vm("vb3")]
    return snapshot(
        hosts,
        vms,
        {"va": "a", "vb1": "b", "vb2": "b", "vb3": "b"},
        {"a": 480.0, "b": 480.0},
        960.0,
    )


BAL_EST = {
    "va": (1800.0, 0.0),
    "vb1": (1200.0, 0.0),
    "vb2": (1200.0, 0.0),
    "vb3": (1200.0, 0.0),
}


def test_balance_moves_120w_from_light_to_loaded():
    snap = balance_pair_snap()
    actions, out = balance_power_cap(snap, BAL_EST, threshold=0.05)
    assert out.host_states["a"].power_cap_w == pytest.approx(360.0, abs=1e-6)
    assert out.host_states["b"].power_cap_w == pytest.approx(600.0, abs=1e-6)
    assert out.managed_capacity_of("a") == pytest.approx(3600.0, abs=1e-6)
    assert out.managed_capacity_of("b") == pytest.approx(6000.0, abs=1e-6)
    ents = compute_entitlements(out, BAL_EST)
    assert ents.host_normalized["a"] == pytest.approx(0.5, abs=1e-9)
    assert ents.host_normalized["b"] == pytest.approx(0.6, abs=1e-9)
    # Net actions: one decrease, one increase, decrease first.
    assert len(actions) == 2
    assert actions[0].watts == pytest.approx(360.0, abs=1e-6)
    assert actions[0].action_id in actions[1].prereq_ids
    assert caps_after(snap, actions) == {
        "a": pytest.approx(360.0, abs=1e-6),
        "b": pytest.approx(600.0, abs=1e-6),
    }


def test_balance_balanced_cluster_no_actions():
    snap = balance_pair_snap()
    est = {k: (1200.0, 0.0) for k in ("va", "vb1", "vb2", "vb3")}
    est["va"] = (3600.0, 0.0)  # both hosts entitled 3.6 GHz
    actions, out = balance_power_cap(snap, est, threshold=0.05)
    assert actions == ()
    assert out == snap


def test_balance_stops_when_receiver_at_peak():
    hosts = [toy_host("a"), toy_host("b")]
    vms = [vm("va"), vm("vb")]
    snap = snapshot(
        hosts, vms, {"va": "a", "vb": "b"}, {"a": 600.0, "b": 300.0}, 900.0
    )
    actions, out = balance_power_cap(
        snap, {"va": (3600.0, 0.0), "vb": (600.0, 0.0)}, threshold=0.05
    )
    assert actions == ()
    assert out == snap


def test_balance_drains_empty_donor_until_receiver_peaks():
    hosts = [toy_host("a"), toy_host("b")]
    vms = [vm("va")]
    snap = snapshot(hosts, vms, {"va": "a"}, {"a": 300.0, "b": 600.0}, 900.0)
    actions, out = balance_power_cap(snap, {"va": (2700.0, 0.0)}, threshold=0.05)
    # a takes exactly what lifts it to the mean-entitlement capacity (its
    # peak), leaving residual imbalance for the migration stage.
    assert out.host_states["a"].power_cap_w == pytest.approx(600.0, abs=1e-6)
    assert out.host_states["b"].power_cap_w == pytest.approx(300.0, abs=1e-6)
    assert len(actions) == 2


def test_balance_conserves_watts_and_reduces_imbalance():
    hosts = [toy_host("a"), toy_host("b"), toy_host("c")]
    vms = [vm("v1"), vm("v2"), vm("v3"), vm("v4")]
    snap = snapshot(
        hosts,
        vms,
        {"v1": "a", "v2": "a", "v3": "b", "v4": "c"},
        {"a": 300.0, "b": 360.0, "c": 300.0},
        960.0,
    )
    est = {
        "v1": (1500.0, 0.0),
        "v2": (1200.0, 0.0),
        "v3": (900.0, 0.0),
        "v4": (300.0, 0.0),
    }
    before = imbalance_metric(snap, compute_entitlements(snap, est))
    actions, out = balance_power_cap(snap, est, threshold=0.05)
    after = imbalance_metric(out, compute_entitlements(out, est))
    assert after < before
    total_before = sum(s.power_cap_w for s in snap.host_states.values())
    total_after = sum(s.power_cap_w for s in out.host_states.values())
    assert total_after == pytest.approx(total_before, abs=1e-6)
    for h, st in out.host_states.items():
        pw = out.host_specs[h].power
        assert pw.p_idle_w - 1e-9 <= st.power_cap_w <= pw.p_peak_w + 1e-9


# ------------------------------------------------------ power on/off support


def test_power_on_redistribution_worked_example():
    hosts = [toy_host("a"), toy_host("b")]
    snap = snapshot(hosts, [], {}, {"a": 600.0}, 960.0, off=("b",))
    actions, achievable = redistribute_for_power_on(
        snap, "b", high_threshold=0.81, window_cpu_mhz={"a": 3888.0}
    )
    assert achievable == pytest.approx(480.0, abs=1e-6)
    assert len(actions) == 1
    assert actions[0].host_id == "a"
    assert actions[0].watts == pytest.approx(480.0, abs=1e-6)


def test_power_on_free_budget_covers_peak():
    hosts = [toy_host("a"), toy_host("b")]
    snap = snapshot(hosts, [], {}, {"a": 600.0}, 2000.0, off=("b",))
    actions, achievable = redistribute_for_power_on(
        snap, "b", high_threshold=0.81, window_cpu_mhz={"a": 3888.0}
    )
    assert actions == ()
    assert achievable == pytest.approx(600.0)


def test_power_on_donors_pinned_at_high_threshold():
    hosts = [toy_host("a"), toy_host("b")]
    snap = snapshot(hosts, [], {}, {"a": 600.0}, 960.0, off=("b",))
    actions, achievable = redistribute_for_power_on(
        snap, "b", high_threshold=0.81, window_cpu_mhz={"a": 4860.0}
    )
    assert actions == ()
    assert achievable == pytest.approx(360.0)  # free budget only


def test_reclaim_after_power_off_shares_to_peak():
    hosts = [ref_host("h1"), ref_host("h2"), ref_host("h3")]
    snap = snapshot(
        hosts, [], {}, {"h1": 250.0, "h2": 250.0, "h3": 250.0}, 750.0
    )
    actions = reclaim_on_power_off(snap, "h3")
    kinds = [(type(a).__name__, getattr(a, "host_id", None)) for a in actions]
    assert kinds[0] == ("SetPowerCap", "h3")
    assert actions[0].watts == 0.0
    off_first = apply_actions(snap, [PowerOffHost(host_id="h3")])
    got = caps_after(off_first, actions)
    assert got["h1"] == pytest.approx(320.0, abs=1e-6)
    assert got["h2"] == pytest.approx(320.0, abs=1e-6)
    assert got["h3"] == 0.0
    # 110 W left unreserved.
    assert 750.0 - sum(got.values()) == pytest.approx(110.0, abs=1e-6)


def test_reclaim_single_host_everything_unreserved():
    snap = snapshot([toy_host("a")], [], {}, {"a": 480.0}, 600.0)
    actions = reclaim_on_power_off(snap, "a")
    assert len(actions) == 1
    assert actions[0].watts == 0.0


def test_reclaim_remaining_at_peak_leaves_budget_unreserved():
    hosts = [toy_host("a"), toy_host("b")]
    snap = snapshot(hosts, [], {}, {"a": 600.0, "b": 480.0}, 1080.0)
    actions = reclaim_on_power_off(snap, "b")
    assert len(actions) == 1  # only the zero-set; a is already at peak


# ------------------------------------------------------------------- hooks


def test_fixed_cap_hooks_grant_min_of_cap_and_free_budget():
    hosts = [ref_host("h1"), ref_host("h2"), ref_host("h3")]
    snap = snapshot(
        hosts, [], {}, {"h1": 250.0, "h2": 250.0}, 750.0, off=("h3",)
    )
    hooks = FixedCapPowerHooks(cap_w=250.0)
    actions, achievable = hooks.power_on_support(
        snap, "h3", high_threshold=0.81, window_cpu_mhz={}
    )
    assert actions == ()
    assert achievable == pytest.approx(250.0)
    assert hooks.power_off_reclaim(snap, "h1") == ()


def test_redistributing_hooks_delegate():
    hosts = [toy_host("a"), toy_host("b")]
    snap = snapshot(hosts, [], {}, {"a": 600.0}, 960.0, off=("b",))
    hooks = RedistributingPowerHooks()
    actions, achievable = hooks.power_on_support(
        snap, "b", high_threshold=0.81, window_cpu_mhz={"a": 3888.0}
    )
    assert achievable == pytest.approx(480.0, abs=1e-6)
    assert len(actions) == 1
