"""Shared builders for tests: compact host/VM/snapshot factories."""

from clustercap.cluster_core import (
    ClusterSnapshot,
    HostSpec,
    HostState,
    PowerState,
    ResourceControls,
    VmSpec,
)
from clustercap.power_model import PowerModelParams


def power(p_idle=0.0, p_peak=600.0, c_peak=6000.0, c_hyp=0.0, nameplate=None):
    return PowerModelParams(
        p_idle_w=p_idle,
        p_peak_w=p_peak,
        c_peak_mhz=c_peak,
        c_hypervisor_mhz=c_hyp,
        p_nameplate_w=nameplate,
    )


def toy_host(host_id, cores=2, mhz_per_core=3000.0, memory_mb=16384.0, pw=None):
    """Zero-idle 600 W / 6 GHz host unless overridden."""
    return HostSpec(
        host_id=host_id,
        cores=cores,
        mhz_per_core=mhz_per_core,
        memory_mb=memory_mb,
        power=pw or power(c_peak=cores * mhz_per_core),
    )


def ref_host(host_id, c_hyp=0.0, memory_mb=98304.0):
    """The reference rack host: 12 x 2.9 GHz, 96 GB, 160/320/400 W."""
    return HostSpec(
        host_id=host_id,
        cores=12,
        mhz_per_core=2900.0,
        memory_mb=memory_mb,
        power=power(
            p_idle=160.0, p_peak=320.0, c_peak=34800.0, c_hyp=c_hyp, nameplate=400.0
        ),
    )


def vm(
    vm_id,
    vcpus=1,
    memory_mb=1024.0,
    cpu_res=0.0,
    cpu_limit=None,
    cpu_shares=1000.0,
    mem_res=0.0,
    mem_limit=None,
    mem_shares=1000.0,
    trace=None,
):
    return VmSpec(
        vm_id=vm_id,
        vcpus=vcpus,
        memory_mb=memory_mb,
        cpu=ResourceControls(reservation=cpu_res, limit=cpu_limit, shares=cpu_shares),
        mem=ResourceControls(reservation=mem_res, limit=mem_limit, shares=mem_shares),
        trace=trace,
    )


def snapshot(hosts, vms, placement, caps, budget, off=(), rules=(), time_s=0.0):
    """Snapshot from host/VM lists; ``caps`` maps host id -> watts; ``off`` lists
    powered-off host ids (their cap is forced to 0)."""
    states = {}
    for h in hosts:
        if h.host_id in off:
            states[h.host_id] = HostState(power_state=PowerState.OFF, power_cap_w=0.0)
        else:
            states[h.host_id] = HostState(
                power_state=PowerState.ON, power_cap_w=caps[h.host_id]
            )
    return ClusterSnapshot(
        host_specs={h.host_id: h for h in hosts},
        host_states=states,
        vm_specs={v.vm_id: v for v in vms},
        placement=dict(placement),
        rules=tuple(rules),
        power_budget_w=budget,
        time_s=time_s,
    )
