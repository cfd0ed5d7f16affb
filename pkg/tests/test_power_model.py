"""Power model: cap<->capacity mapping, draw estimation, rack planning.

Expected values are hand arithmetic on the linear model for the reference
host (12 cores x 2.9 GHz = 34800 MHz, 96 GB, idle 160 W, peak 320 W,
nameplate 400 W) and were computed before the implementation.
"""

import math

import pytest

from clustercap.power_model import (
    PowerModelParams,
    cap_for_capacity,
    capped_capacity,
    managed_capacity,
    plan_rack_deployment,
    power_consumed,
)

HOST = PowerModelParams(
    p_idle_w=160.0, p_peak_w=320.0, c_peak_mhz=34800.0, p_nameplate_w=400.0
)
HOST_MEM_MB = 98304.0

# Zero-idle toy host used by the worked redistribution examples elsewhere.
TOY = PowerModelParams(p_idle_w=0.0, p_peak_w=600.0, c_peak_mhz=6000.0)


def test_capped_capacity_reference_points():
    assert capped_capacity(HOST, 250.0) == pytest.approx(19575.0, abs=1e-9)
    assert capped_capacity(HOST, 285.0) == pytest.approx(27187.5, abs=1e-9)
    assert capped_capacity(HOST, 320.0) == pytest.approx(34800.0, abs=1e-9)
    assert capped_capacity(HOST, 160.0) == 0.0


def test_capped_capacity_domain():
    with pytest.raises(ValueError):
        capped_capacity(HOST, 159.9)
    with pytest.raises(ValueError):
        capped_capacity(HOST, 320.1)


def test_managed_capacity_subtracts_hypervisor_overhead():
    withh = PowerModelParams(
        p_idle_w=160.0, p_peak_w=320.0, c_peak_mhz=34800.0, c_hypervisor_mhz=400.0
    )
    assert managed_capacity(HOST, 250.0) == pytest.approx(19575.0, abs=1e-9)
    assert managed_capacity(withh, 250.0) == pytest.approx(19175.0, abs=1e-9)
    # Overhead never pushes the result negative.
    assert managed_capacity(withh, 160.0) == 0.0


def test_cap_for_capacity_reference_points():
    assert cap_for_capacity(TOY, 4800.0) == pytest.approx(480.0, abs=1e-9)
    assert cap_for_capacity(HOST, 34800.0) == pytest.approx(320.0, abs=1e-9)
    assert cap_for_capacity(HOST, 17400.0) == pytest.approx(240.0, abs=1e-9)
    assert cap_for_capacity(HOST, 0.0) == pytest.approx(160.0, abs=1e-9)


def test_cap_for_capacity_domain():
    with pytest.raises(ValueError):
        cap_for_capacity(HOST, -1.0)
    with pytest.raises(ValueError):
        cap_for_capacity(HOST, 34800.1)


def test_round_trip_within_tolerance():
    for frac in range(0, 101):
        c = HOST.c_peak_mhz * frac / 100.0
        back = capped_capacity(HOST, cap_for_capacity(HOST, c))
        assert abs(back - c) <= 1e-6 * HOST.c_peak_mhz


def test_monotonicity():
    caps = [160.0 + k * 1.6 for k in range(101)]
    caps_out = [capped_capacity(HOST, w) for w in caps]
    assert all(a <= b for a, b in zip(caps_out, caps_out[1:]))
    draws = [power_consumed(HOST, k / 100.0) for k in range(101)]
    assert all(a <= b for a, b in zip(draws, draws[1:]))


def test_power_consumed_endpoints_and_midpoint():
    assert power_consumed(HOST, 0.0) == pytest.approx(160.0, abs=1e-9)
    assert power_consumed(HOST, 1.0) == pytest.approx(320.0, abs=1e-9)
    assert power_consumed(HOST, 0.5) == pytest.approx(240.0, abs=1e-9)
    with pytest.raises(ValueError):
        power_consumed(HOST, -0.01)
    with pytest.raises(ValueError):
        power_consumed(HOST, 1.01)


def test_rack_rows_for_8kw_budget():
    # (cap watts, host count, rack MHz, rack MB)
    rows = [
        (400.0, 20, 696000.0, 1966080.0),
        (320.0, 25, 870000.0, 2457600.0),
        (285.0, 28, 761250.0, 2752512.0),
        (250.0, 32, 626400.0, 3145728.0),
    ]
    for cap, count, mhz, mb in rows:
        plan = plan_rack_deployment(HOST, HOST_MEM_MB, 8000.0, cap)
        assert plan.host_count == count
        assert plan.total_cpu_mhz == pytest.approx(mhz, abs=1e-6)
        assert plan.total_memory_mb == pytest.approx(mb, abs=1e-6)


def test_rack_cap_above_nameplate_divides_at_nameplate():
    plan = plan_rack_deployment(HOST, HOST_MEM_MB, 8000.0, 450.0)
    assert plan.host_count == 20
    assert plan.total_cpu_mhz == pytest.approx(20 * 34800.0, abs=1e-6)


def test_rack_domain_errors():
    with pytest.raises(ValueError):
        plan_rack_deployment(HOST, HOST_MEM_MB, 8000.0, 0.0)
    with pytest.raises(ValueError):
        plan_rack_deployment(HOST, HOST_MEM_MB, 0.0, 250.0)


def test_params_validation():
    with pytest.raises(ValueError):
        PowerModelParams(p_idle_w=-1.0, p_peak_w=320.0, c_peak_mhz=34800.0)
    with pytest.raises(ValueError):
        PowerModelParams(p_idle_w=320.0, p_peak_w=320.0, c_peak_mhz=34800.0)
    with pytest.raises(ValueError):
        PowerModelParams(p_idle_w=160.0, p_peak_w=320.0, c_peak_mhz=0.0)
    with pytest.raises(ValueError):
        PowerModelParams(
            p_idle_w=160.0, p_peak_w=320.0, c_peak_mhz=34800.0, c_hypervisor_mhz=34800.0
        )
    with pytest.raises(ValueError):
        PowerModelParams(
            p_idle_w=160.0, p_peak_w=320.0, c_peak_mhz=34800.0, p_nameplate_w=300.0
        )
