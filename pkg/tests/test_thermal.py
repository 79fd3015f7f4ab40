import numpy as np
import pytest
from hypothesis import given, strategies as st

from hazardtwin.config import ScenarioConfig, ThermalConfig
from hazardtwin.district import BuildingType
from hazardtwin.scenario import build_timeline
from hazardtwin.thermal import (DamageModel, Pm25Params, Rc2Params, Rc2State, SurfaceFluxParams, TruthMode,
                                damage, daily_blackout_peaks, default_params, hvac_power, pm25_rollout,
                                rc2_rollout, rc2_step, simulate_building, simulate_district,
                                solar_gain, stable_substeps, surface_flux)


def _euler_oracle(p, Tw, Tz, T_out, smoke, outage, q_ext, dt, n):
    """Plain explicit Euler with ``n`` steps per forcing interval, written from the ODEs."""
    h = dt / n
    out = [Tz]
    for to, s, u, q in zip(T_out, smoke, outage, q_ext):
        for _ in range(n):
            frac = min(max((Tz - p.setpoint) / p.db, 0.0), 1.0)
            q_hvac = -(1 - u) * p.Q_max * frac
            dTw = ((1 - s) * (to - Tw) / p.R_wo + (Tz - Tw) / p.R_wz) / p.C_w
            dTz = ((Tw - Tz) / p.R_wz + p.Q_int + q + q_hvac) / p.C_z
            Tw, Tz = Tw + h * dTw, Tz + h * dTz
        out.append(Tz)
    return np.array(out)


def test_equilibrium_is_fixed_point():
    p = Rc2Params(8.0, 2.0, 0.5, 0.1, 0.0, 0.0)
    s = rc2_step(Rc2State(30.0, 30.0), p, 30.0, 0.0, 0.1)
    assert s.T_w == 30.0 and s.T_z == 30.0


def test_step_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        rc2_step(Rc2State(30.0, 30.0), Rc2Params(8.0, 2.0, 0.5, 0.1, 0.0, 0.0), 30.0, 0.0, 0.0)


def test_steady_state_after_ten_time_constants():
    p = Rc2Params(10.0, 2.0, 0.5, 0.1, 2.0, 0.0)
    A = np.array([[-(1 / p.R_wo + 1 / p.R_wz) / p.C_w, 1 / (p.R_wz * p.C_w)],
                  [1 / (p.R_wz * p.C_z), -1 / (p.R_wz * p.C_z)]])
    tau = 1.0 / np.min(np.abs(np.linalg.eigvals(A)))
    dt = 0.01
    # start in equilibrium with the outdoor air, then switch the gain on
    s = Rc2State(40.0, 40.0)
    for _ in range(int(np.ceil(10 * tau / dt))):
        s = rc2_step(s, p, 40.0, p.Q_int, dt)
    assert s.T_z == pytest.approx(40.0 + 2.0 * (0.5 + 0.1), abs=1e-4)


def _school_forcing():
    tl = build_timeline()
    p = default_params(BuildingType.School)
    q = solar_gain(tl.t_h, p.solar_peak)
    return tl, p, q


def test_rk2_matches_fine_euler_oracle():
    tl, p, q = _school_forcing()
    n_sub = stable_substeps(p.C_w, p.C_z, p.R_wo, p.R_wz, p.Q_max, p.db, tl.dt_h)
    _, Tz = rc2_rollout(p, p.setpoint, p.setpoint, tl.T_out, tl.smoke, tl.outage, q, tl.dt_h, n_sub)
    ref = _euler_oracle(p, p.setpoint, p.setpoint, tl.T_out, tl.smoke, tl.outage, q, tl.dt_h, 100 * n_sub)
    assert np.max(np.abs(Tz[0] - ref)) <= 1e-3


def test_halving_step_barely_moves_final_temperature():
    tl, p, q = _school_forcing()
    n = stable_substeps(p.C_w, p.C_z, p.R_wo, p.R_wz, p.Q_max, p.db, tl.dt_h)
    a = rc2_rollout(p, p.setpoint, p.setpoint, tl.T_out, tl.smoke, tl.outage, q, tl.dt_h, n)[1]
    b = rc2_rollout(p, p.setpoint, p.setpoint, tl.T_out, tl.smoke, tl.outage, q, tl.dt_h, 2 * n)[1]
    assert abs(a[0, -1] - b[0, -1]) < 1e-3


def test_no_cooling_during_outage():
    assert np.all(hvac_power(np.linspace(20, 45, 50), 1, 30.0, 0.5, 24.0) == 0)
    tl = build_timeline(ScenarioConfig(outage_length_h=6.0))
    assert tl.outage.all()
    p = default_params(BuildingType.Clinic)
    T = simulate_building(p, tl)
    assert np.all(hvac_power(T[:, 1], tl.outage, p.Q_max, p.db, p.setpoint) == 0)


def test_proportional_thermostat_saturates():
    assert hvac_power(24.25, 0, 10.0, 0.5, 24.0) == pytest.approx(-5.0)
    assert hvac_power(30.0, 0, 10.0, 0.5, 24.0) == pytest.approx(-10.0)
    assert hvac_power(23.0, 0, 10.0, 0.5, 24.0) == 0.0


def test_school_blackout_peaks_in_band():
    tl = build_timeline()
    T = simulate_building(default_params(BuildingType.School), tl)[:, 1]
    peaks = daily_blackout_peaks(T, tl)
    assert peaks.shape == (3,)
    assert np.all((peaks >= 31.0) & (peaks <= 33.0))


def _relaxation(smoke):
    p = Rc2Params(8.0, 2.0, 0.5, 0.1, 0.0, 0.0)
    L = 200
    return rc2_rollout(p, 24.0, 24.0, np.full(L, 40.0), np.full(L, smoke), np.ones(L), np.zeros(L), 0.1, 4)[1][0]


def test_smoke_slows_coupling_to_outdoors():
    clear, smoky = _relaxation(0.0), _relaxation(0.15)
    assert np.all(smoky[1:] < clear[1:])


def test_relaxation_is_monotone_without_overshoot():
    Tz = _relaxation(0.0)
    assert np.all(np.diff(Tz) >= -1e-12)
    assert np.all(Tz <= 40.0 + 1e-9)


def test_simulation_modes_are_deterministic_and_distinct(district):
    tl = build_timeline()
    cfg = ThermalConfig()
    a = simulate_district(district, tl, cfg, seed=3, mode=TruthMode.Rc2Truth)
    b = simulate_district(district, tl, cfg, seed=3, mode=TruthMode.Rc2Truth)
    c = simulate_district(district, tl, cfg, seed=3, mode=TruthMode.CoupledTruth)
    assert a.shape == (len(district), len(tl))
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)
    assert np.all(np.isfinite(c))


def test_empty_timeline_rejected():
    tl = build_timeline().slice(0, 0)
    with pytest.raises(ValueError):
        simulate_building(default_params(BuildingType.School), tl)


def test_invalid_params():
    with pytest.raises(ValueError):
        Rc2Params(0.0, 2.0, 0.5, 0.1, 0.0, 0.0)
    with pytest.raises(ValueError):
        Rc2Params(1.0, 2.0, 0.5, 0.1, 0.0, -1.0)


def test_surface_flux_examples():
    p = SurfaceFluxParams(10.0, 0.9)
    assert surface_flux(p, 300.0, 300.0, 300.0) == 0.0
    expected = 10 * 20 + 0.9 * 5.670374419e-8 * (320.0 ** 4 - 300.0 ** 4)
    assert surface_flux(p, 320.0, 300.0, 300.0) == pytest.approx(expected, rel=1e-12)
    assert surface_flux(p, 320.0, 300.0, 300.0) == pytest.approx(321.8, abs=0.1)
    assert surface_flux(SurfaceFluxParams(10.0, 0.0), 320.0, 300.0, 250.0) == pytest.approx(200.0)
    with pytest.raises(ValueError):
        surface_flux(p, -1.0, 300.0, 300.0)


def test_pm25_zero_forcing():
    p = Pm25Params(1.0, 0.8, 0.2, 50.0, 100.0)
    assert np.all(pm25_rollout(p, np.zeros(50), 0.0, 0.1) == 0)


def test_pm25_steady_state():
    p = Pm25Params(1.0, 0.8, 0.2, 50.0, 100.0)
    C = pm25_rollout(p, np.full(2000, 100.0), 0.0, 0.05)
    assert C[-1] == pytest.approx(80 / 1.7, rel=1e-6)
    assert p.steady_state(100.0) == pytest.approx(80 / 1.7)


def test_pm25_more_filtration_lowers_level():
    a = Pm25Params(1.0, 0.8, 0.2, 50.0, 100.0)
    b = Pm25Params(1.0, 0.8, 0.2, 100.0, 100.0)
    assert b.steady_state(100.0) < a.steady_state(100.0)


@given(st.floats(0, 500), st.floats(0, 500), st.floats(0.01, 0.5))
def test_pm25_bounded(C0, C_out, dt):
    p = Pm25Params(1.0, 0.8, 0.2, 50.0, 100.0, 5.0)
    C = pm25_rollout(p, np.full(100, C_out), C0, dt)
    assert np.all(C >= 0)
    assert np.all(C <= max(C0, p.steady_state(C_out)) * (1 + 1e-9) + 1e-9)


def test_damage_examples():
    m = DamageModel(2.0, 0.01, 5.0)
    assert damage(m, 0.01) == (0.0, 5.0)
    D, K = damage(m, 0.11)
    assert D == pytest.approx(1 - np.exp(-0.2))
    assert D == pytest.approx(0.1813, abs=1e-4)
    assert K == pytest.approx(0.8187 * 5.0, abs=1e-3)


@given(st.lists(st.floats(-1, 50), min_size=2, max_size=20))
def test_damage_monotone_and_bounded(strains):
    s = np.sort(strains)
    D, K = damage(DamageModel(2.0, 0.0, 3.0), s)
    assert np.all((D >= 0) & (D < 1) | (D == 1) & (s > 18))  # expm1 rounds to 1 only for huge strain
    assert np.all(np.diff(D) >= 0) and np.all(np.diff(K) <= 0)
    assert np.all((K >= 0) & (K <= 3.0))
