import numpy as np
import pytest
from hypothesis import given, strategies as st

from districtsim.airzone import (
    Zone, ZoneMember, ZoneState, source_reference, step_air, step_air_dimensionless, theta_coefficients,
)
from districtsim.conduction import KELVIN, DimensionlessScaling, MaterialLayer


def cube_zone(h=8.7):
    return Zone("cube", 36.0, [ZoneMember(f"w{i}", 12.0, h) for i in range(4)])


SCALING = DimensionlessScaling.for_layers([MaterialLayer(0.2, 1.75, 2.2e6)])


def test_equilibrium():
    z = cube_zone()
    T = KELVIN + 20
    assert step_air(z, ZoneState(T), [T] * 4, 0.0, 900).T_in == pytest.approx(T, abs=1e-12)


def test_long_step_gives_weighted_mean():
    z = Zone("z", 10.0, [ZoneMember("a", 2.0, 3.0), ZoneMember("b", 5.0, 1.0)])
    Ts = [300.0, 280.0]
    expect = (6 * 300 + 5 * 280) / 11
    assert step_air(z, ZoneState(290.0), Ts, 0.0, 1e15).T_in == pytest.approx(expect, rel=1e-9)


def test_single_member_update():
    z = Zone("z", 36.0, [ZoneMember("w", 1.0, 10.0)])  # S h = 10 W/K
    new = step_air(z, ZoneState(KELVIN + 20), [KELVIN + 30], 0.0, 900)
    a = 1.2e3 * 36 / 900
    assert new.T_in - KELVIN == pytest.approx((a * 20 + 10 * 30) / (a + 10), abs=1e-12)
    assert new.T_in - KELVIN == pytest.approx(21.72, abs=0.01)
    # exponential relaxation toward 30 degC; implicit Euler lags it by O((lambda dt)^2)
    lam_dt = 10 * 900 / (1.2e3 * 36)
    exact = 30 - 10 * np.exp(-lam_dt)
    assert exact - (new.T_in - KELVIN) == pytest.approx(10 * (1 / (1 + lam_dt) - np.exp(-lam_dt)), rel=1e-9)
    fine = ZoneState(KELVIN + 20)
    for _ in range(900):
        fine = step_air(z, fine, [KELVIN + 30], 0.0, 1.0)
    assert abs(fine.T_in - KELVIN - exact) < 2e-3
    assert new.t == 900


@given(st.lists(st.floats(250, 330), min_size=1, max_size=6), st.floats(250, 330), st.floats(1, 1e5))
def test_convex_combination(Ts, T_in, dt):
    z = Zone("z", 5.0, [ZoneMember(str(i), 1.0 + i, 2.0) for i in range(len(Ts))])
    new = step_air(z, ZoneState(T_in), Ts, 0.0, dt).T_in
    mean = np.dot(z.members_hS, Ts) / z.members_hS.sum()
    assert min(T_in, mean) - 1e-9 <= new <= max(T_in, mean) + 1e-9


@given(st.lists(st.floats(270, 320), min_size=4, max_size=4), st.floats(270, 320), st.floats(-500, 500),
       st.floats(10, 1e4))
def test_dimensionless_update_matches(Ts, T_in, q_v, dt):
    z = cube_zone()
    s = SCALING
    dim = step_air(z, ZoneState(T_in), Ts, q_v, dt).T_in
    star = step_air_dimensionless(
        z, s, float(s.temperature(T_in)), s.temperature(Ts), q_v / source_reference(z, s), dt / s.t_ref
    )
    assert float(s.temperature_dim(star)) == pytest.approx(dim, rel=1e-13)


def test_theta_coefficients():
    th = theta_coefficients(cube_zone(), SCALING)
    np.testing.assert_allclose(th, 12.0 * 8.7 * SCALING.t_ref / (36.0 * 1.2e3))
    assert np.all(theta_coefficients(cube_zone(h=0.0), SCALING) == 0)
    z2 = Zone("z", 36.0, [ZoneMember("w", 24.0, 8.7)])
    assert theta_coefficients(z2, SCALING)[0] == pytest.approx(2 * th[0])


def test_constant_inputs_reach_steady_state():
    z = cube_zone()
    q_v = 400.0
    st_ = ZoneState(KELVIN + 20)
    for _ in range(400):
        st_ = step_air(z, st_, [KELVIN + 25] * 4, q_v, 900)
    assert st_.T_in == pytest.approx(KELVIN + 25 + q_v / z.members_hS.sum(), abs=1e-9)


def test_validation():
    with pytest.raises(ValueError):
        Zone("z", 0.0, [ZoneMember("a", 1, 1)])
    with pytest.raises(ValueError):
        Zone("z", 1.0, [])
    with pytest.raises(ValueError):
        Zone("z", 1.0, [ZoneMember("a", 1, 1)], c_air=0)
    with pytest.raises(ValueError):
        ZoneMember("a", -1, 1)
    z = cube_zone()
    with pytest.raises(ValueError):
        step_air(z, ZoneState(300), [300] * 3, 0, 900)
    with pytest.raises(ValueError):
        step_air(z, ZoneState(300), [300] * 4, 0, 0)
