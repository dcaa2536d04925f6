import numpy as np
import pytest

from districtsim.conduction import KELVIN, MaterialLayer, Slab1D
from districtsim.engine import ConvergenceError, Element, Scene, SimulationConfig, run
from districtsim.io import build_scene
from districtsim.scenes import cube_document
from districtsim.weather import WeatherSample


class ConstantWeather:
    def __init__(self, T_out=KELVIN + 20, T_sky=KELVIN + 20, sw=0.0, wind=0.0):
        self.T_out, self.T_sky, self.sw, self.wind = T_out, T_sky, sw, wind

    def sample(self, t):
        return WeatherSample(t, self.T_out, self.wind, self.T_sky, {"walls": self.sw})


@pytest.fixture(scope="module")
def cube():
    return build_scene(cube_document(n_nodes=21))


def test_zero_horizon_returns_initial_state(cube):
    rs = run(cube, ConstantWeather(), SimulationConfig(dt=900, horizon=0))
    assert rs.t.tolist() == [0.0]
    np.testing.assert_array_equal(rs.T_front, KELVIN + 20)
    assert rs.T_zone[0, 0] == KELVIN + 20
    assert len(rs.report.outer_iters) == 0


def test_equilibrium_converges_at_first_iterate(cube):
    # the cube has no floor or roof, so its inner enclosure is open and inside exchange is off
    rs = run(cube, ConstantWeather(), SimulationConfig(dt=900, horizon=4 * 900, inside_longwave=False))
    assert np.all(rs.report.outer_iters == 1)
    assert np.all(rs.report.inner_iters == 1)
    np.testing.assert_allclose(rs.T_front, KELVIN + 20, atol=1e-10)


def test_without_radiation_one_extra_iterate(cube):
    w = ConstantWeather(T_out=KELVIN + 30, sw=200.0)
    cfg = SimulationConfig(dt=900, horizon=8 * 900, outside_longwave=False, inside_longwave=False)
    rs = run(cube, w, cfg)
    assert np.all(rs.report.outer_iters == 2)
    assert all(r[-1] < rs.report.eta for r in rs.report.outer_residuals)


def test_boundary_audit_and_eta(cube):
    w = ConstantWeather(T_out=KELVIN + 30, T_sky=KELVIN + 5, sw=300.0, wind=2.0)
    cfg = SimulationConfig(dt=900, horizon=12 * 900)
    rs = run(cube, w, cfg)
    assert np.nanmax(rs.audit()) <= 1e-6
    assert rs.report.eta == pytest.approx(0.01 * 900 / cube.max_t_ref)
    assert all(r[-1] < rs.report.eta for r in rs.report.outer_residuals)
    # the wall is heated from outside: face temperatures move up
    assert rs.T_front[-1].min() > KELVIN + 20


def test_convergence_error_carries_history(cube):
    w = ConstantWeather(T_out=KELVIN + 30, T_sky=KELVIN, sw=300.0)
    with pytest.raises(ConvergenceError) as err:
        run(cube, w, SimulationConfig(dt=900, horizon=900, max_outer_iters=1))
    assert err.value.t == 900 and err.value.loop == "outdoor" and len(err.value.residuals) == 1


def test_under_relaxation_reaches_the_same_fixed_point(demo_scene, demo_weather):
    base = run(demo_scene, demo_weather, SimulationConfig(dt=900, horizon=8 * 3600))
    relaxed = run(demo_scene, demo_weather, SimulationConfig(dt=900, horizon=8 * 3600, under_relaxation=0.7))
    eta_K = base.report.eta * demo_scene.T_init
    assert np.max(np.abs(base.T_front - relaxed.T_front)) < 50 * eta_K
    assert relaxed.report.outer_iters.mean() >= base.report.outer_iters.mean()


def test_order_and_workers_do_not_change_results(demo_scene, demo_weather, demo_short_config):
    ref = run(demo_scene, demo_weather, demo_short_config)
    for kw in ({"reverse_order": True}, {"workers": 3}):
        cfg = SimulationConfig(dt=demo_short_config.dt, horizon=demo_short_config.horizon, **kw)
        other = run(demo_scene, demo_weather, cfg)
        for k in ref.fields:
            np.testing.assert_array_equal(ref.fields[k], other.fields[k])
        np.testing.assert_array_equal(ref.T_zone, other.T_zone)


def test_closed_zone_longwave_balance(demo_run, demo_scene):
    zone = demo_scene.zones[0]
    area = {m.patch_id: m.area for m in zone.members}
    ids = demo_run.element_ids
    total = np.zeros(len(demo_run.t) - 1)
    scale = np.zeros_like(total)
    for e in demo_scene.elements:
        j = ids.index(e.id)
        if e.front in area:
            q = demo_run.q_lw_front[1:, j] * area[e.front]
        elif e.back_patch in area:
            q = demo_run.q_lw_back[1:, j] * area[e.back_patch]
        else:
            continue
        total += q
        scale += np.abs(q)
    assert np.all(np.abs(total) <= 1e-9 * np.maximum(scale, 1e-300))


def test_demonstrator_run_is_physical(demo_run):
    T = demo_run.T_front - KELVIN
    assert np.all(np.isfinite(T)) and np.all(np.isfinite(demo_run.T_zone))
    assert -10 < T.min() and T.max() < 80
    assert np.nanmax(demo_run.audit()) <= 1e-6
    assert demo_run.report.outer_iters.max() <= 10


def test_scene_validation(cube):
    slab = Slab1D([MaterialLayer(0.1, 1.0, 1e6)], 11)
    with pytest.raises(ValueError):
        Element("e", slab, "p", back="zone")
    with pytest.raises(ValueError):
        Element("e", slab, "p", back="ground", T_deep=290.0)  # wall slab
    with pytest.raises(ValueError):
        Element("e", slab, "p", back="air", back_h=2.0)
    with pytest.raises(ValueError):
        Element("e", slab, "p", front_h=-1.0)
    with pytest.raises(ValueError):
        Scene(cube.mesh, cube.elements[:-1], cube.zones)
    with pytest.raises(ValueError):
        Scene(cube.mesh, [], cube.zones)
    with pytest.raises(ValueError):
        SimulationConfig(dt=900, horizon=1000)
    with pytest.raises(ValueError):
        SimulationConfig(under_relaxation=0.0)
    with pytest.raises(ValueError):
        SimulationConfig(max_outer_iters=0)
