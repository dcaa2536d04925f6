import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import solve_ivp

from districtsim.verify import (
    ALBEDO_SPEC, WALL_THICKNESS_SPEC, ErrorReport, SensitivitySpec, TheoreticalCase, eps2_space, eps2_time,
    eps_inf, fit_order, local_sensitivity, perturbed_document, reference_solution,
)
from districtsim.scenes import demonstrator_document


def test_metrics_trivial_cases():
    a = np.random.default_rng(0).normal(size=(7, 5))
    assert eps_inf(a, a) == 0.0 and np.all(eps2_time(a, a) == 0)
    np.testing.assert_allclose(eps2_time(a + 0.3, a), 0.3)
    np.testing.assert_allclose(eps2_space(a - 0.3, a), 0.3)
    assert eps_inf(a + 0.3, a) == pytest.approx(0.3)
    # one node, series (0, 3, 4) against zeros: sqrt(25 / 3)
    assert eps_inf(np.array([[0.0], [3.0], [4.0]]), np.zeros((3, 1))) == pytest.approx(np.sqrt(25 / 3))
    rep = ErrorReport.compare(a + 1, a)
    assert rep.eps_inf == rep.eps2_x.max()
    with pytest.raises(ValueError):
        eps_inf(np.zeros((3, 2)), np.zeros((2, 3)))


fields = arrays(np.float64, (6, 4), elements=st.floats(-50, 50))


@given(fields, fields, fields)
def test_metrics_are_norms(a, b, c):
    for f in (eps2_time, eps2_space):
        ab, bc, ac = f(a, b), f(b, c), f(a, c)
        assert np.all(ab >= 0)
        assert np.all(ac <= ab + bc + 1e-9)
        np.testing.assert_allclose(ab, f(b, a))
    assert eps_inf(a, c) <= eps_inf(a, b) + eps_inf(b, c) + 1e-9
    assert (eps_inf(a, b) == 0) == np.array_equal(a, b)


def test_forcing_definition():
    case = TheoreticalCase()
    assert case.T_out(0.0) == pytest.approx(20.0)
    assert case.q_out(12 * 3600) == pytest.approx(500.0)
    assert case.q_out(36 * 3600) == pytest.approx(500.0)
    assert case.q_out(24 * 3600) == pytest.approx(0.0, abs=1e-12)
    # narrow pulses: 6 h away from the peak the flux is below 0.1 % of it
    assert case.q_out(6 * 3600) < 1e-3 * 500
    t = np.linspace(0, case.horizon, 500)
    assert np.all(case.q_out(t) >= 0)
    assert case.q_out(t).max() <= 500.0 + 1e-9


def test_power_reduction_series():
    case = TheoreticalCase()
    t = np.linspace(0, 3 * 86400, 977)
    series = sum(a * np.cos(w * t) + b * np.sin(w * t) for w, a, b in case.forcing_terms())
    np.testing.assert_allclose(series, case.h_out * case.T_out(t) + case.q_out(t), atol=1e-9)


def test_reference_against_stiff_integrator():
    """Modal solution of the 11-node system against an adaptive BDF integration."""
    from districtsim.verify import _modal_solution

    case = TheoreticalCase(horizon=86400.0)
    N = 11
    times = np.arange(0, 86401, 3600.0)
    wall, air = _modal_solution(case, N, times)
    dx = case.thickness / (N - 1)
    w = np.full(N, dx)
    w[0] = w[-1] = dx / 2
    C = np.append(case.capacity * w, case.c_air * case.volume / case.area)
    g = case.conductivity / dx

    def rhs(t, y):
        f = np.zeros(N + 1)
        f[:N - 1] -= g * (y[:N - 1] - y[1:N])
        f[1:N] += g * (y[:N - 1] - y[1:N])
        f[0] += case.h_out * (case.T_out(t) - y[0]) + case.q_out(t)
        f[N - 1] += case.h_in * (y[N] - y[N - 1])
        f[N] += case.h_in * (y[N - 1] - y[N])
        return f / C

    sol = solve_ivp(rhs, (0, 86400), np.full(N + 1, case.T_init), method="BDF", t_eval=times,
                    rtol=1e-10, atol=1e-10, max_step=600)
    np.testing.assert_allclose(wall, sol.y[:N].T, atol=1e-5)
    np.testing.assert_allclose(air, sol.y[N], atol=1e-5)


def test_reference_self_check_and_equilibrium():
    ref = reference_solution(TheoreticalCase(horizon=86400.0), np.arange(0, 86401, 3600.0), n_nodes=201)
    assert ref.self_check <= 0.02
    flat = TheoreticalCase(delta1=0.0, delta2=0.0, q_m=0.0, horizon=86400.0)
    r = reference_solution(flat, np.arange(0, 86401, 3600.0), n_nodes=101)
    np.testing.assert_allclose(r.wall, 20.0, atol=1e-9)
    np.testing.assert_allclose(r.air, 20.0, atol=1e-9)
    assert r.on_nodes(11).shape == (25, 11)
    assert r.on_nodes(7).shape == (25, 7)


def test_fit_order():
    h = np.array([1.0, 0.5, 0.25])
    assert fit_order(h, 3 * h**2) == pytest.approx(2.0)
    assert fit_order(h, 0.1 * h) == pytest.approx(1.0)


def test_sensitivity_trivial_models():
    spec = SensitivitySpec("p", 1.0, 1.5, 0.5)
    flat = local_sensitivity(lambda p: np.full(4, 7.0), spec)
    assert np.all(flat.derivative == 0) and np.all(flat.band_low == flat.band_high)
    aff = local_sensitivity(lambda p: np.array([3.0 * p - 2.0, -p]), spec)
    np.testing.assert_allclose(aff.derivative, [3.0, -1.0])
    np.testing.assert_allclose(aff.band_high - aff.band_low, 2 * spec.delta * np.array([3.0, 1.0]))


@given(st.floats(-3, 3), st.floats(0.01, 1.0))
def test_central_difference_error_is_quadratic_in_half_width(p0, h):
    spec = SensitivitySpec("p", p0, p0 + h, p0 - h)
    quad = local_sensitivity(lambda p: np.array([2 * p**2 - p]), spec)
    assert quad.derivative[0] == pytest.approx(4 * p0 - 1, abs=1e-9)
    cubic = local_sensitivity(lambda p: np.array([p**3]), spec)
    assert cubic.derivative[0] - 3 * p0**2 == pytest.approx(h**2, rel=1e-6, abs=1e-9)


def test_bracket_constants():
    assert (WALL_THICKNESS_SPEC.reference, WALL_THICKNESS_SPEC.upper, WALL_THICKNESS_SPEC.lower) == (0.045, 0.05, 0.04)
    assert (ALBEDO_SPEC.reference, ALBEDO_SPEC.upper, ALBEDO_SPEC.lower) == (0.64, 0.6, 0.69)
    with pytest.raises(ValueError):
        SensitivitySpec("p", 2.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        SensitivitySpec("p", 1.0, 1.0, 1.0)


def test_perturbed_document():
    doc = demonstrator_document()
    d = perturbed_document(doc, "albedo", 0.6, ["E.roof"])
    assert d["groups"]["E.roof"]["albedo"] == 0.6 and doc["groups"]["E.roof"]["albedo"] == 0.64
    assert d["groups"]["A.roof"]["albedo"] == 0.64
    d = perturbed_document(doc, "wall_thickness", 0.05)
    assert d["constructions"]["wall"]["layers"][0][1] == 0.05
    assert d["constructions"]["soil"] == doc["constructions"]["soil"]
    with pytest.raises(ValueError):
        perturbed_document(doc, "colour", 1.0)
    with pytest.raises(ValueError):
        perturbed_document(doc, "albedo", 0.5, ["nowhere"])
