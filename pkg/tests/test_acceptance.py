"""End-to-end acceptance checks.

Each test prints a single ``PASS``/``FAIL`` line with the measured values and
then asserts, so a run with ``-s`` or the saved log doubles as a report.
"""

import time

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from districtsim.conduction import KELVIN
from districtsim.engine import SimulationConfig, run
from districtsim.geometry import INTERIOR, SceneMesh, SurfacePatch, assemble_view_factors
from districtsim.io import build_scene
from districtsim.longwave import SIGMA, RadiosityProblem, solve_inside
from districtsim.scenes import demonstrator_document
from districtsim.verify import (
    ALBEDO_SPEC, WALL_THICKNESS_SPEC, convergence_orders, eps2_space, eps2_time, eps_inf, monte_carlo_view_factor,
    parallel_rectangles, perpendicular_rectangles, scene_sensitivity, verify_theoretical,
)

from conftest import box_quads, quad_tris


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        return ok
    return emit


def test_criterion_1_verification_case(report):
    t0 = time.perf_counter()
    res = verify_theoretical(dt=900.0, n_nodes=101)
    elapsed = time.perf_counter() - t0
    ok = res.wall.eps_inf <= 0.40 and res.air_rmse <= 0.25 and elapsed < 60
    report("1 verification case", ok,
           f"eps_inf wall {res.wall.eps_inf:.4f} C (<= 0.40), air {res.air_rmse:.4f} C (<= 0.25), "
           f"oracle self-check {res.reference.self_check:.1e} K, {elapsed:.1f} s (< 60)")
    assert ok


def test_criterion_2_convergence_orders(report):
    t0 = time.perf_counter()
    st_ = convergence_orders()
    elapsed = time.perf_counter() - t0
    coarse, fine = st_.plateau[6], st_.plateau[101]
    # fine grid halves its error with the step; the coarse grid stalls on its spatial floor
    fine_ratio = fine[-1] / fine[-2]
    coarse_ratio = coarse[-1] / coarse[-2]
    plateau = coarse_ratio > 0.7 and 0.4 < fine_ratio < 0.6 and coarse[-1] > 1.5 * fine[-1]
    ok = 0.8 <= st_.p_time <= 1.2 and 1.7 <= st_.p_space <= 2.3 and plateau and elapsed < 300
    report("2 convergence orders", ok,
           f"time slope {st_.p_time:.3f} in [0.8, 1.2], space slope {st_.p_space:.3f} in [1.7, 2.3], "
           f"last-step error ratio N=6 {coarse_ratio:.2f} vs N=101 {fine_ratio:.2f}, {elapsed:.1f} s (< 300)")
    assert ok


def _square_pair(a_quad, b_quad):
    pats = [SurfacePatch(f"a{k}", t) for k, t in enumerate(quad_tris(a_quad))]
    pats += [SurfacePatch(f"b{k}", t) for k, t in enumerate(quad_tris(b_quad))]
    vf = assemble_view_factors(SceneMesh(pats))
    A = vf.areas
    return (A[:2, None] * vf.F[:2, 2:]).sum() / A[:2].sum()


def test_criterion_3_view_factors(report, demo_scene):
    t0 = time.perf_counter()
    vf = demo_scene.view_factor_matrix()
    SF = vf.areas[:, None] * vf.F
    recip = np.max(np.abs(SF - SF.T)) / SF.max()

    pats = []
    for k, q in enumerate(box_quads()):
        for j, t in enumerate(quad_tris(q)):
            pats.append(SurfacePatch(f"f{k}.{j}", t[::-1], side=INTERIOR, zone="z"))
    rows = assemble_view_factors(SceneMesh(pats)).raw_row_sums
    rows_err = np.max(np.abs(rows - 1))

    bottom = np.array([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)], float)
    top = np.array([(0, 0, 1), (0, 1, 1), (1, 1, 1), (1, 0, 1)], float)
    wall = np.array([(0, 0, 0), (0, 0, 1), (1, 0, 1), (1, 0, 0)], float)
    cases = {
        "parallel": (parallel_rectangles(1, 1, 1), bottom, top),
        "perpendicular": (perpendicular_rectangles(1, 1, 1), bottom, wall),
    }
    mc_err, geo_err = {}, {}
    for name, (exact, e, r) in cases.items():
        F_mc, _ = monte_carlo_view_factor(e, r, n_rays=10_000_000, seed=1)
        mc_err[name] = abs(F_mc - exact)
        geo_err[name] = abs(_square_pair(e, r) - exact)
    elapsed = time.perf_counter() - t0
    ok = (recip <= 1e-3 and rows_err <= 1e-3 and max(mc_err.values()) <= 1e-3
          and max(geo_err.values()) <= 1e-3 and elapsed < 60)
    report("3 view factors", ok,
           f"reciprocity {recip:.1e} (<= 1e-3), cube rows {rows_err:.1e} (<= 1e-3), "
           f"Monte Carlo vs closed form {max(mc_err.values()):.1e}, assembly vs closed form "
           f"{max(geo_err.values()):.1e} (<= 1e-3), {elapsed:.1f} s (< 60)")
    assert ok


def test_criterion_4_radiosity(report):
    t0 = time.perf_counter()
    pats = []
    for k, q in enumerate(box_quads(3.0, 2.0, 1.5)):
        for j, t in enumerate(quad_tris(q)):
            pats.append(SurfacePatch(f"f{k}.{j}", t[::-1], side=INTERIOR, zone="z"))
    vf = assemble_view_factors(SceneMesh(pats))
    F, S = vf.F, vf.areas
    T0 = 293.15
    iso = max(np.max(np.abs(solve_inside(RadiosityProblem(F, eps, np.full(len(F), T0))).q))
              for eps in (0.1, 0.5, 0.9, 1.0)) / (SIGMA * T0**4)

    rng = np.random.default_rng(7)
    cons = 0.0
    for _ in range(50):
        T = 250 + 80 * rng.random(len(F))
        eps = 0.05 + 0.95 * rng.random(len(F))
        q = solve_inside(RadiosityProblem(F, eps, T)).q
        cons = max(cons, abs(S @ q) / (S @ np.abs(q)))

    # two concentric-like closed surfaces: a convex body inside an enclosure
    S1, S2, e1, e2, T1, T2 = 1.0, 4.0, 0.8, 0.3, 350.0, 290.0
    F2 = np.array([[0.0, 1.0], [S1 / S2, 1 - S1 / S2]])
    q = solve_inside(RadiosityProblem(F2, np.array([e1, e2]), np.array([T1, T2]))).q
    exact = SIGMA * (T1**4 - T2**4) / (1 / e1 + S1 / S2 * (1 / e2 - 1))
    two = max(abs(q[0] - exact) / exact, abs(q[1] * S2 + exact * S1) / (exact * S1))
    elapsed = time.perf_counter() - t0
    ok = iso <= 1e-9 and cons <= 1e-9 and two <= 1e-6 and elapsed < 10
    report("4 radiosity", ok,
           f"isothermal max|q|/sigmaT^4 {iso:.1e} (<= 1e-9), sum S q {cons:.1e} (<= 1e-9), "
           f"two-surface {two:.1e} (<= 1e-6), {elapsed:.2f} s")
    assert ok


def test_criterion_5_coupling(report, demo_scene, demo_weather, demo_config):
    t0 = time.perf_counter()
    rs = run(demo_scene, demo_weather, demo_config)
    elapsed = time.perf_counter() - t0
    audit = float(np.nanmax(rs.audit()))
    rep = rs.report
    caps = (rep.outer_iters.max() < demo_config.max_outer_iters
            and max(len(z) for step in rep.inner_residuals for z in step) < demo_config.max_inner_iters)
    converged = rep.max_final_residual < rep.eta
    eta_ok = rep.eta == pytest.approx(0.01 * demo_config.dt / demo_scene.max_t_ref)
    same = True
    for kw in ({"workers": 4}, {"reverse_order": True}):
        cfg = SimulationConfig(dt=demo_config.dt, horizon=demo_config.horizon, **kw)
        other = run(demo_scene, demo_weather, cfg)
        same &= all(np.array_equal(rs.fields[k], other.fields[k], equal_nan=True) for k in rs.fields)
        same &= np.array_equal(rs.T_zone, other.T_zone)
    ok = audit <= 1e-6 and caps and converged and eta_ok and same and elapsed < 300
    report("5 coupling", ok,
           f"audit {audit:.1e} W/m2 (<= 1e-6), outer iters max {rep.outer_iters.max()} "
           f"(cap {demo_config.max_outer_iters}), final residual {rep.max_final_residual:.1e} < eta {rep.eta:.1e}, "
           f"bitwise identical across schedules {same}, 3-day run {elapsed:.1f} s (< 300)")
    assert ok


fields = arrays(np.float64, (5, 4), elements=st.floats(-60, 60))


@given(fields, fields, fields)
def test_criterion_6_metric_norm_properties(a, b, c):
    for f in (eps2_time, eps2_space):
        assert np.all(f(a, b) >= 0) and np.all(f(a, a) == 0)
        np.testing.assert_allclose(f(a, b), f(b, a))
        assert np.all(f(a, c) <= f(a, b) + f(b, c) + 1e-9)
    assert eps_inf(a, c) <= eps_inf(a, b) + eps_inf(b, c) + 1e-9


def test_criterion_6_substitute(report, demo_run, demo_scene, demo_weather):
    # brackets reproduced on a one-day run
    cfg = SimulationConfig(dt=900.0, horizon=86400.0)
    doc = demonstrator_document()
    brackets = []
    for spec, groups in ((ALBEDO_SPEC, [g for g in doc["groups"] if g.endswith(".roof")]), (WALL_THICKNESS_SPEC, None)):
        res, _ = scene_sensitivity(doc, spec, demo_weather, cfg, groups)
        brackets.append((spec.parameter, (spec.reference, spec.upper, spec.lower), bool(np.all(np.isfinite(res.derivative)))))
    mech = all(fin for *_, fin in brackets) and [b[1] for b in brackets] == [(0.64, 0.6, 0.69), (0.045, 0.05, 0.04)]

    T = demo_run.T_front - KELVIN
    finite = bool(np.all(np.isfinite(T)) and np.all(np.isfinite(demo_run.T_zone)))
    plausible = finite and -20 < np.nanmin(T) and np.nanmax(T) < 90

    noon = int(np.argmin(np.abs(demo_run.t - (2 * 86400 + 12 * 3600))))
    ids = demo_run.element_ids
    group = {p.id: p.group for p in demo_scene.mesh.patches}
    ground = sorted({group[e.front] for e in demo_scene.elements if group[e.front].startswith("ground.")})
    sw = demo_weather.sample(demo_run.t[noon]).sw
    shaded = min(ground, key=lambda g: sw.get(g, 0.0))
    T_of = lambda g: np.mean([T[noon, ids.index(e.id)] for e in demo_scene.elements if group[e.front] == g])  # noqa: E731
    roof, street = T_of("E.roof"), T_of(shaded)
    ok = mech and plausible and roof >= street
    report("6 substitute", ok,
           f"brackets {[(p, v) for p, v, _ in brackets]} finite, no NaN {finite}, "
           f"range [{np.nanmin(T):.1f}, {np.nanmax(T):.1f}] C, solar noon roof {roof:.1f} C >= "
           f"least-sunlit ground {shaded} {street:.1f} C")
    assert ok
