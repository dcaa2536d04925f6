"""Error norms, the sinusoidal verification case and its reference solution,
convergence orders, local sensitivity, and view-factor oracles.

Space-time fields are arrays of shape ``(n_times, n_nodes)``.
"""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field
from math import comb
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import eigh

from .airzone import ZoneState, step_air
from .conduction import KELVIN, MaterialLayer, Slab1D, SlabState, SurfaceBC, step_wall
from .engine import SimulationConfig, run
from .weather import WeatherSample

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# error norms


def _pair(T_num, T_ref) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(T_num, dtype=float)
    b = np.asarray(T_ref, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"field shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    if a.ndim != 2:
        raise ValueError("fields must be (n_times, n_nodes)")
    return a, b


def eps2_time(T_num, T_ref) -> np.ndarray:
    """RMS error over space at each time."""
    a, b = _pair(T_num, T_ref)
    return np.sqrt(np.mean((a - b) ** 2, axis=1))


def eps2_space(T_num, T_ref) -> np.ndarray:
    """RMS error over time at each node."""
    a, b = _pair(T_num, T_ref)
    return np.sqrt(np.mean((a - b) ** 2, axis=0))


def eps_inf(T_num, T_ref) -> float:
    """Largest per-node RMS error."""
    return float(eps2_space(T_num, T_ref).max())


@dataclass
class ErrorReport:
    eps2_t: np.ndarray
    eps2_x: np.ndarray
    eps_inf: float

    @classmethod
    def compare(cls, T_num, T_ref) -> "ErrorReport":
        e_x = eps2_space(T_num, T_ref)
        return cls(eps2_time(T_num, T_ref), e_x, float(e_x.max()))


# ---------------------------------------------------------------------------
# verification case


@dataclass(frozen=True)
class TheoreticalCase:
    """Concrete box driven by sinusoidal air temperature and a pulsed net flux.

    Temperatures in degC, times in s.  All walls receive the same flux and the
    same air temperature whatever their orientation; long-wave exchange is
    off on both faces.
    """

    T_om: float = 20.0
    delta1: float = -4.4
    period1: float = 72 * 3600.0
    delta2: float = -11.7
    period2: float = 24 * 3600.0
    q_m: float = 500.0
    period_q: float = 48 * 3600.0
    power: int = 20
    h_in: float = 8.7
    h_out: float = 23.2
    thickness: float = 0.2
    conductivity: float = 1.75
    capacity: float = 2.2e6
    area: float = 48.0
    volume: float = 36.0
    c_air: float = 1.2e3
    T_init: float = 20.0
    horizon: float = 3 * 86400.0

    def T_out(self, t):
        t = np.asarray(t, dtype=float)
        return (
            self.T_om
            + self.delta1 * np.sin(2 * np.pi * t / self.period1)
            + self.delta2 * np.sin(2 * np.pi * t / self.period2)
        )

    def q_out(self, t):
        return self.q_m * np.sin(2 * np.pi * np.asarray(t, dtype=float) / self.period_q) ** self.power

    def sample(self, t: float) -> WeatherSample:
        return WeatherSample(t=t, T_out=float(self.T_out(t)) + KELVIN, wind=0.0, T_sky=None,
                             sw={"walls": float(self.q_out(t))})

    def check_coverage(self, horizon: float) -> None:  # analytic forcing covers every time
        return None

    def forcing_terms(self) -> list[tuple[float, float, float]]:
        """Outer-face forcing ``h_out T_out + q_out`` as ``(omega, a, b)`` terms of ``a cos + b sin``."""
        if self.power % 2:
            raise ValueError("the flux pulse needs an even power")
        n = self.power // 2
        wq = 2 * np.pi / self.period_q
        terms = [
            (0.0, self.h_out * self.T_om + self.q_m * comb(2 * n, n) / 4**n, 0.0),
            (2 * np.pi / self.period1, 0.0, self.h_out * self.delta1),
            (2 * np.pi / self.period2, 0.0, self.h_out * self.delta2),
        ]
        # sin^(2n) x = C(2n,n)/4^n + 2/4^n sum_k (-1)^(n-k) C(2n,k) cos(2(n-k)x)
        for k in range(n):
            terms.append((2 * (n - k) * wq, self.q_m * 2 / 4**n * (-1) ** (n - k) * comb(2 * n, k), 0.0))
        return terms

    def document(self, n_nodes: int = 101) -> dict:
        from .scenes import cube_document

        doc = cube_document(n_nodes)
        doc["T_init"] = self.T_init
        doc["materials"]["concrete"] = {"conductivity": self.conductivity, "capacity": self.capacity}
        doc["constructions"]["wall"]["layers"] = [["concrete", self.thickness]]
        doc["zones"]["cube"].update(volume=self.volume, c_air=self.c_air)
        g = doc["groups"]["walls"]
        g.update(h_out=self.h_out, albedo=0.0)
        g["back"]["h"] = self.h_in
        return doc

    def config(self, dt: float = 900.0, **kw) -> SimulationConfig:
        return SimulationConfig(dt=dt, horizon=self.horizon, outside_longwave=False, inside_longwave=False,
                                record_profiles=True, **kw)


def generate_theoretical_case(n_nodes: int = 101, case: TheoreticalCase | None = None):
    """Scene and analytic forcing of the verification case."""
    from .io import build_scene

    case = case or TheoreticalCase()
    return build_scene(case.document(n_nodes)), case


@dataclass
class ReferenceSolution:
    t: np.ndarray
    x: np.ndarray
    wall: np.ndarray  # (times, nodes), degC
    air: np.ndarray  # (times,), degC
    self_check: float = float("nan")

    def on_nodes(self, n_nodes: int) -> np.ndarray:
        """Wall field at the nodes of a uniform ``n_nodes`` grid."""
        xs = np.linspace(self.x[0], self.x[-1], n_nodes)
        stride = (len(self.x) - 1) / (n_nodes - 1)
        if abs(stride - round(stride)) < 1e-12:
            return self.wall[:, :: int(round(stride))]
        return np.stack([np.interp(xs, self.x, row) for row in self.wall])


def _modal_solution(case: TheoreticalCase, n_nodes: int, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact time integration of the semi-discrete wall + air system.

    The finite-volume system ``C dy/dt + K y = B u(t)`` is symmetrized with
    ``C^(-1/2)`` and diagonalized; each mode is integrated analytically
    against the trigonometric forcing.
    """
    N = n_nodes
    dx = case.thickness / (N - 1)
    S = case.area
    w = np.full(N, dx)
    w[0] = w[-1] = dx / 2
    C = np.append(case.capacity * w * S, case.c_air * case.volume)
    K = np.zeros((N + 1, N + 1))
    g = case.conductivity / dx * S
    i = np.arange(N - 1)
    K[i, i] += g
    K[i + 1, i + 1] += g
    K[i, i + 1] -= g
    K[i + 1, i] -= g
    K[0, 0] += case.h_out * S
    hS = case.h_in * S
    K[N - 1, N - 1] += hS
    K[N, N] += hS
    K[N - 1, N] -= hS
    K[N, N - 1] -= hS
    s = 1.0 / np.sqrt(C)
    lam, V = eigh(K * s[:, None] * s[None, :])
    B = np.zeros(N + 1)
    B[0] = S
    gm = V.T @ (s * B)
    u0 = V.T @ (np.full(N + 1, case.T_init) / s)
    t = np.asarray(times, dtype=float)[:, None]
    up = np.zeros((len(times), N + 1))
    up0 = np.zeros(N + 1)
    for om, a, b in case.forcing_terms():
        if om == 0.0:
            P = a / lam
            up += P * gm
            up0 += P * gm
        else:
            d = lam**2 + om**2
            P = (lam * a - om * b) / d
            Q = (lam * b + om * a) / d
            up += gm * (P * np.cos(om * t) + Q * np.sin(om * t))
            up0 += gm * P
    u = up + (u0 - up0) * np.exp(-lam * t)
    y = (u @ V.T) * s
    return y[:, :N], y[:, N]


def reference_solution(
    case: TheoreticalCase | None = None,
    times: np.ndarray | None = None,
    n_nodes: int = 1001,
    check_tol: float = 0.02,
) -> ReferenceSolution:
    """Fine-grid reference exact in time, checked against a doubled grid.

    Raises ``RuntimeError`` when the difference to the ``2 n_nodes - 1`` grid
    exceeds ``check_tol`` (degC); that difference bounds the spatial error by
    Richardson's argument for a second-order scheme.
    """
    case = case or TheoreticalCase()
    if times is None:
        times = np.arange(0.0, case.horizon + 1.0, 900.0)
    wall, air = _modal_solution(case, n_nodes, times)
    ref = ReferenceSolution(np.asarray(times, float), np.linspace(0, case.thickness, n_nodes), wall, air)
    if check_tol is not None:
        wall2, air2 = _modal_solution(case, 2 * n_nodes - 1, times)
        diff = max(np.abs(wall - wall2[:, ::2]).max(), np.abs(air - air2).max())
        ref.self_check = float(diff)
        if diff > check_tol:
            raise RuntimeError(f"reference self-check failed: {diff:.3g} > {check_tol:g}")
    return ref


@dataclass
class VerificationResult:
    dt: float
    n_nodes: int
    wall: ErrorReport
    air_rmse: float
    runtime: float
    t: np.ndarray
    T_wall: np.ndarray
    T_air: np.ndarray
    reference: ReferenceSolution
    face_errors: dict[str, float] = field(default_factory=dict)


def simulate_case(case: TheoreticalCase, dt: float, n_nodes: int, **cfg_kw):
    """Engine run of the verification case; returns times, wall field and air (degC)."""
    scene, forcing = generate_theoretical_case(n_nodes, case)
    rs = run(scene, forcing, case.config(dt, **cfg_kw))
    wall = rs.profiles[rs.element_ids[0]] - KELVIN
    return rs.t, wall, rs.T_zone[:, 0] - KELVIN, rs


def verify_theoretical(dt: float = 900.0, n_nodes: int = 101, case: TheoreticalCase | None = None) -> VerificationResult:
    """Run the verification case and compare it with the reference on the run grid."""
    case = case or TheoreticalCase()
    t0 = time.perf_counter()
    t, wall, air, _ = simulate_case(case, dt, n_nodes)
    runtime = time.perf_counter() - t0
    ref = reference_solution(case, t)
    ref_wall = ref.on_nodes(n_nodes)
    rep = ErrorReport.compare(wall, ref_wall)
    air_rmse = float(np.sqrt(np.mean((air - ref.air) ** 2)))
    faces = {"outer": float(rep.eps2_x[0]), "inner": float(rep.eps2_x[-1])}
    return VerificationResult(dt, n_nodes, rep, air_rmse, runtime, t, wall, air, ref, faces)


# ---------------------------------------------------------------------------
# convergence orders


def fit_order(h: Sequence[float], err: Sequence[float]) -> float:
    """Least-squares slope of ``log err`` against ``log h``."""
    h = np.log(np.asarray(h, float))
    e = np.log(np.asarray(err, float))
    return float(np.polyfit(h, e, 1)[0])


def _wall_air_march(case: TheoreticalCase, n_nodes: int, dt: float, out_times: np.ndarray, tol: float = 1e-9,
                    max_iter: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Single wall plus air, coupled by fixed-point iteration to a tight tolerance (K)."""
    from .airzone import Zone, ZoneMember

    slab = Slab1D([MaterialLayer(case.thickness, case.conductivity, case.capacity)], n_nodes)
    zone = Zone("cube", case.volume, [ZoneMember("wall", case.area, case.h_in)], c_air=case.c_air)
    T_init = case.T_init + KELVIN
    state = slab.uniform_state(T_init)
    air = ZoneState(T_init)
    n_steps = int(round(case.horizon / dt))
    keep = {int(round(t / dt)): j for j, t in enumerate(out_times)}
    walls = np.empty((len(out_times), n_nodes))
    airs = np.empty(len(out_times))
    if 0 in keep:
        walls[keep[0]] = state.T
        airs[keep[0]] = air.T_in
    for n in range(1, n_steps + 1):
        t = n * dt
        bc_out = SurfaceBC.convective(float(case.T_out(t)) + KELVIN, case.h_out, float(case.q_out(t)))
        T_in = air.T_in
        for _ in range(max_iter):
            new = step_wall(slab, state, bc_out, SurfaceBC.convective(T_in, case.h_in), dt)
            a = step_air(zone, air, [new.T[-1]], 0.0, dt)
            done = abs(a.T_in - T_in) < tol
            T_in = a.T_in
            if done:
                break
        else:
            raise RuntimeError("wall/air coupling did not converge")
        state = step_wall(slab, state, bc_out, SurfaceBC.convective(T_in, case.h_in), dt)
        air = step_air(zone, air, [state.T[-1]], 0.0, dt)
        if n in keep:
            walls[keep[n]] = state.T
            airs[keep[n]] = air.T_in
    return walls - KELVIN, airs - KELVIN


@dataclass
class ConvergenceStudy:
    dts: list[float]
    eps_time: list[float]
    p_time: float
    n_nodes: list[int]
    dx: list[float]
    eps_space: list[float]
    p_space: float
    plateau_nodes: list[int]
    plateau: dict[int, list[float]]

    def rows(self) -> list[dict]:
        out = [{"axis": "time", "n_nodes": 101, "dt": d, "dx": "", "eps_inf": e} for d, e in zip(self.dts, self.eps_time)]
        out += [{"axis": "space", "n_nodes": n, "dt": "richardson(60,30)", "dx": h, "eps_inf": e}
                for n, h, e in zip(self.n_nodes, self.dx, self.eps_space)]
        for n, errs in self.plateau.items():
            out += [{"axis": "plateau", "n_nodes": n, "dt": d, "dx": "", "eps_inf": e} for d, e in zip(self.dts, errs)]
        return out


def convergence_orders(
    case: TheoreticalCase | None = None,
    dts: Sequence[float] = (3600.0, 1800.0, 900.0, 450.0, 225.0),
    n_nodes: Sequence[int] = (6, 11, 21, 41),
    space_dts: tuple[float, float] = (60.0, 30.0),
    plateau_nodes: Sequence[int] = (6, 101),
    n_fit: int = 3,
) -> ConvergenceStudy:
    """Observed orders in time and space against the reference solution.

    Time: engine runs on a 101-node grid, errors at hourly instants.  Space:
    the time error is removed by Richardson extrapolation of two small steps
    ``2 T(dt/2) - T(dt)`` so the remaining error is the spatial one.  Grids
    must have ``n - 1`` dividing 1000 to land on reference nodes.  Slopes are
    fitted on the ``n_fit`` finest resolutions.
    """
    case = case or TheoreticalCase()
    t_cmp = np.arange(0.0, case.horizon + 1.0, 3600.0)
    ref = reference_solution(case, t_cmp)
    eps_t = []
    plateau = {n: [] for n in plateau_nodes}
    for dt in dts:
        for n in sorted(set(plateau_nodes) | {101}):
            t, wall, _, _ = simulate_case(case, dt, n)
            sel = np.isin(np.round(t, 6), np.round(t_cmp, 6))
            e = eps_inf(wall[sel], ref.on_nodes(n))
            if n == 101:
                eps_t.append(e)
            if n in plateau:
                plateau[n].append(e)
    order = np.argsort(dts)[:n_fit]
    p_t = fit_order(np.asarray(dts)[order], np.asarray(eps_t)[order])

    dt1, dt2 = space_dts
    eps_x = []
    for n in n_nodes:
        w1, _ = _wall_air_march(case, n, dt1, t_cmp)
        w2, _ = _wall_air_march(case, n, dt2, t_cmp)
        eps_x.append(eps_inf(2 * w2 - w1, ref.on_nodes(n)))
    dx = [case.thickness / (n - 1) for n in n_nodes]
    order = np.argsort(dx)[:n_fit]
    p_x = fit_order(np.asarray(dx)[order], np.asarray(eps_x)[order])
    for name, errs in (("time", eps_t), ("space", eps_x)):
        if np.any(np.diff(np.asarray(errs)[np.argsort([-h for h in (dts if name == "time" else dx)])]) > 0):
            log.warning("%s error sequence is not monotone: %s", name, errs)
    return ConvergenceStudy(list(dts), eps_t, p_t, list(n_nodes), dx, eps_x, p_x, list(plateau_nodes), plateau)


# ---------------------------------------------------------------------------
# local sensitivity


@dataclass(frozen=True)
class SensitivitySpec:
    """Bracket of one parameter: the reference value and the two perturbed values."""

    parameter: str
    reference: float
    upper: float
    lower: float

    def __post_init__(self):
        lo, hi = sorted((self.upper, self.lower))
        if not lo < self.reference < hi and not np.isclose(self.reference, 0.5 * (lo + hi)):
            raise ValueError(f"{self.parameter}: reference must lie inside the bracket")
        if self.upper == self.lower:
            raise ValueError(f"{self.parameter}: empty bracket")

    @property
    def delta(self) -> float:
        return 0.5 * abs(self.upper - self.lower)


WALL_THICKNESS_SPEC = SensitivitySpec("wall_thickness", 0.045, 0.05, 0.04)
ALBEDO_SPEC = SensitivitySpec("albedo", 0.64, 0.6, 0.69)
SENSITIVITY_SPECS = {"wall_thickness": WALL_THICKNESS_SPEC, "albedo": ALBEDO_SPEC}


@dataclass
class SensitivityResult:
    spec: SensitivitySpec
    value: np.ndarray
    derivative: np.ndarray
    band_low: np.ndarray
    band_high: np.ndarray


def local_sensitivity(model: Callable[[float], np.ndarray], spec: SensitivitySpec) -> SensitivityResult:
    """Central-difference derivative of ``model`` and the band ``T(p0) +- |dp dT/dp|``."""
    T0 = np.asarray(model(spec.reference), dtype=float)
    Tu = np.asarray(model(spec.upper), dtype=float)
    Tl = np.asarray(model(spec.lower), dtype=float)
    d = (Tu - Tl) / (spec.upper - spec.lower)
    half = np.abs(spec.delta * d)
    for a in (T0, Tu, Tl):
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite model output in the sensitivity runs")
    return SensitivityResult(spec, T0, d, T0 - half, T0 + half)


def perturbed_document(doc: dict, parameter: str, value: float, groups: Sequence[str] | None = None) -> dict:
    """Copy of a scene document with one parameter changed.

    ``albedo`` is set on ``groups`` (default: exterior groups built on wall
    constructions); ``wall_thickness`` rescales the single layer of every
    wall construction used by ``groups``.
    """
    doc = copy.deepcopy(doc)
    gs = doc["groups"]
    if groups is None:
        groups = [g for g, s in gs.items()
                  if doc["constructions"][s["construction"]].get("kind", "wall") == "wall"
                  and s.get("face", "exterior") == "exterior"]
    unknown = set(groups) - set(gs)
    if unknown:
        raise ValueError(f"unknown groups {sorted(unknown)}")
    if parameter == "albedo":
        for g in groups:
            gs[g]["albedo"] = float(value)
    elif parameter == "wall_thickness":
        for c in {gs[g]["construction"] for g in groups}:
            con = doc["constructions"][c]
            if len(con["layers"]) != 1:
                raise ValueError(f"construction {c}: thickness perturbation needs a single layer")
            con["layers"][0][1] = float(value)
    else:
        raise ValueError(f"unknown parameter {parameter!r}")
    return doc


def scene_sensitivity(doc: dict, spec: SensitivitySpec, weather, cfg: SimulationConfig,
                      groups: Sequence[str] | None = None, field_name: str = "T_front"):
    """Sensitivity of one result field (all elements, all steps) of a scene run."""
    from .io import build_scene

    runs = {}

    def model(p):
        rs = run(build_scene(perturbed_document(doc, spec.parameter, p, groups)), weather, cfg)
        runs[p] = rs
        return rs.fields[field_name]

    res = local_sensitivity(model, spec)
    return res, runs[spec.reference]


# ---------------------------------------------------------------------------
# view-factor oracles


def parallel_rectangles(a: float, b: float, c: float) -> float:
    """View factor between equal, directly opposed ``a x b`` rectangles ``c`` apart."""
    X, Y = a / c, b / c
    x1, y1 = np.sqrt(1 + X * X), np.sqrt(1 + Y * Y)
    return float(
        2 / (np.pi * X * Y)
        * (
            np.log(np.sqrt((1 + X * X) * (1 + Y * Y) / (1 + X * X + Y * Y)))
            + X * y1 * np.arctan(X / y1)
            + Y * x1 * np.arctan(Y / x1)
            - X * np.arctan(X)
            - Y * np.arctan(Y)
        )
    )


def perpendicular_rectangles(w: float, h: float, l: float) -> float:
    """View factor from a ``w x l`` rectangle to an ``h x l`` one sharing the edge of length ``l`` at 90 deg."""
    W, H = w / l, h / l
    r = np.sqrt(H * H + W * W)
    a = (1 + W * W) * (1 + H * H) / (1 + W * W + H * H)
    b = (W * W * (1 + W * W + H * H) / ((1 + W * W) * (W * W + H * H))) ** (W * W)
    c = (H * H * (1 + H * H + W * W) / ((1 + H * H) * (H * H + W * W))) ** (H * H)
    return float(
        1 / (np.pi * W) * (W * np.arctan(1 / W) + H * np.arctan(1 / H) - r * np.arctan(1 / r) + 0.25 * np.log(a * b * c))
    )


def monte_carlo_view_factor(emitter: np.ndarray, receiver: np.ndarray, n_rays: int = 10_000_000,
                            seed: int = 0, chunk: int = 1_000_000) -> tuple[float, float]:
    """Ray-traced view factor between two planar convex polygons.

    Points are drawn uniformly on ``emitter`` and directions from a cosine
    distribution about its normal; the hit fraction on ``receiver`` is the
    view factor.  Returns the estimate and its standard error.
    """
    E = np.asarray(emitter, float)
    R = np.asarray(receiver, float)
    rng = np.random.default_rng(seed)
    fan = [(E[0], E[i], E[i + 1]) for i in range(1, len(E) - 1)]
    areas = np.array([0.5 * np.linalg.norm(np.cross(b - a, c - a)) for a, b, c in fan])
    n = np.cross(E[1] - E[0], E[2] - E[0])
    n /= np.linalg.norm(n)
    t1 = E[1] - E[0]
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    nr = np.cross(R[1] - R[0], R[2] - R[0])
    nr /= np.linalg.norm(nr)
    hits = 0
    done = 0
    while done < n_rays:
        m = min(chunk, n_rays - done)
        k = rng.choice(len(fan), size=m, p=areas / areas.sum())
        u, v = rng.random(m), rng.random(m)
        flip = u + v > 1
        u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
        A = np.array([f[0] for f in fan])[k]
        B = np.array([f[1] for f in fan])[k]
        C = np.array([f[2] for f in fan])[k]
        P = A + u[:, None] * (B - A) + v[:, None] * (C - A)
        r1, r2 = rng.random(m), rng.random(m)
        rad, phi = np.sqrt(r1), 2 * np.pi * r2
        d = (rad * np.cos(phi))[:, None] * t1 + (rad * np.sin(phi))[:, None] * t2 + np.sqrt(1 - r1)[:, None] * n
        denom = d @ nr
        with np.errstate(divide="ignore", invalid="ignore"):
            s = ((R[0] - P) @ nr) / denom
        ok = np.isfinite(s) & (s > 1e-12)
        X = P + s[:, None] * d
        inside = ok.copy()
        for i in range(len(R)):
            a, b = R[i], R[(i + 1) % len(R)]
            inside &= (np.cross(b - a, X - a) @ nr) >= 0
        hits += int(inside.sum())
        done += m
    F = hits / n_rays
    return F, float(np.sqrt(F * (1 - F) / n_rays))
