"""Time marching with the coupled outdoor and zone fixed points.

For every step ``n -> n+1`` the weather is sampled at ``t^{n+1}`` and two nested
fixed points are iterated:

* the outer loop steps the slabs facing outdoors, runs the zone loops and then
  updates the outdoor radiosity from the new exterior surface temperatures;
* the zone loop steps the slabs bounding one zone, then the zone air, then the
  inside radiosity, until interior surface and air temperatures settle.

Both loops stop when the largest temperature change between two iterates,
divided by ``T0``, drops below ``eta = eta_factor * dt / t_ref``.  Every loop is
seeded with the converged values of the previous step.

The boundary data recorded for a step are those fed to the last slab solve, so
the recorded conductive fluxes satisfy the boundary rows to round-off.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .airzone import Zone, ZoneState, step_air
from .conduction import KELVIN, SOIL, Slab1D, implicit_step
from .geometry import EXTERIOR, INTERIOR, QuadratureSpec, SceneMesh, ViewFactorMatrix, assemble_view_factors
from .longwave import SIGMA, RadiositySolver
from .weather import WeatherSample, h_out_correlation

log = logging.getLogger(__name__)

ZONE = "zone"
AIR = "air"
ADIABATIC = "adiabatic"
GROUND = "ground"
WIND = "wind"


class ConvergenceError(RuntimeError):
    """A fixed point did not settle within its iteration cap."""

    def __init__(self, message: str, t: float, residuals: list[float], loop: str):
        super().__init__(f"{message} at t = {t:g} s ({loop} loop, last residual {residuals[-1]:.3e})")
        self.t = t
        self.residuals = list(residuals)
        self.loop = loop


@dataclass
class Element:
    """One wall, roof, floor or soil column carried by a 1D slab.

    ``front`` is the patch at ``x = 0``.  Exterior fronts use ``front_h``
    (a number or ``"wind"``); interior fronts take the film coefficient of
    their zone member.  The back face is one of

    ``zone``       interior patch ``back_patch`` of a zone
    ``air``        fixed air temperature ``back_T_air`` with ``back_h``
    ``adiabatic``  no flux
    ``ground``     deepest node held at ``T_deep``
    """

    id: str
    slab: Slab1D
    front: str
    back: str = ADIABATIC
    back_patch: str | None = None
    back_h: float = 0.0
    back_T_air: float = float("nan")
    front_h: float | str = WIND
    T_deep: float = float("nan")

    def __post_init__(self):
        if self.back not in (ZONE, AIR, ADIABATIC, GROUND):
            raise ValueError(f"element {self.id}: unknown back condition {self.back!r}")
        if self.back == ZONE and not self.back_patch:
            raise ValueError(f"element {self.id}: zone back needs a back patch")
        if self.back != ZONE and self.back_patch:
            raise ValueError(f"element {self.id}: back patch only allowed with a zone back")
        if self.back == AIR and not (self.back_h >= 0 and np.isfinite(self.back_T_air) and self.back_T_air > 0):
            raise ValueError(f"element {self.id}: air back needs h >= 0 and an air temperature in kelvin")
        if self.back == GROUND:
            if self.slab.kind != SOIL:
                raise ValueError(f"element {self.id}: ground back needs a soil slab")
            if not (np.isfinite(self.T_deep) and self.T_deep > 0):
                raise ValueError(f"element {self.id}: ground back needs T_deep in kelvin")
        if self.front_h != WIND and not (isinstance(self.front_h, (int, float)) and self.front_h >= 0):
            raise ValueError(f"element {self.id}: front_h must be 'wind' or a nonnegative number")


@dataclass
class Scene:
    mesh: SceneMesh
    elements: list[Element]
    zones: list[Zone] = field(default_factory=list)
    T_init: float = KELVIN + 20.0
    name: str = "scene"
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)
    view_factors: ViewFactorMatrix | None = None

    def __post_init__(self):
        if not self.elements:
            raise ValueError("scene has no elements")
        ids = [e.id for e in self.elements]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate element ids")
        zones = {z.name: z for z in self.zones}
        if len(zones) != len(self.zones):
            raise ValueError("duplicate zone names")
        owner: dict[str, str] = {}
        for e in self.elements:
            for pid in (e.front, e.back_patch):
                if pid is None:
                    continue
                self.mesh.patch(pid)
                if pid in owner:
                    raise ValueError(f"patch {pid} is used by elements {owner[pid]} and {e.id}")
                owner[pid] = e.id
            if e.back == ZONE and self.mesh.patch(e.back_patch).side != INTERIOR:
                raise ValueError(f"element {e.id}: back patch must be interior")
            fz = self.mesh.patch(e.front).zone
            bz = self.mesh.patch(e.back_patch).zone if e.back_patch else None
            if fz and bz:
                raise ValueError(f"element {e.id} touches two zones")
        missing = [p.id for p in self.mesh.patches if p.id not in owner]
        if missing:
            raise ValueError(f"patches without element: {missing[:5]}")
        for p in self.mesh.patches:
            if p.side == INTERIOR and p.zone not in zones:
                raise ValueError(f"patch {p.id} refers to unknown zone {p.zone!r}")
        for z in self.zones:
            member_ids = {m.patch_id for m in z.members}
            bounding = {p.id for p in self.mesh.patches if p.side == INTERIOR and p.zone == z.name}
            if member_ids != bounding:
                raise ValueError(f"zone {z.name}: members do not match its interior patches")
        if not self.T_init > 0:
            raise ValueError("initial temperature must be in kelvin")

    def view_factor_matrix(self, cache_dir=None) -> ViewFactorMatrix:
        if self.view_factors is None:
            self.view_factors = assemble_view_factors(self.mesh, self.quadrature, cache_dir)
        return self.view_factors

    @property
    def max_t_ref(self) -> float:
        return max(e.slab.scaling.t_ref for e in self.elements)


@dataclass
class SimulationConfig:
    """Run settings.

    ``eta_factor`` sets the fixed-point threshold ``eta = eta_factor dt / t_ref``
    in dimensionless temperature.  ``t_ref`` defaults to the largest reference
    time among the scene's slabs, which makes the test at least as strict as
    the one built on any single slab.
    """

    dt: float = 900.0
    horizon: float = 3 * 86400.0
    eta_factor: float = 0.01
    t_ref: float | None = None
    max_outer_iters: int = 50
    max_inner_iters: int = 50
    under_relaxation: float = 1.0
    outside_longwave: bool = True
    inside_longwave: bool = True
    single_reflection: bool = False
    record_profiles: bool = False
    workers: int = 1
    reverse_order: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon >= 0:
            raise ValueError("horizon must be nonnegative")
        n = self.horizon / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError("horizon must be a multiple of dt")
        if not self.eta_factor > 0:
            raise ValueError("eta_factor must be positive")
        if self.max_outer_iters < 1 or self.max_inner_iters < 1:
            raise ValueError("iteration caps must be >= 1")
        if not 0 < self.under_relaxation <= 1:
            raise ValueError("under_relaxation must lie in (0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.t_ref is not None and not self.t_ref > 0:
            raise ValueError("t_ref must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class ConvergenceReport:
    outer_iters: np.ndarray  # (steps,)
    inner_iters: np.ndarray  # (steps, zones), summed over outer iterates
    outer_residuals: list[list[float]]
    inner_residuals: list[list[list[float]]]  # [step][zone] of the final outer iterate
    eta: float

    @property
    def max_final_residual(self) -> float:
        return max((r[-1] for r in self.outer_residuals), default=0.0)


#: per-element result fields, all arrays of shape (steps + 1, elements)
ELEMENT_FIELDS = (
    "T_front", "T_back", "h_front", "h_back", "T_air_front", "T_air_back",
    "q_net_front", "q_net_back", "q_c_front", "q_c_back", "q_sw", "q_lw_front", "q_lw_back",
)


@dataclass
class ResultSet:
    """Time series of a run.

    Temperatures are in kelvin, fluxes in W/m2.  Row 0 holds the initial
    state; boundary quantities are NaN there.  ``q_net_*`` are the gains
    applied on each face, ``q_c_*`` the conductive fluxes into the slab and
    ``q_lw_*`` the net long-wave fluxes (positive = loss).  Faces held at a
    fixed temperature have NaN film data.
    """

    t: np.ndarray
    element_ids: list[str]
    zone_names: list[str]
    fields: dict[str, np.ndarray]
    T_zone: np.ndarray
    report: ConvergenceReport | None = None
    profiles: dict[str, np.ndarray] | None = None
    metadata: dict = field(default_factory=dict)

    def __getattr__(self, name):
        f = self.__dict__.get("fields")
        if f is not None and name in f:
            return f[name]
        raise AttributeError(name)

    def column(self, name: str, element: str) -> np.ndarray:
        return self.fields[name][:, self.element_ids.index(element)]

    def zone(self, name: str) -> np.ndarray:
        return self.T_zone[:, self.zone_names.index(name)]

    def audit(self) -> np.ndarray:
        """Boundary energy residual ``|q_c - (q_net - h (T_s - T_air))|`` per step and face.

        Returns an array (steps, elements, 2); faces without a flux condition
        are NaN.
        """
        out = []
        for side in ("front", "back"):
            f = self.fields
            T = f[f"T_{side}"][1:]
            h = f[f"h_{side}"][1:]
            Ta = f[f"T_air_{side}"][1:]
            conv = np.where(h > 0, h * (T - Ta), 0.0)
            out.append(np.abs(f[f"q_c_{side}"][1:] - (f[f"q_net_{side}"][1:] - conv)))
        return np.stack(out, axis=-1)


# ---------------------------------------------------------------------------


@dataclass
class StepInputs:
    """Boundary data of one step, already mapped onto the elements."""

    t: float
    T_out: float
    h_front: np.ndarray  # (E,), exterior fronts only
    sw_abs: np.ndarray  # (E,)
    J_sky: float
    q_v: dict[str, float]


class _Batch:
    """Elements sharing a node count, stepped together."""

    def __init__(self, elements: list[Element], index: np.ndarray):
        self.index = index
        s = [e.slab for e in elements]
        self.g = np.stack([x.conductance_star for x in s])
        self.m = np.stack([x.capacity_star for x in s])
        self.T0 = np.array([x.scaling.T0 for x in s])
        self.L = np.array([x.scaling.length for x in s])
        self.k0 = np.array([x.scaling.k0 for x in s])
        self.t_ref = np.array([x.scaling.t_ref for x in s])
        self.G0 = np.array([x.conductance[0] for x in s])
        self.Ge = np.array([x.conductance[-1] for x in s])
        self.C0 = np.array([x.heat_capacity[0] for x in s])
        self.Ce = np.array([x.heat_capacity[-1] for x in s])


class Simulation:
    """Compiled scene plus mutable state; advanced with :meth:`step`."""

    def __init__(self, scene: Scene, cfg: SimulationConfig, vf: ViewFactorMatrix | None = None):
        self.scene = scene
        self.cfg = cfg
        mesh = scene.mesh
        self.vf = vf or scene.view_factor_matrix()
        if self.vf.ids != mesh.ids:
            raise ValueError("view factors do not belong to this scene")
        els = scene.elements
        E = len(els)
        self.E = E
        self.t_ref = cfg.t_ref or scene.max_t_ref
        self.eta = cfg.eta_factor * cfg.dt / self.t_ref
        self.T0 = scene.T_init

        # element faces
        self.front_idx = np.array([mesh.index(e.front) for e in els])
        self.front_ext = np.array([mesh.patches[i].side == EXTERIOR for i in self.front_idx])
        self.albedo = np.array([mesh.patches[i].albedo for i in self.front_idx])
        self.group = [mesh.patches[i].group for i in self.front_idx]
        self.back_kind = [e.back for e in els]
        self.back_fixed = np.array([e.back == GROUND for e in els])
        self.T_deep = np.array([e.T_deep if e.back == GROUND else 0.0 for e in els])
        self.wind_h = np.array([e.front_h == WIND for e in els]) & self.front_ext
        self.const_h = np.array([0.0 if e.front_h == WIND else float(e.front_h) for e in els])

        # zones: map each member to (element, face)
        self.zones = list(scene.zones)
        self.zone_rows: list[np.ndarray] = []
        self.zone_member_face: list[tuple[np.ndarray, np.ndarray]] = []
        self.zone_solver: list[RadiositySolver | None] = []
        self.element_zone = np.full(E, -1)
        where = {}
        for k, e in enumerate(els):
            where[e.front] = (k, 0)
            if e.back_patch:
                where[e.back_patch] = (k, 1)
        for zi, z in enumerate(self.zones):
            ek = np.array([where[m.patch_id][0] for m in z.members])
            face = np.array([where[m.patch_id][1] for m in z.members])
            self.zone_member_face.append((ek, face))
            rows = np.unique(ek)
            self.zone_rows.append(rows)
            self.element_zone[rows] = zi
            idx, F, _ = self.vf.block(f"zone:{z.name}")
            if cfg.inside_longwave and np.any(np.abs(F.sum(axis=1) - 1.0) > 10 * scene.quadrature.tol):
                log.warning("zone %s is not a closed enclosure; inside long-wave exchange is partial", z.name)
            pos = {pid: r for r, pid in enumerate(mesh.ids[i] for i in idx)}
            order = np.array([pos[m.patch_id] for m in z.members])
            Fm = F[np.ix_(order, order)]
            epsm = np.array([mesh.patch(m.patch_id).emissivity for m in z.members])
            self.zone_solver.append(
                RadiositySolver(Fm, epsm, single_reflection=cfg.single_reflection) if cfg.inside_longwave else None
            )
        # film coefficients of interior faces
        self.h_front_in = np.zeros(E)
        self.h_back_in = np.array([e.back_h if e.back == AIR else 0.0 for e in els])
        for zi, z in enumerate(self.zones):
            ek, face = self.zone_member_face[zi]
            for m, k, f in zip(z.members, ek, face):
                (self.h_front_in if f == 0 else self.h_back_in)[k] = m.h
        self.back_T_air = np.array([e.back_T_air if e.back == AIR else np.nan for e in els])
        self.outdoor_rows = np.flatnonzero(self.element_zone < 0)
        self.zone_of_front = np.full(E, -1)
        self.zone_of_back = np.full(E, -1)
        for zi in range(len(self.zones)):
            ek, face = self.zone_member_face[zi]
            self.zone_of_front[ek[face == 0]] = zi
            self.zone_of_back[ek[face == 1]] = zi

        # outdoor radiosity over exterior fronts
        self.ext_rows = np.flatnonzero(self.front_ext)
        ext_patch = self.front_idx[self.ext_rows]
        enc = self.vf.enclosures.get(EXTERIOR, np.array([], dtype=int))
        if set(enc.tolist()) != set(ext_patch.tolist()):
            raise ValueError("exterior enclosure does not match the exterior element fronts")
        Fo = self.vf.F[np.ix_(ext_patch, ext_patch)]
        eps_o = np.array([mesh.patches[i].emissivity for i in ext_patch])
        self.out_solver = (
            RadiositySolver(Fo, eps_o, F_sky=self.vf.sky[ext_patch], single_reflection=cfg.single_reflection)
            if cfg.outside_longwave and len(ext_patch) else None
        )

        # batches by node count
        self.batches: list[_Batch] = []
        self.batch_of = np.zeros(E, dtype=int)
        self.row_of = np.zeros(E, dtype=int)
        for n in sorted({e.slab.n_nodes for e in els}):
            idx = np.array([k for k, e in enumerate(els) if e.slab.n_nodes == n])
            self.batch_of[idx] = len(self.batches)
            self.row_of[idx] = np.arange(len(idx))
            self.batches.append(_Batch([els[k] for k in idx], idx))

        self.pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
        self.reset()

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()
            self.pool = None

    # -- state ---------------------------------------------------------------

    def reset(self):
        self.t = 0.0
        self.T = [np.full(b.g.shape[0:1] + (b.m.shape[1],), self.T0) for b in self.batches]
        self.T_zone = np.full(len(self.zones), self.T0)
        self.q_lw_out = np.zeros(self.E)
        self.q_lw_in = np.zeros((self.E, 2))

    def faces(self) -> tuple[np.ndarray, np.ndarray]:
        Tf = np.empty(self.E)
        Tb = np.empty(self.E)
        for b, T in zip(self.batches, self.T):
            Tf[b.index] = T[:, 0]
            Tb[b.index] = T[:, -1]
        return Tf, Tb

    def profile(self, k: int) -> np.ndarray:
        return self.T[self.batch_of[k]][self.row_of[k]].copy()

    # -- slab solves -----------------------------------------------------------

    def _solve(self, rows: np.ndarray, T_old: list[np.ndarray], bc: dict[str, np.ndarray]) -> dict[int, np.ndarray]:
        """Step the element rows ``rows`` from ``T_old``; returns new profiles per batch."""
        dt = self.cfg.dt
        out = {}
        for bi, b in enumerate(self.batches):
            sel = rows[self.batch_of[rows] == bi]
            if not len(sel):
                continue
            if self.cfg.reverse_order:
                sel = sel[::-1]
            r = self.row_of[sel]
            T0 = b.T0[r]
            L = b.L[r]
            k0 = b.k0[r]
            bi_f = bc["h_f"][sel] * L / k0
            ta_f = np.where(bc["h_f"][sel] > 0, (bc["Ta_f"][sel] - T0) / T0, 0.0)
            q_f = bc["q_f"][sel] * L / (k0 * T0)
            hb = np.where(self.back_fixed[sel], 0.0, bc["h_b"][sel])
            bi_b = hb * L / k0
            ta_b = np.where(hb > 0, (np.nan_to_num(bc["Ta_b"][sel]) - T0) / T0, 0.0)
            q_b = np.where(self.back_fixed[sel], 0.0, bc["q_b"][sel]) * L / (k0 * T0)
            fixed = self.back_fixed[sel]
            Tfix = (self.T_deep[sel] - T0) / T0
            Tstar = (T_old[bi][r] - T0[:, None]) / T0[:, None]
            dts = dt / b.t_ref[r]
            args = (b.g[r], b.m[r], Tstar, dts, (bi_f, ta_f, q_f), (bi_b, ta_b, q_b), fixed, Tfix)
            new = self._run_chunks(args)
            res = T0[:, None] * (1.0 + new)
            if self.cfg.reverse_order:
                res = res[::-1]
                sel = sel[::-1]
            out[bi] = (sel, res)
        return out

    def _run_chunks(self, args):
        B = args[0].shape[0]
        if self.pool is None or B < 2:
            return implicit_step(*args)
        n = min(self.cfg.workers, B)
        bounds = np.linspace(0, B, n + 1).astype(int)

        def part(lo, hi):
            g, m, T, dts, f, bk, fx, tf = args
            sl = slice(lo, hi)
            return implicit_step(
                g[sl], m[sl], T[sl], dts[sl], tuple(a[sl] for a in f), tuple(a[sl] for a in bk), fx[sl], tf[sl]
            )

        parts = list(self.pool.map(lambda ab: part(*ab), zip(bounds[:-1], bounds[1:])))
        return np.concatenate(parts, axis=0)


    # -- boundary data ---------------------------------------------------------

    def inputs(self, w: WeatherSample) -> StepInputs:
        h_wind = h_out_correlation(w.wind) if self.wind_h.any() else 0.0
        h = np.where(self.wind_h, h_wind, self.const_h)
        sw = np.array([w.sw.get(g, 0.0) for g in self.group])
        sw_abs = np.where(self.front_ext, (1.0 - self.albedo) * sw, 0.0)
        J_sky = 0.0
        if self.out_solver is not None:
            if w.T_sky is None:
                raise ValueError("outside long-wave needs a sky temperature")
            J_sky = SIGMA * w.T_sky**4
        return StepInputs(w.t, w.T_out, h, sw_abs, J_sky, dict(w.q_v))

    def _bc(self, inp: StepInputs, q_out: np.ndarray, T_zone: np.ndarray, q_in: np.ndarray) -> dict[str, np.ndarray]:
        ext = self.front_ext
        Tz = np.append(T_zone, np.nan)
        zf, zb = self.zone_of_front, self.zone_of_back
        bc = {
            "h_f": np.where(ext, inp.h_front, self.h_front_in),
            "Ta_f": np.where(ext, inp.T_out, Tz[zf]),
            "q_f": np.where(ext, inp.sw_abs - q_out, -q_in[:, 0]),
            "h_b": self.h_back_in.copy(),
            "Ta_b": np.where(zb >= 0, Tz[zb], self.back_T_air),
            "q_b": np.where(zb >= 0, -q_in[:, 1], 0.0),
        }
        for key in ("h_b", "Ta_b", "q_b"):
            bc[key][self.back_fixed] = np.nan
        return bc

    def _advance(self, rows, T_old, T_new, inp, q_out, T_zone, q_in, used):
        bc = self._bc(inp, q_out, T_zone, q_in)
        for bi, (sel, res) in self._solve(rows, T_old, bc).items():
            T_new[bi][self.row_of[sel]] = res
        for key, a in bc.items():
            used[key][rows] = a[rows]

    def _member_temps(self, zi: int, T_new: list[np.ndarray]) -> np.ndarray:
        ek, face = self.zone_member_face[zi]
        out = np.empty(len(ek))
        for j, (k, f) in enumerate(zip(ek, face)):
            out[j] = T_new[self.batch_of[k]][self.row_of[k], 0 if f == 0 else -1]
        return out

    # -- fixed points ------------------------------------------------------------

    def zone_fixed_point(self, zi, inp, q_out, T_old, T_new, q_in, T_zone, used):
        """Iterate slabs, air and inside radiosity of zone ``zi``.

        Updates ``T_new``, ``q_in``, ``T_zone`` and ``used`` in place and
        returns the residual history.
        """
        z = self.zones[zi]
        rows = self.zone_rows[zi]
        ek, face = self.zone_member_face[zi]
        solver = self.zone_solver[zi]
        q_v = inp.q_v.get(z.name, z.q_v)
        Ts_prev = self._member_temps(zi, T_new)
        hist = []
        for _ in range(self.cfg.max_inner_iters):
            self._advance(rows, T_old, T_new, inp, q_out, T_zone, q_in, used)
            Ts = self._member_temps(zi, T_new)
            T_in = step_air(z, ZoneState(self.T_zone[zi], self.t), Ts, q_v, self.cfg.dt).T_in
            if solver is not None:
                q_in[ek, face] = solver.solve(Ts).q
            res = max(np.max(np.abs(Ts - Ts_prev)), abs(T_in - T_zone[zi])) / self.T0
            hist.append(float(res))
            Ts_prev = Ts
            T_zone[zi] = T_in
            if res < self.eta:
                return hist
        raise ConvergenceError(f"zone {z.name} did not converge", inp.t, hist, "zone")

    def outdoor_fixed_point(self, inp: StepInputs):
        """Outer iteration of one step.  Returns the new state and diagnostics without committing."""
        cfg = self.cfg
        T_old = self.T
        T_new = [T.copy() for T in T_old]
        q_out = self.q_lw_out.copy()
        q_in = self.q_lw_in.copy()
        T_zone = self.T_zone.copy()
        used = {k: np.full(self.E, np.nan) for k in ("h_f", "Ta_f", "q_f", "h_b", "Ta_b", "q_b")}
        ext = self.ext_rows
        Tf, _ = self.faces()
        T_ext_prev = Tf[ext]
        T_rad = T_ext_prev.copy()
        T_zone_prev = T_zone.copy()
        hist = []
        inner_iters = np.zeros(len(self.zones), dtype=int)
        inner_hist: list[list[float]] = [[] for _ in self.zones]
        zone_order = list(range(len(self.zones)))
        if cfg.reverse_order:
            zone_order = zone_order[::-1]
        q_seed = q_out
        for _ in range(cfg.max_outer_iters):
            self._advance(self.outdoor_rows, T_old, T_new, inp, q_out, T_zone, q_in, used)
            for zi in zone_order:
                h = self.zone_fixed_point(zi, inp, q_out, T_old, T_new, q_in, T_zone, used)
                inner_iters[zi] += len(h)
                inner_hist[zi] = h
            Tf = np.empty(self.E)
            for b, T in zip(self.batches, T_new):
                Tf[b.index] = T[:, 0]
            res = np.max(np.abs(Tf[ext] - T_ext_prev), initial=0.0)
            if len(T_zone):
                res = max(res, np.max(np.abs(T_zone - T_zone_prev)))
            res /= self.T0
            hist.append(float(res))
            converged = res < self.eta
            T_ext_prev = Tf[ext]
            T_zone_prev = T_zone.copy()
            if self.out_solver is not None:
                w = cfg.under_relaxation
                T_rad = Tf[ext] if (converged or w == 1.0) else w * Tf[ext] + (1.0 - w) * T_rad
                q_seed = q_out.copy()
                q_seed[ext] = self.out_solver.solve(T_rad, inp.J_sky).q
            if converged:
                return T_new, T_zone, q_out, q_seed, q_in, used, hist, inner_iters, inner_hist
            q_out = q_seed
        raise ConvergenceError("outdoor fixed point did not converge", inp.t, hist, "outdoor")

    def step(self, w: WeatherSample) -> dict:
        """Advance by one time step using the weather sampled at the end of the step."""
        dt = self.cfg.dt
        inp = self.inputs(w)
        T_old = self.T
        T_new, T_zone, q_out_used, q_seed, q_in, used, hist, inner_iters, inner_hist = self.outdoor_fixed_point(inp)

        rec = {}
        Tf = np.empty(self.E)
        Tb = np.empty(self.E)
        qcf = np.empty(self.E)
        qcb = np.empty(self.E)
        for b, To, Tn in zip(self.batches, T_old, T_new):
            Tf[b.index] = Tn[:, 0]
            Tb[b.index] = Tn[:, -1]
            qcf[b.index] = b.C0 * (Tn[:, 0] - To[:, 0]) / dt + b.G0 * (Tn[:, 0] - Tn[:, 1])
            qcb[b.index] = b.Ce * (Tn[:, -1] - To[:, -1]) / dt + b.Ge * (Tn[:, -1] - Tn[:, -2])
        ext = self.front_ext
        zb = self.zone_of_back >= 0
        rec["T_front"], rec["T_back"] = Tf, Tb
        rec["h_front"], rec["h_back"] = used["h_f"], used["h_b"]
        rec["T_air_front"], rec["T_air_back"] = used["Ta_f"], used["Ta_b"]
        rec["q_net_front"], rec["q_net_back"] = used["q_f"], used["q_b"]
        rec["q_c_front"], rec["q_c_back"] = qcf, qcb
        rec["q_sw"] = np.where(ext, inp.sw_abs, 0.0)
        rec["q_lw_front"] = np.where(ext, inp.sw_abs - used["q_f"], -used["q_f"])
        rec["q_lw_back"] = np.where(zb, -used["q_b"], 0.0)

        self.T = T_new
        self.T_zone = T_zone
        self.q_lw_out = q_seed
        self.q_lw_in = q_in
        self.t = inp.t
        rec["T_zone"] = T_zone.copy()
        rec["outer"] = hist
        rec["inner_iters"] = inner_iters
        rec["inner"] = inner_hist
        return rec


def run(scene: Scene, weather, cfg: SimulationConfig, vf: ViewFactorMatrix | None = None) -> ResultSet:
    """March ``scene`` over ``[0, cfg.horizon]`` with boundary data from ``weather.sample(t)``."""
    if hasattr(weather, "check_coverage"):
        weather.check_coverage(cfg.horizon)
    sim = Simulation(scene, cfg, vf)
    n = cfg.n_steps
    E = sim.E
    fields = {k: np.full((n + 1, E), np.nan) for k in ELEMENT_FIELDS}
    Tf, Tb = sim.faces()
    fields["T_front"][0] = Tf
    fields["T_back"][0] = Tb
    T_zone = np.full((n + 1, len(sim.zones)), np.nan)
    T_zone[0] = sim.T_zone
    profiles = None
    if cfg.record_profiles:
        profiles = {e.id: np.empty((n + 1, e.slab.n_nodes)) for e in scene.elements}
        for k, e in enumerate(scene.elements):
            profiles[e.id][0] = sim.profile(k)
    outer_iters = np.zeros(n, dtype=int)
    inner_iters = np.zeros((n, len(sim.zones)), dtype=int)
    outer_res, inner_res = [], []
    relaxed = cfg.under_relaxation < 1.0
    if relaxed:
        log.info("under-relaxation %.3g applied to the outdoor surface temperatures", cfg.under_relaxation)
    try:
        for i in range(1, n + 1):
            rec = sim.step(weather.sample(i * cfg.dt))
            for k in ELEMENT_FIELDS:
                fields[k][i] = rec[k]
            T_zone[i] = rec["T_zone"]
            outer_iters[i - 1] = len(rec["outer"])
            inner_iters[i - 1] = rec["inner_iters"]
            outer_res.append(rec["outer"])
            inner_res.append(rec["inner"])
            if profiles is not None:
                for k, e in enumerate(scene.elements):
                    profiles[e.id][i] = sim.profile(k)
    finally:
        sim.close()
    report = ConvergenceReport(outer_iters, inner_iters, outer_res, inner_res, sim.eta)
    meta = {
        "scene": scene.name,
        "dt": cfg.dt,
        "horizon": cfg.horizon,
        "eta": sim.eta,
        "t_ref": sim.t_ref,
        "max_outer_iters_used": int(outer_iters.max(initial=0)),
        "under_relaxation": cfg.under_relaxation,
    }
    return ResultSet(
        t=np.arange(n + 1) * cfg.dt,
        element_ids=[e.id for e in scene.elements],
        zone_names=[z.name for z in sim.zones],
        fields=fields,
        T_zone=T_zone,
        report=report,
        profiles=profiles,
        metadata=meta,
    )
