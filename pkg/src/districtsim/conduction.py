"""1D transient conduction through wall slabs and soil columns.

Each slab is discretized on a uniform grid of ``n_nodes`` nodes spanning the
full construction depth.  The implicit Euler scheme is assembled on half-cell
control volumes at the two faces (equivalent to a ghost-node closure, second
order in space) and solved in the dimensionless variables

    T* = (T - T0) / T0,  x* = x / L,  t* = t / t_ref,  t_ref = c0 L^2 / k0,

so that the Fourier number is one.  Face conductances are exact series
resistances of the piecewise-constant layers, which makes the discrete steady
state coincide with the analytic piecewise-linear profile.

Sign conventions: ``q_net`` is a gain for the face it is applied on.  At
``x = 0`` the boundary row reads ``-k dT/dx = q_net - h (T - T_air)``, at
``x = e`` it reads ``k dT/dx = q_net - h (T - T_air)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.linalg.lapack import dgtsv

WALL = "wall"
SOIL = "soil"
CONVECTIVE = "convective_radiative"
DIRICHLET = "dirichlet"

KELVIN = 273.15


@dataclass(frozen=True)
class MaterialLayer:
    thickness: float  # m
    conductivity: float  # W/(m.K)
    capacity: float  # J/(m3.K)

    def __post_init__(self):
        for name in ("thickness", "conductivity", "capacity"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"layer {name} must be positive, got {v!r}")


@dataclass(frozen=True)
class DimensionlessScaling:
    """Reference values of the dimensionless formulation (``T0`` in kelvin)."""

    T0: float
    length: float
    k0: float
    c0: float

    def __post_init__(self):
        if not self.T0 > 0:
            raise ValueError("reference temperature T0 must be positive (kelvin)")
        if not self.length > 0:
            raise ValueError("characteristic length must be positive")
        if not (self.k0 > 0 and self.c0 > 0):
            raise ValueError("reference properties must be positive")

    @classmethod
    def for_layers(cls, layers: Sequence[MaterialLayer], T0: float = KELVIN + 20.0) -> "DimensionlessScaling":
        """Slab thickness as length, outermost layer as property reference."""
        return cls(T0=T0, length=sum(l.thickness for l in layers), k0=layers[0].conductivity, c0=layers[0].capacity)

    @property
    def t_ref(self) -> float:
        return self.c0 * self.length**2 / self.k0

    @property
    def fourier(self) -> float:
        return self.k0 * self.t_ref / (self.c0 * self.length**2)

    def temperature(self, T):
        return (np.asarray(T, dtype=float) - self.T0) / self.T0

    def temperature_dim(self, T_star):
        return self.T0 * (1.0 + np.asarray(T_star, dtype=float))

    def biot(self, h):
        return np.asarray(h, dtype=float) * self.length / self.k0

    def flux(self, q):
        return np.asarray(q, dtype=float) * self.length / (self.k0 * self.T0)

    def flux_dim(self, q_star):
        return np.asarray(q_star, dtype=float) * self.k0 * self.T0 / self.length

    def time(self, t):
        return np.asarray(t, dtype=float) / self.t_ref


@dataclass(frozen=True)
class SurfaceBC:
    kind: str = CONVECTIVE
    T_air: float = float("nan")  # K
    h: float = 0.0  # W/(m2.K)
    q_net: float = 0.0  # W/m2, gain for the face
    T_fixed: float = float("nan")  # K

    def __post_init__(self):
        if self.kind == CONVECTIVE:
            if self.h < 0:
                raise ValueError("film coefficient must be nonnegative")
            if self.h > 0 and not np.isfinite(self.T_air):
                raise ValueError("convective boundary needs a finite air temperature")
        elif self.kind == DIRICHLET:
            if not np.isfinite(self.T_fixed):
                raise ValueError("dirichlet boundary needs a finite temperature")
        else:
            raise ValueError(f"unknown boundary kind {self.kind!r}")

    @classmethod
    def convective(cls, T_air: float, h: float, q_net: float = 0.0) -> "SurfaceBC":
        return cls(CONVECTIVE, T_air=T_air, h=h, q_net=q_net)

    @classmethod
    def adiabatic(cls) -> "SurfaceBC":
        return cls(CONVECTIVE, T_air=float("nan"), h=0.0, q_net=0.0)

    @classmethod
    def dirichlet(cls, T: float) -> "SurfaceBC":
        return cls(DIRICHLET, T_fixed=T)


@dataclass
class SlabState:
    T: np.ndarray  # K, one value per node
    t: float = 0.0


class Slab1D:
    """Multilayer slab on a uniform grid.

    Attributes
    ----------
    x : ndarray
        Node positions from the front face (m).
    k_node, c_node : ndarray
        Layer properties at the nodes; nodes on a layer interface take the
        harmonic mean conductivity and the mean capacity.
    conductance : ndarray (n_nodes - 1,)
        Face conductances ``k_face / dx`` (W/(m2.K)).
    heat_capacity : ndarray (n_nodes,)
        Control-volume capacities per unit area (J/(m2.K)).
    """

    def __init__(
        self,
        layers: Sequence[MaterialLayer],
        n_nodes: int = 101,
        kind: str = WALL,
        scaling: DimensionlessScaling | None = None,
    ):
        if not layers:
            raise ValueError("a slab needs at least one layer")
        if n_nodes < 3:
            raise ValueError("a slab needs at least 3 nodes")
        if kind not in (WALL, SOIL):
            raise ValueError(f"unknown slab kind {kind!r}")
        self.layers = tuple(layers)
        self.n_nodes = int(n_nodes)
        self.kind = kind
        self.scaling = scaling or DimensionlessScaling.for_layers(self.layers)
        self._build()

    def _build(self):
        bounds = np.concatenate([[0.0], np.cumsum([l.thickness for l in self.layers])])
        k = np.array([l.conductivity for l in self.layers])
        c = np.array([l.capacity for l in self.layers])
        e = bounds[-1]
        n = self.n_nodes
        self.thickness = e
        self.dx = e / (n - 1)
        self.x = np.linspace(0.0, e, n)

        def overlap(a, b):
            lo = np.maximum(a[:, None], bounds[None, :-1])
            hi = np.minimum(b[:, None], bounds[None, 1:])
            return np.clip(hi - lo, 0.0, None)  # (cells, layers)

        # series resistance between neighbouring nodes
        ov = overlap(self.x[:-1], self.x[1:])
        self.conductance = 1.0 / (ov / k).sum(axis=1)
        # control volumes [x - dx/2, x + dx/2] clipped to the slab
        cv_lo = np.clip(self.x - self.dx / 2, 0.0, e)
        cv_hi = np.clip(self.x + self.dx / 2, 0.0, e)
        self.heat_capacity = (overlap(cv_lo, cv_hi) * c).sum(axis=1)

        tol = 1e-12 * e
        k_node = np.empty(n)
        c_node = np.empty(n)
        for i, xi in enumerate(self.x):
            on = np.flatnonzero(np.abs(bounds[1:-1] - xi) <= tol)
            if len(on):
                j = on[0]
                k_node[i] = 2 * k[j] * k[j + 1] / (k[j] + k[j + 1])
                c_node[i] = 0.5 * (c[j] + c[j + 1])
            else:
                j = min(np.searchsorted(bounds, xi, side="right") - 1, len(self.layers) - 1)
                k_node[i] = k[j]
                c_node[i] = c[j]
        self.k_node = k_node
        self.c_node = c_node

        s = self.scaling
        self.x_star = self.x / s.length
        self.k_star = k_node / s.k0
        self.c_star = c_node / s.c0
        # dimensionless system coefficients
        self.conductance_star = self.conductance * s.length / s.k0
        self.capacity_star = self.heat_capacity / (s.c0 * s.length)

    def with_thickness(self, thickness: float) -> "Slab1D":
        """Same single-layer construction with another thickness."""
        if len(self.layers) != 1:
            raise ValueError("thickness rescaling is only defined for single-layer slabs")
        layer = replace(self.layers[0], thickness=thickness)
        return Slab1D([layer], self.n_nodes, self.kind)

    def uniform_state(self, T: float) -> SlabState:
        return SlabState(np.full(self.n_nodes, float(T)))


def nondimensionalize(slab: Slab1D, scaling: DimensionlessScaling) -> Slab1D:
    """Copy of ``slab`` whose dimensionless fields refer to ``scaling``."""
    return Slab1D(slab.layers, slab.n_nodes, slab.kind, scaling)


# ---------------------------------------------------------------------------
# linear algebra


def thomas(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Thomas algorithm for a tridiagonal system; ``lower[0]`` and ``upper[-1]`` are ignored."""
    n = len(diag)
    cp = np.empty(n)
    dp = np.empty(n)
    cp[0] = upper[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        m = diag[i] - lower[i] * cp[i - 1]
        cp[i] = upper[i] / m if i < n - 1 else 0.0
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / m
    x = np.empty(n)
    x[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


def solve_tridiagonal(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Row-by-row tridiagonal solves of (B, N) systems.

    Every row is solved on its own by LAPACK ``gtsv``, so a row's result does
    not depend on which other rows are in the batch.
    """
    out = np.empty_like(rhs)
    for r in range(rhs.shape[0]):
        _, _, _, x, info = dgtsv(lower[r, 1:], diag[r], upper[r, :-1], rhs[r])
        if info != 0:
            raise np.linalg.LinAlgError(f"singular tridiagonal system (info={info})")
        out[r] = x
    return out


# ---------------------------------------------------------------------------
# batched implicit Euler step


def implicit_step(
    g: np.ndarray,
    m: np.ndarray,
    T_old: np.ndarray,
    dt: np.ndarray,
    front: tuple[np.ndarray, np.ndarray, np.ndarray],
    back: tuple[np.ndarray, np.ndarray, np.ndarray],
    back_fixed: np.ndarray,
    T_fixed: np.ndarray,
) -> np.ndarray:
    """One implicit Euler step for a batch of slabs sharing the node count.

    All quantities are dimensionless.  ``g`` (B, N-1) face conductances, ``m``
    (B, N) capacities, ``T_old`` (B, N), ``dt`` (B,).  ``front`` and ``back``
    are ``(Bi, T_air, q_net)`` triples of (B,) arrays.  Rows where
    ``back_fixed`` is true get a Dirichlet last node at ``T_fixed``.
    """
    if not np.all(np.isfinite(T_old)):
        raise FloatingPointError("non-finite slab temperatures")
    B, N = T_old.shape
    a = m / dt[:, None]
    diag = a.copy()
    diag[:, 1:] += g
    diag[:, :-1] += g
    lower = np.zeros((B, N))
    upper = np.zeros((B, N))
    lower[:, 1:] = -g
    upper[:, :-1] = -g
    rhs = a * T_old

    bi_f, ta_f, q_f = front
    diag[:, 0] += bi_f
    rhs[:, 0] += np.where(bi_f > 0, bi_f * ta_f, 0.0) + q_f

    bi_b, ta_b, q_b = back
    conv = ~back_fixed
    diag[:, -1] += np.where(conv, bi_b, 0.0)
    rhs[:, -1] += np.where(conv & (bi_b > 0), bi_b * np.where(conv, ta_b, 0.0), 0.0) + np.where(conv, q_b, 0.0)
    if back_fixed.any():
        diag[back_fixed, -1] = 1.0
        lower[back_fixed, -1] = 0.0
        rhs[back_fixed, -1] = T_fixed[back_fixed]
    if not np.all(np.isfinite(rhs)):
        raise FloatingPointError("non-finite boundary data")
    return solve_tridiagonal(lower, diag, upper, rhs)


def _bc_star(bc: SurfaceBC, s: DimensionlessScaling):
    if bc.kind == DIRICHLET:
        raise ValueError("dirichlet condition is only allowed at the back of a soil column")
    ta = float(s.temperature(bc.T_air)) if bc.h > 0 else 0.0
    return np.array([float(s.biot(bc.h))]), np.array([ta]), np.array([float(s.flux(bc.q_net))])


def _step_one(slab: Slab1D, state: SlabState, bc_out: SurfaceBC, back: SurfaceBC, dt: float) -> SlabState:
    if not dt > 0:
        raise ValueError("time step must be positive")
    if len(state.T) != slab.n_nodes:
        raise ValueError("state length does not match the slab grid")
    s = slab.scaling
    front = _bc_star(bc_out, s)
    if back.kind == DIRICHLET:
        back_arrays = (np.zeros(1), np.zeros(1), np.zeros(1))
        fixed = np.array([True])
        T_fixed = np.array([float(s.temperature(back.T_fixed))])
    else:
        back_arrays = _bc_star(back, s)
        fixed = np.array([False])
        T_fixed = np.zeros(1)
    T_star = implicit_step(
        slab.conductance_star[None],
        slab.capacity_star[None],
        s.temperature(state.T)[None],
        np.array([float(s.time(dt))]),
        front,
        back_arrays,
        fixed,
        T_fixed,
    )[0]
    return SlabState(s.temperature_dim(T_star), state.t + dt)


def step_wall(slab: Slab1D, state: SlabState, bc_out: SurfaceBC, bc_in: SurfaceBC, dt: float) -> SlabState:
    """Advance a wall by one implicit Euler step with convective-radiative faces."""
    if bc_out.kind != CONVECTIVE or bc_in.kind != CONVECTIVE:
        raise ValueError("wall faces take convective_radiative conditions")
    return _step_one(slab, state, bc_out, bc_in, dt)


def step_soil(slab: Slab1D, state: SlabState, bc_out: SurfaceBC, T_deep: float, dt: float) -> SlabState:
    """Advance a soil column; the deepest node is held at ``T_deep``."""
    if slab.kind != SOIL:
        raise ValueError("step_soil needs a soil slab")
    return _step_one(slab, state, bc_out, SurfaceBC.dirichlet(T_deep), dt)


def steady_state(slab: Slab1D, bc_out: SurfaceBC, back: SurfaceBC) -> SlabState:
    """Limit of an infinitely long implicit step."""
    return _step_one(slab, slab.uniform_state(slab.scaling.T0), bc_out, back, np.inf)


def surface_conductive_flux(
    slab: Slab1D,
    state: SlabState,
    side: str,
    previous: SlabState | None = None,
    dt: float | None = None,
) -> float:
    """Conductive flux ``-k dT/dx`` (positive toward +x) at a face, W/m2.

    Without ``previous`` a one-sided second-order stencil is used.  With the
    state of the previous step, the face flux of the discrete scheme itself is
    returned (storage of the half cell plus conduction to the next node), which
    matches the boundary row exactly.
    """
    T = np.asarray(state.T, dtype=float)
    if side not in ("x0", "xe"):
        raise ValueError("side must be 'x0' or 'xe'")
    if previous is not None:
        if dt is None or not dt > 0:
            raise ValueError("dt is required with a previous state")
        Told = np.asarray(previous.T, dtype=float)
        if side == "x0":
            return float(slab.heat_capacity[0] * (T[0] - Told[0]) / dt + slab.conductance[0] * (T[0] - T[1]))
        return float(slab.conductance[-1] * (T[-2] - T[-1]) - slab.heat_capacity[-1] * (T[-1] - Told[-1]) / dt)
    dx = slab.dx
    if side == "x0":
        k = slab.layers[0].conductivity
        return float(-k * (-3 * T[0] + 4 * T[1] - T[2]) / (2 * dx))
    k = slab.layers[-1].conductivity
    return float(-k * (3 * T[-1] - 4 * T[-2] + T[-3]) / (2 * dx))
