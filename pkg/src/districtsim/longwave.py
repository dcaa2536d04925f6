"""Long-wave radiosity exchange inside zone enclosures and in the outdoor scene.

Irradiation is ``H_i = sum_j F_ij J_j (+ F_i,sky J_sky)`` and the net flux
``q_i = J_i - H_i`` is positive when the surface loses energy.  The conduction
boundary conditions therefore receive ``-q`` as a gain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

SIGMA = 5.67e-8  # W/(m2.K4)


def sky_radiosity(T_sky: float) -> float:
    if T_sky < 0:
        raise ValueError("sky temperature must be nonnegative (kelvin)")
    return SIGMA * T_sky**4


def sky_temperature(longwave_down: float) -> float:
    """Effective sky temperature from measured down-welling long-wave flux."""
    if longwave_down < 0:
        raise ValueError("long-wave flux must be nonnegative")
    return (longwave_down / SIGMA) ** 0.25


@dataclass
class RadiosityProblem:
    F: np.ndarray
    emissivity: np.ndarray
    T_s: np.ndarray
    J_sky: float | None = None
    F_sky: np.ndarray | None = None

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=float)
        n = self.F.shape[0]
        self.emissivity = np.broadcast_to(np.asarray(self.emissivity, dtype=float), (n,))
        self.T_s = np.asarray(self.T_s, dtype=float)
        if self.F.shape != (n, n) or self.T_s.shape != (n,):
            raise ValueError("inconsistent radiosity problem dimensions")
        if np.any(self.emissivity <= 0) or np.any(self.emissivity > 1):
            raise ValueError("emissivities must lie in (0, 1]")
        if np.any(self.T_s <= 0):
            raise ValueError("surface temperatures must be positive (kelvin)")
        if self.F_sky is not None:
            self.F_sky = np.asarray(self.F_sky, dtype=float)


@dataclass
class RadiositySolution:
    J: np.ndarray
    H: np.ndarray
    q: np.ndarray


class RadiositySolver:
    """Radiosity system of one enclosure with its LU factors cached.

    The matrix ``I - diag(1 - eps) F`` only depends on geometry and
    emissivities, so it is factorized once and reused for every temperature
    field.  ``single_reflection`` replaces the linear solve by one reflection
    pass of the emitted flux.
    """

    def __init__(self, F, emissivity, F_sky=None, single_reflection: bool = False):
        self.F = np.asarray(F, dtype=float)
        n = len(self.F)
        self.eps = np.broadcast_to(np.asarray(emissivity, dtype=float), (n,)).copy()
        if np.any(self.eps <= 0) or np.any(self.eps > 1):
            raise ValueError("emissivities must lie in (0, 1]")
        self.F_sky = None if F_sky is None else np.asarray(F_sky, dtype=float)
        self.single_reflection = single_reflection
        self._lu = None
        if n and not single_reflection:
            self._lu = lu_factor(np.eye(n) - (1.0 - self.eps)[:, None] * self.F)

    def solve(self, T_s: np.ndarray, J_sky: float | None = None) -> RadiositySolution:
        T_s = np.asarray(T_s, dtype=float)
        emitted = self.eps * SIGMA * T_s**4
        sky_in = 0.0
        if J_sky is not None:
            if self.F_sky is None:
                raise ValueError("sky radiosity given but no sky view factors")
            sky_in = self.F_sky * J_sky
        source = emitted + (1.0 - self.eps) * sky_in
        if self.single_reflection:
            J = source + (1.0 - self.eps) * (self.F @ emitted)
        elif len(T_s):
            J = lu_solve(self._lu, source)
        else:
            J = source
        H = self.F @ J + sky_in
        return RadiositySolution(J=J, H=H, q=J - H)


def solve_inside(p: RadiosityProblem, single_reflection: bool = False) -> RadiositySolution:
    """Radiosity balance of a closed enclosure (no sky)."""
    if p.J_sky is not None:
        raise ValueError("an inside enclosure has no sky term")
    return RadiositySolver(p.F, p.emissivity, single_reflection=single_reflection).solve(p.T_s)


def solve_outside(p: RadiosityProblem, single_reflection: bool = False) -> RadiositySolution:
    """Radiosity balance of the outdoor scene including the sky."""
    if p.J_sky is None or p.F_sky is None:
        raise ValueError("the outdoor problem needs the sky radiosity and sky view factors")
    solver = RadiositySolver(p.F, p.emissivity, F_sky=p.F_sky, single_reflection=single_reflection)
    return solver.solve(p.T_s, p.J_sky)
