"""Air energy balance of a building zone, integrated with implicit Euler."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conduction import DimensionlessScaling


@dataclass(frozen=True)
class ZoneMember:
    patch_id: str
    area: float  # m2
    h: float  # W/(m2.K)

    def __post_init__(self):
        if self.area < 0 or self.h < 0:
            raise ValueError(f"zone member {self.patch_id}: area and film coefficient must be nonnegative")


@dataclass
class Zone:
    name: str
    volume: float  # m3
    members: tuple[ZoneMember, ...]
    c_air: float = 1.2e3  # J/(m3.K)
    q_v: float = 0.0  # W, used when the weather carries no source column
    members_hS: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.volume > 0:
            raise ValueError(f"zone {self.name}: volume must be positive")
        if not self.c_air > 0:
            raise ValueError(f"zone {self.name}: air capacity must be positive")
        self.members = tuple(self.members)
        if not self.members:
            raise ValueError(f"zone {self.name}: no bounding surfaces")
        self.members_hS = np.array([m.h * m.area for m in self.members])

    @property
    def heat_capacity(self) -> float:
        return self.c_air * self.volume


@dataclass
class ZoneState:
    T_in: float  # K
    t: float = 0.0


def step_air(zone: Zone, state: ZoneState, surface_temps, q_v: float, dt: float) -> ZoneState:
    """Implicit Euler update of the zone air temperature."""
    T_s = np.asarray(surface_temps, dtype=float)
    if T_s.shape != (len(zone.members),):
        raise ValueError("one surface temperature per zone member is required")
    if not dt > 0:
        raise ValueError("time step must be positive")
    a = zone.heat_capacity / dt
    hS = zone.members_hS
    T = (a * state.T_in + q_v + hS @ T_s) / (a + hS.sum())
    return ZoneState(float(T), state.t + dt)


def theta_coefficients(zone: Zone, scaling: DimensionlessScaling) -> np.ndarray:
    """Dimensionless coupling numbers S_j h_j t_ref / (V c_air)."""
    return zone.members_hS * scaling.t_ref / zone.heat_capacity


def source_reference(zone: Zone, scaling: DimensionlessScaling) -> float:
    """Reference power for the dimensionless source, sum(h S) T0."""
    return float(zone.members_hS.sum() * scaling.T0)


def step_air_dimensionless(
    zone: Zone, scaling: DimensionlessScaling, T_in_star: float, surface_star, q_v_star: float, dt_star: float
) -> float:
    """Same update in dimensionless form.

    With the source referenced to ``sum(h S) T0`` the balance reads
    ``dT*/dt* = Theta q_v* + sum theta_j (T*_j - T*_in)`` with ``Theta = sum theta_j``.
    """
    theta = theta_coefficients(zone, scaling)
    big = theta.sum()
    num = T_in_star / dt_star + big * q_v_star + theta @ np.asarray(surface_star, dtype=float)
    return float(num / (1.0 / dt_star + big))
