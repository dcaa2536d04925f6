"""Weather forcing: delimited-text series, interpolation and the wind film coefficient."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conduction import KELVIN
from .longwave import sky_temperature

log = logging.getLogger(__name__)

SW_PREFIX = "sw."
QV_PREFIX = "qv."


def h_out_correlation(v: float) -> float:
    """Exterior film coefficient from wind speed, ``3.8 v + 5`` W/(m2.K)."""
    if v < 0:
        raise ValueError(f"wind speed must be nonnegative, got {v}")
    if v > 5.0:
        warnings.warn(f"wind speed {v:.3g} m/s is beyond the correlation's 5 m/s range", stacklevel=2)
    return 3.8 * v + 5.0


@dataclass
class WeatherSample:
    """Boundary data at one instant.  Temperatures in kelvin."""

    t: float
    T_out: float
    wind: float = 0.0
    T_sky: float | None = None
    sw: dict[str, float] = field(default_factory=dict)
    q_v: dict[str, float] = field(default_factory=dict)


@dataclass
class WeatherSeries:
    """Tabulated weather, linearly interpolated in time.

    Attributes
    ----------
    t : ndarray
        Record times in seconds from the start of the run, strictly increasing.
    T_out, T_sky : ndarray
        Air and effective sky temperatures (K).
    wind : ndarray
        Wind speed (m/s).
    sw : dict
        Incident short-wave flux per surface group (W/m2).
    q_v : dict
        Zone heat sources (W).
    """

    t: np.ndarray
    T_out: np.ndarray
    wind: np.ndarray
    T_sky: np.ndarray
    sw: dict[str, np.ndarray] = field(default_factory=dict)
    q_v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        n = len(self.t)
        if n == 0:
            raise ValueError("weather series is empty")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("weather timestamps must be strictly increasing")
        for name in ("T_out", "wind", "T_sky"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != (n,):
                raise ValueError(f"weather column {name} has the wrong length")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"weather column {name} has non-finite values")
            setattr(self, name, a)
        if np.any(self.wind < 0):
            raise ValueError("wind speed must be nonnegative")
        if np.any(self.T_out <= 0) or np.any(self.T_sky < 0):
            raise ValueError("temperatures must be in kelvin")
        for d, what in ((self.sw, "short-wave"), (self.q_v, "source")):
            for k in list(d):
                d[k] = np.asarray(d[k], dtype=float)
                if d[k].shape != (n,) or not np.all(np.isfinite(d[k])):
                    raise ValueError(f"{what} column {k!r} is malformed")
        for k, a in self.sw.items():
            if np.any(a < 0):
                raise ValueError(f"short-wave column {k!r} has negative values")

    def covers(self, horizon: float) -> bool:
        return self.t[0] <= 0.0 and self.t[-1] >= horizon

    def check_coverage(self, horizon: float) -> None:
        if not self.covers(horizon):
            raise ValueError(
                f"weather covers [{self.t[0]:g}, {self.t[-1]:g}] s but the run needs [0, {horizon:g}] s"
            )

    def _interp(self, a: np.ndarray, t: float) -> float:
        return float(np.interp(t, self.t, a))

    def sample(self, t: float) -> WeatherSample:
        if t < self.t[0] or t > self.t[-1]:
            raise ValueError(f"time {t:g} s is outside the weather record")
        return WeatherSample(
            t=t,
            T_out=self._interp(self.T_out, t),
            wind=self._interp(self.wind, t),
            T_sky=self._interp(self.T_sky, t),
            sw={k: self._interp(v, t) for k, v in self.sw.items()},
            q_v={k: self._interp(v, t) for k, v in self.q_v.items()},
        )

    def on_grid(self, dt: float, horizon: float) -> "WeatherSeries":
        """Series resampled at ``0, dt, ..., horizon``."""
        self.check_coverage(horizon)
        tg = np.arange(int(round(horizon / dt)) + 1) * dt
        f = lambda a: np.interp(tg, self.t, a)  # noqa: E731
        return WeatherSeries(
            tg, f(self.T_out), f(self.wind), f(self.T_sky),
            {k: f(v) for k, v in self.sw.items()}, {k: f(v) for k, v in self.q_v.items()},
        )


def load_weather(path: str | Path, dt: float | None = None, horizon: float | None = None) -> WeatherSeries:
    """Read a weather file.

    Columns are matched by header name: ``t`` (s), ``T_out`` (degC), ``v``
    (m/s), either ``T_sky`` (degC) or ``L_down`` (W/m2), ``sw.<group>``
    (W/m2, incident) and optionally ``qv.<zone>`` (W).  Lines starting with
    ``#`` are ignored.  With ``dt`` and ``horizon`` the series is checked for
    coverage and resampled onto the simulation grid.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if line.strip() and not line.lstrip().startswith("#"))]
    if len(rows) < 2:
        raise ValueError(f"{path}: no weather records")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise ValueError(f"{path}: duplicate column names")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric weather value ({exc})") from None
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    col = {h: data[:, i] for i, h in enumerate(header)}
    for req in ("t", "T_out", "v"):
        if req not in col:
            raise ValueError(f"{path}: missing column {req!r}")
    if "T_sky" in col:
        T_sky = col["T_sky"] + KELVIN
    elif "L_down" in col:
        T_sky = np.array([sky_temperature(x) for x in col["L_down"]])
    else:
        raise ValueError(f"{path}: need a T_sky or L_down column")
    ws = WeatherSeries(
        t=col["t"],
        T_out=col["T_out"] + KELVIN,
        wind=col["v"],
        T_sky=T_sky,
        sw={h[len(SW_PREFIX):]: col[h] for h in header if h.startswith(SW_PREFIX)},
        q_v={h[len(QV_PREFIX):]: col[h] for h in header if h.startswith(QV_PREFIX)},
    )
    if horizon is not None:
        ws.check_coverage(horizon)
        if dt is not None:
            ws = ws.on_grid(dt, horizon)
    return ws


def write_weather(ws: WeatherSeries, path: str | Path) -> None:
    header = ["t", "T_out", "v", "T_sky"] + [SW_PREFIX + k for k in ws.sw] + [QV_PREFIX + k for k in ws.q_v]
    cols = [ws.t, ws.T_out - KELVIN, ws.wind, ws.T_sky - KELVIN] + list(ws.sw.values()) + list(ws.q_v.values())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([f"{x:.10g}" for x in row])
