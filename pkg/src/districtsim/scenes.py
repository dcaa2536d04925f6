"""Generators for the bundled scenes and the synthetic clear-sky weather.

The bundled YAML and CSV files under ``districtsim/data`` are produced by the
functions here (``python -m districtsim.scenes`` rewrites them).
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .geometry import EXTERIOR, INTERIOR, segment_hits

# material properties: conductivity W/(m.K), volumetric capacity J/(m3.K)
CONCRETE = {"conductivity": 1.75, "capacity": 2.2e6}
TANK = {"conductivity": 2.37, "capacity": 1.98e6}
SLAB = {"conductivity": 2.05, "capacity": 1.95e6}
SAND_GRAVEL = {"conductivity": 1.80, "capacity": 1.40e6}
NATURAL_SOIL = {"conductivity": 1.3, "capacity": 1.44e6}

# demonstrator layout (m)
ROWS_X = [(0.0, 1.12), (2.32, 3.44), (4.64, 5.76)]
ROW_LENGTH = 5.06
HEIGHT = 1.24
GROUND_X = [-1.2, 0.0, 1.12, 2.32, 3.44, 4.64, 5.76, 6.96]
GROUND_Y = [-1.2, 0.0, ROW_LENGTH / 3, 2 * ROW_LENGTH / 3, ROW_LENGTH, 5.66, 6.26]
BUILDINGS = "ABCDEFGHI"
STUDIED = "E"
WALL_THICKNESS = 0.045
SOIL_LAYERS = [["slab", 0.04], ["sand_gravel", 0.8], ["natural_soil", 1.16]]
LATITUDE = 46.15  # deg
DAY_OF_YEAR = 214  # early August


def data_path(name: str) -> Path:
    return Path(str(resources.files("districtsim") / "data" / name))


class _Mesh:
    def __init__(self):
        self.vertices: list[list[float]] = []
        self.triangles: list[list] = []
        self._index: dict[tuple, int] = {}

    def vertex(self, p) -> int:
        key = tuple(round(float(c), 9) for c in p)
        if key not in self._index:
            self._index[key] = len(self.vertices)
            self.vertices.append([float(c) for c in key])
        return self._index[key]

    def quad(self, corners, group: str):
        """Two triangles of a planar quad given counter-clockwise about its normal."""
        a, b, c, d = (self.vertex(p) for p in corners)
        self.triangles.append([a, b, c, group])
        self.triangles.append([a, c, d, group])


def _rect_x(x, y0, y1, z0, z1, outward):
    """Vertical rectangle in the plane x = const facing ``outward`` (+1 or -1) along x."""
    if outward > 0:
        return [(x, y0, z0), (x, y1, z0), (x, y1, z1), (x, y0, z1)]
    return [(x, y1, z0), (x, y0, z0), (x, y0, z1), (x, y1, z1)]


def _rect_y(y, x0, x1, z0, z1, outward):
    if outward > 0:
        return [(x1, y, z0), (x0, y, z0), (x0, y, z1), (x1, y, z1)]
    return [(x0, y, z0), (x1, y, z0), (x1, y, z1), (x0, y, z1)]


def _rect_z(z, x0, x1, y0, y1, up):
    if up > 0:
        return [(x0, y0, z), (x1, y0, z), (x1, y1, z), (x0, y1, z)]
    return [(x0, y0, z), (x0, y1, z), (x1, y1, z), (x1, y0, z)]


def cube_document(n_nodes: int = 101) -> dict:
    """Four 3 x 4 m concrete walls around a 36 m3 air volume."""
    m = _Mesh()
    a, H = 3.0, 4.0
    m.quad(_rect_y(0.0, 0.0, a, 0.0, H, -1), "walls")
    m.quad(_rect_x(a, 0.0, a, 0.0, H, +1), "walls")
    m.quad(_rect_y(a, 0.0, a, 0.0, H, +1), "walls")
    m.quad(_rect_x(0.0, 0.0, a, 0.0, H, -1), "walls")
    return {
        "name": "verification-cube",
        "T_init": 20.0,
        "n_nodes": n_nodes,
        "materials": {"concrete": dict(CONCRETE)},
        "constructions": {"wall": {"kind": "wall", "layers": [["concrete", 0.2]]}},
        "zones": {"cube": {"volume": 36.0, "c_air": 1.2e3, "q_v": 0.0}},
        "groups": {
            "walls": {
                "construction": "wall",
                "face": EXTERIOR,
                "emissivity": 0.9,
                "albedo": 0.0,
                "h_out": 23.2,
                "back": {"zone": "cube", "h": 8.7},
            }
        },
        "vertices": m.vertices,
        "triangles": m.triangles,
    }


def demonstrator_document(n_nodes: int = 101, T_indoor: float = 20.0) -> dict:
    """Three rows of low buildings over a soil column, with one studied zone.

    Rows run north-south (+y is north).  Each row holds three buildings; the
    middle building of the middle row is the studied zone, the others keep a
    fixed indoor air temperature.  The studied zone's partitions with its
    neighbours are symmetric double walls, modelled as adiabatic.
    """
    m = _Mesh()
    groups: dict[str, dict] = {}
    ys = GROUND_Y[1:5]
    wall_ext = {"construction": "wall", "face": EXTERIOR, "emissivity": 0.9, "albedo": 0.64, "h_out": "wind"}

    def back(name, h):
        return {"zone": name, "h": h} if name == STUDIED else {"air": T_indoor, "h": h}

    for r, (x0, x1) in enumerate(ROWS_X):
        for s in range(3):
            name = BUILDINGS[3 * r + s]
            y0, y1 = ys[s], ys[s + 1]
            groups[f"{name}.roof"] = dict(wall_ext, back=back(name, 5.0))
            m.quad(_rect_z(HEIGHT, x0, x1, y0, y1, +1), f"{name}.roof")
            groups[f"{name}.west"] = dict(wall_ext, back=back(name, 2.5))
            m.quad(_rect_x(x0, y0, y1, 0.0, HEIGHT, -1), f"{name}.west")
            groups[f"{name}.east"] = dict(wall_ext, back=back(name, 2.5))
            m.quad(_rect_x(x1, y0, y1, 0.0, HEIGHT, +1), f"{name}.east")
            if s == 0:
                groups[f"{name}.south"] = dict(wall_ext, back=back(name, 2.5))
                m.quad(_rect_y(y0, x0, x1, 0.0, HEIGHT, -1), f"{name}.south")
            if s == 2:
                groups[f"{name}.north"] = dict(wall_ext, back=back(name, 2.5))
                m.quad(_rect_y(y1, x0, x1, 0.0, HEIGHT, +1), f"{name}.north")
            if name == STUDIED:
                # interior faces look into the zone
                groups[f"{name}.partition"] = {
                    "construction": "wall", "face": INTERIOR, "zone": name, "h": 2.5, "emissivity": 0.9,
                    "back": "adiabatic",
                }
                m.quad(_rect_y(y0, x0, x1, 0.0, HEIGHT, +1), f"{name}.partition")
                m.quad(_rect_y(y1, x0, x1, 0.0, HEIGHT, -1), f"{name}.partition")
                groups[f"{name}.floor"] = {
                    "construction": "soil", "face": INTERIOR, "zone": name, "h": 0.7, "emissivity": 0.9,
                    "back": "ground",
                }
                m.quad(_rect_z(0.0, x0, x1, y0, y1, +1), f"{name}.floor")

    footprint = set()
    for x0, x1 in ROWS_X:
        for s in range(3):
            footprint.add((GROUND_X.index(x0), s + 1))
    for i in range(len(GROUND_X) - 1):
        for j in range(len(GROUND_Y) - 1):
            if (i, j) in footprint:
                continue
            g = f"ground.{i}.{j}"
            groups[g] = {
                "construction": "soil", "face": EXTERIOR, "emissivity": 0.9, "albedo": 0.36, "h_out": 5.0,
                "back": "ground",
            }
            m.quad(_rect_z(0.0, GROUND_X[i], GROUND_X[i + 1], GROUND_Y[j], GROUND_Y[j + 1], +1), g)

    return {
        "name": "demonstrator",
        "T_init": 20.0,
        "T_deep": 22.7,
        "n_nodes": n_nodes,
        "quadrature": {"order": 16, "vis_samples": 4, "tol": 1e-3},
        "materials": {
            "tank": dict(TANK), "slab": dict(SLAB), "sand_gravel": dict(SAND_GRAVEL),
            "natural_soil": dict(NATURAL_SOIL),
        },
        "constructions": {
            "wall": {"kind": "wall", "layers": [["tank", WALL_THICKNESS]]},
            "soil": {"kind": "soil", "layers": [list(x) for x in SOIL_LAYERS]},
        },
        "zones": {STUDIED: {"volume": 2.30, "c_air": 1.2e3, "q_v": 0.0}},
        "groups": groups,
        "vertices": m.vertices,
        "triangles": m.triangles,
    }


# ---------------------------------------------------------------------------
# clear-sky forcing


def sun_direction(t: float, latitude: float = LATITUDE, day_of_year: int = DAY_OF_YEAR) -> np.ndarray:
    """Unit vector toward the sun (x east, y north, z up); ``t`` in s of local solar time."""
    day = day_of_year + int(t // 86400)
    decl = np.radians(23.45) * np.sin(2 * np.pi * (284 + day) / 365.0)
    hour = (t % 86400) / 3600.0
    omega = np.radians(15.0 * (hour - 12.0))
    phi = np.radians(latitude)
    east = -np.cos(decl) * np.sin(omega)
    north = np.cos(phi) * np.sin(decl) - np.sin(phi) * np.cos(decl) * np.cos(omega)
    up = np.sin(phi) * np.sin(decl) + np.cos(phi) * np.cos(decl) * np.cos(omega)
    return np.array([east, north, up])


def clear_sky(sin_alt: float) -> tuple[float, float]:
    """Direct-normal and diffuse-horizontal irradiance (W/m2) of a clear sky."""
    if sin_alt <= 0.01:
        return 0.0, 0.0
    air_mass = 1.0 / sin_alt
    dni = 1353.0 * 0.7 ** (air_mass**0.678)
    return dni, 0.1 * dni * sin_alt


def synthetic_weather(scene, days: int = 3, step: float = 3600.0, T_mean: float = 24.0, T_amp: float = 6.0):
    """Hourly clear-sky weather for ``scene`` (a :class:`~districtsim.engine.Scene`).

    Incident short-wave per group combines the direct beam on the sunlit part
    of each patch (ray cast toward the sun against the exterior patches) with
    isotropic diffuse light weighted by the patch's sky view factor.
    """
    from .weather import WeatherSeries

    mesh = scene.mesh
    vf = scene.view_factor_matrix()
    ext = [k for k, p in enumerate(mesh.patches) if p.side == EXTERIOR]
    tris = np.stack([mesh.patches[k].vertices for k in ext])
    normals = np.stack([mesh.patches[k].normal for k in ext])
    areas = np.array([mesh.patches[k].area for k in ext])
    sky = vf.sky[ext]
    group_of = [mesh.patches[k].group for k in ext]
    names = sorted(set(group_of))
    gidx = np.array([names.index(g) for g in group_of])
    garea = np.bincount(gidx, weights=areas, minlength=len(names))
    bary = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3], [1 / 3, 1 / 3, 1 / 3]])
    pts = np.einsum("sk,pkj->psj", bary, tris)  # (P, 4, 3)
    origin = pts.reshape(-1, 3)
    owner = np.repeat(np.arange(len(ext)), len(bary))
    skip = np.arange(len(ext))[None, :] == owner[:, None]
    reach = 100.0

    t = np.arange(0.0, days * 86400.0 + 0.5 * step, step)
    hours = t / 3600.0
    T_out = T_mean + T_amp * np.sin(2 * np.pi * (hours - 9.0) / 24.0)
    wind = 1.5 + 1.0 * np.sin(2 * np.pi * (hours - 10.0) / 24.0)
    T_sky = T_out - 15.0
    sw = np.zeros((len(t), len(names)))
    for n, tn in enumerate(t):
        s = sun_direction(tn)
        dni, dhi = clear_sky(s[2])
        if dni == 0.0 and dhi == 0.0:
            continue
        cos_i = np.clip(normals @ s, 0.0, None)
        lit = np.zeros(len(ext))
        facing = cos_i > 0
        if facing.any():
            rows = facing[owner]
            o = origin[rows] + 1e-6 * normals[owner[rows]]
            hit = segment_hits(o, o + reach * s, tris, skip[rows])
            lit = np.bincount(owner[rows], weights=(~hit).astype(float), minlength=len(ext)) / len(bary)
        q = dni * cos_i * lit + dhi * sky
        sw[n] = np.bincount(gidx, weights=q * areas, minlength=len(names)) / garea
    return WeatherSeries(
        t=t,
        T_out=T_out + 273.15,
        wind=wind,
        T_sky=T_sky + 273.15,
        sw={g: sw[:, i] for i, g in enumerate(names)},
    )


def dump_document(doc: dict, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, default_flow_style=None, sort_keys=False, width=120)


def write_bundled(target: str | Path | None = None) -> None:
    """Regenerate the bundled scenes, weather and run configurations."""
    from .io import build_scene
    from .weather import write_weather

    out = Path(target) if target else data_path("")
    out.mkdir(parents=True, exist_ok=True)
    dump_document(cube_document(), out / "verification_cube.yaml")
    demo = demonstrator_document()
    dump_document(demo, out / "demonstrator.yaml")
    write_weather(synthetic_weather(build_scene(demo)), out / "demonstrator_weather.csv")
    with open(out / "demonstrator_config.yaml", "w") as fh:
        yaml.safe_dump(DEMONSTRATOR_CONFIG, fh, sort_keys=False)


DEMONSTRATOR_CONFIG = {
    "dt": 900.0,
    "horizon_days": 3,
    "eta_factor": 0.01,
    "max_outer_iters": 50,
    "max_inner_iters": 50,
    "under_relaxation": 1.0,
    "outside_longwave": True,
    "inside_longwave": True,
}


if __name__ == "__main__":
    write_bundled()
