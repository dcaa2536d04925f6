"""Scene and configuration documents, weather files and result tables.

Scene documents are YAML mappings::

    name: demo
    T_init: 20.0            # degC, initial temperature of everything
    T_deep: 22.7            # degC, deep-ground temperature of soil columns
    n_nodes: 101
    materials:
      concrete: {conductivity: 1.75, capacity: 2.2e6}
    constructions:
      wall: {kind: wall, layers: [[concrete, 0.2]]}   # outermost layer first
    zones:
      cube: {volume: 36.0, c_air: 1200.0, q_v: 0.0}
    groups:
      walls:
        construction: wall
        face: exterior      # or interior (then ``zone`` and ``h`` are required)
        emissivity: 0.9
        albedo: 0.0
        h_out: wind         # or a number
        back: {zone: cube, h: 8.7}   # | {air: 20.0, h: 2.5} | adiabatic | ground
    vertices: [[0, 0, 0], ...]
    triangles: [[0, 1, 2, walls], ...]

Triangles are ordered counter-clockwise seen from the side their face looks
at.  ``vertices``/``triangles`` may live in a separate YAML file named by a
``mesh`` key.  Walls backed by a zone get a coincident reversed interior patch
``<id>.in``.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
from dataclasses import asdict, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .airzone import Zone, ZoneMember
from .conduction import KELVIN, SOIL, WALL, MaterialLayer, Slab1D
from .engine import (
    ADIABATIC, AIR, ELEMENT_FIELDS, GROUND, WIND, ZONE, ConvergenceReport, Element, ResultSet, Scene,
    SimulationConfig,
)
from .geometry import EXTERIOR, INTERIOR, GeometryError, QuadratureSpec, SceneMesh, SurfacePatch
from .weather import WeatherSeries, h_out_correlation, load_weather, write_weather  # noqa: F401

DEFAULT_T_DEEP = 22.7
DEFAULT_EMISSIVITY = 0.9


class SceneError(ValueError):
    """Schema or consistency error in a scene document."""


def _need(d: dict, key: str, where: str):
    if not isinstance(d, dict):
        raise SceneError(f"{where}: expected a mapping")
    if key not in d:
        raise SceneError(f"{where}: missing field {key!r}")
    return d[key]


def _number(v, where: str, positive=False, nonneg=False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SceneError(f"{where}: expected a number, got {v!r}")
    v = float(v)
    if not np.isfinite(v):
        raise SceneError(f"{where}: must be finite")
    if positive and v <= 0:
        raise SceneError(f"{where}: must be positive")
    if nonneg and v < 0:
        raise SceneError(f"{where}: must be nonnegative")
    return v


def _check_keys(d: dict, allowed: set[str], where: str):
    extra = set(d) - allowed
    if extra:
        raise SceneError(f"{where}: unknown field(s) {sorted(extra)}")


def read_document(path: str | Path) -> dict:
    path = Path(path)
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise SceneError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise SceneError(f"{path}: top level must be a mapping")
    mesh_ref = doc.get("mesh")
    if isinstance(mesh_ref, str):
        mesh = read_document(path.parent / mesh_ref)
        doc = dict(doc)
        doc.pop("mesh")
        doc["vertices"] = _need(mesh, "vertices", mesh_ref)
        doc["triangles"] = _need(mesh, "triangles", mesh_ref)
    return doc


def load_scene(path: str | Path) -> Scene:
    """Read and validate a scene document."""
    return build_scene(read_document(path))


def _construction(name: str, spec: dict, materials: dict, n_nodes: int) -> Slab1D:
    where = f"constructions.{name}"
    _check_keys(spec, {"kind", "layers"}, where)
    kind = spec.get("kind", WALL)
    if kind not in (WALL, SOIL):
        raise SceneError(f"{where}.kind: must be 'wall' or 'soil'")
    layers = _need(spec, "layers", where)
    if not isinstance(layers, list) or not layers:
        raise SceneError(f"{where}.layers: needs at least one [material, thickness] entry")
    out = []
    for i, lay in enumerate(layers):
        w = f"{where}.layers[{i}]"
        if not isinstance(lay, list) or len(lay) != 2:
            raise SceneError(f"{w}: expected [material, thickness]")
        mat, th = lay
        if mat not in materials:
            raise SceneError(f"{w}: unknown material {mat!r}")
        m = materials[mat]
        out.append(MaterialLayer(_number(th, w, positive=True), m["conductivity"], m["capacity"]))
    return Slab1D(out, n_nodes, kind)


def build_scene(doc: dict) -> Scene:
    """Validated :class:`Scene` from a parsed scene document."""
    doc = copy.deepcopy(doc)
    _check_keys(
        doc,
        {"name", "T_init", "T_deep", "n_nodes", "quadrature", "materials", "constructions", "zones", "groups",
         "vertices", "triangles", "description"},
        "scene",
    )
    name = str(doc.get("name", "scene"))
    T_init = _number(doc.get("T_init", 20.0), "T_init") + KELVIN
    T_deep = _number(doc.get("T_deep", DEFAULT_T_DEEP), "T_deep") + KELVIN
    n_nodes = doc.get("n_nodes", 101)
    if not isinstance(n_nodes, int) or n_nodes < 3:
        raise SceneError("n_nodes: must be an integer >= 3")
    q = doc.get("quadrature", {}) or {}
    _check_keys(q, {"order", "vis_samples", "tol"}, "quadrature")
    try:
        quad = QuadratureSpec(**q)
    except (TypeError, ValueError) as exc:
        raise SceneError(f"quadrature: {exc}") from None

    materials = {}
    for mname, m in (_need(doc, "materials", "scene") or {}).items():
        w = f"materials.{mname}"
        _check_keys(m, {"conductivity", "capacity", "description"}, w)
        materials[mname] = {
            "conductivity": _number(_need(m, "conductivity", w), f"{w}.conductivity", positive=True),
            "capacity": _number(_need(m, "capacity", w), f"{w}.capacity", positive=True),
        }
    constructions = {
        cname: _construction(cname, c, materials, n_nodes)
        for cname, c in (_need(doc, "constructions", "scene") or {}).items()
    }
    zone_specs = doc.get("zones", {}) or {}
    for zname, z in zone_specs.items():
        w = f"zones.{zname}"
        _check_keys(z, {"volume", "c_air", "q_v"}, w)
        _number(_need(z, "volume", w), f"{w}.volume", positive=True)

    groups = _need(doc, "groups", "scene") or {}
    gspec = {}
    for gname, g in groups.items():
        w = f"groups.{gname}"
        _check_keys(g, {"construction", "face", "zone", "h", "emissivity", "albedo", "h_out", "back"}, w)
        con = _need(g, "construction", w)
        if con not in constructions:
            raise SceneError(f"{w}.construction: unknown construction {con!r}")
        face = g.get("face", EXTERIOR)
        if face not in (EXTERIOR, INTERIOR):
            raise SceneError(f"{w}.face: must be exterior or interior")
        spec = {
            "slab": constructions[con],
            "face": face,
            "emissivity": _number(g.get("emissivity", DEFAULT_EMISSIVITY), f"{w}.emissivity"),
            "albedo": _number(g.get("albedo", 0.0), f"{w}.albedo"),
        }
        if face == INTERIOR:
            zn = _need(g, "zone", w)
            if zn not in zone_specs:
                raise SceneError(f"{w}.zone: unknown zone {zn!r}")
            spec["zone"] = zn
            spec["h"] = _number(_need(g, "h", w), f"{w}.h", nonneg=True)
        else:
            h_out = g.get("h_out", WIND)
            if h_out != WIND:
                h_out = _number(h_out, f"{w}.h_out", nonneg=True)
            spec["h_out"] = h_out
        back = g.get("back", ADIABATIC)
        if back == ADIABATIC:
            spec["back"] = (ADIABATIC, None, 0.0)
        elif back == GROUND:
            spec["back"] = (GROUND, T_deep, 0.0)
        elif isinstance(back, dict):
            if ZONE in back:
                _check_keys(back, {ZONE, "h"}, f"{w}.back")
                if face == INTERIOR:
                    raise SceneError(f"{w}.back: an interior face cannot be backed by another zone")
                if back[ZONE] not in zone_specs:
                    raise SceneError(f"{w}.back.zone: unknown zone {back[ZONE]!r}")
                spec["back"] = (ZONE, back[ZONE], _number(_need(back, "h", f"{w}.back"), f"{w}.back.h", nonneg=True))
            elif AIR in back:
                _check_keys(back, {AIR, "h"}, f"{w}.back")
                T = _number(back[AIR], f"{w}.back.air") + KELVIN
                spec["back"] = (AIR, T, _number(_need(back, "h", f"{w}.back"), f"{w}.back.h", nonneg=True))
            elif GROUND in back:
                _check_keys(back, {GROUND}, f"{w}.back")
                spec["back"] = (GROUND, _number(back[GROUND], f"{w}.back.ground") + KELVIN, 0.0)
            else:
                raise SceneError(f"{w}.back: expected zone, air or ground")
        else:
            raise SceneError(f"{w}.back: expected adiabatic, ground or a mapping")
        if spec["back"][0] == GROUND and spec["slab"].kind != SOIL:
            raise SceneError(f"{w}.back: ground back needs a soil construction")
        if spec["slab"].kind == SOIL and spec["back"][0] != GROUND:
            raise SceneError(f"{w}.back: soil constructions need a ground back")
        gspec[gname] = spec

    verts = _need(doc, "vertices", "scene")
    tris = _need(doc, "triangles", "scene")
    if not isinstance(tris, list) or not tris:
        raise SceneError("triangles: the scene has no patches")
    try:
        V = np.asarray(verts, dtype=float)
    except (TypeError, ValueError):
        raise SceneError("vertices: expected a list of [x, y, z]") from None
    if V.ndim != 2 or V.shape[1] != 3:
        raise SceneError("vertices: expected a list of [x, y, z]")

    patches, elements = [], []
    members: dict[str, list[ZoneMember]] = {z: [] for z in zone_specs}
    count: dict[str, int] = {}
    for t, tri in enumerate(tris):
        w = f"triangles[{t}]"
        if not isinstance(tri, list) or len(tri) != 4:
            raise SceneError(f"{w}: expected [i, j, k, group]")
        *ijk, gname = tri
        if gname not in gspec:
            raise SceneError(f"{w}: unknown group {gname!r}")
        if not all(isinstance(i, int) and 0 <= i < len(V) for i in ijk):
            raise SceneError(f"{w}: vertex index out of range")
        g = gspec[gname]
        k = count.get(gname, 0)
        count[gname] = k + 1
        pid = f"{gname}.{k}"
        try:
            p = SurfacePatch(
                pid, V[ijk], emissivity=g["emissivity"], albedo=g["albedo"], group=gname,
                side=g["face"], zone=g.get("zone"),
            )
        except GeometryError as exc:
            raise SceneError(f"{w}: {exc}") from None
        patches.append(p)
        kind, val, h_back = g["back"]
        kw: dict[str, Any] = {"back": kind}
        if g["face"] == INTERIOR:
            members[g["zone"]].append(ZoneMember(pid, p.area, g["h"]))
        else:
            kw["front_h"] = g["h_out"]
        if kind == ZONE:
            r = p.reversed(pid + ".in", INTERIOR, val)
            patches.append(r)
            members[val].append(ZoneMember(r.id, r.area, h_back))
            kw["back_patch"] = r.id
        elif kind == AIR:
            kw.update(back_T_air=val, back_h=h_back)
        elif kind == GROUND:
            kw["T_deep"] = val
        elements.append(Element(pid, g["slab"], pid, **kw))

    zones = []
    for zname, z in zone_specs.items():
        if not members[zname]:
            raise SceneError(f"zones.{zname}: no surfaces bound this zone")
        zones.append(
            Zone(
                zname,
                float(z["volume"]),
                members[zname],
                c_air=_number(z.get("c_air", 1.2e3), f"zones.{zname}.c_air", positive=True),
                q_v=_number(z.get("q_v", 0.0), f"zones.{zname}.q_v"),
            )
        )
    try:
        return Scene(SceneMesh(patches), elements, zones, T_init=T_init, name=name, quadrature=quad)
    except ValueError as exc:
        raise SceneError(str(exc)) from None


# ---------------------------------------------------------------------------
# run configuration


def load_config(path: str | Path | None, **overrides) -> SimulationConfig:
    """Read a YAML run configuration (``horizon_days`` is accepted for ``horizon``)."""
    data = {}
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ValueError(f"{path}: configuration must be a mapping")
    data.update(overrides)
    if "horizon_days" in data:
        data["horizon"] = float(data.pop("horizon_days")) * 86400.0
    known = {f.name for f in fields(SimulationConfig)}
    extra = set(data) - known
    if extra:
        raise ValueError(f"unknown configuration field(s) {sorted(extra)}")
    return SimulationConfig(**data)


# ---------------------------------------------------------------------------
# results


def file_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_results(rs: ResultSet, out_dir: str | Path, extra_metadata: dict | None = None) -> Path:
    """Write ``results.csv`` (one wide table) and ``metadata.json`` into ``out_dir``.

    Columns are ``t``, ``<field>:<element>`` for every element field,
    ``T_zone:<zone>`` and ``outer_iters``.  Temperatures in kelvin, fluxes in
    W/m2.  Values are written with 17 significant digits so reading them back
    is exact.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = ["t"]
    cols = [rs.t]
    for f in ELEMENT_FIELDS:
        for j, eid in enumerate(rs.element_ids):
            header.append(f"{f}:{eid}")
            cols.append(rs.fields[f][:, j])
    for j, z in enumerate(rs.zone_names):
        header.append(f"T_zone:{z}")
        cols.append(rs.T_zone[:, j])
    iters = np.zeros(len(rs.t))
    if rs.report is not None:
        iters[1:] = rs.report.outer_iters
    header.append("outer_iters")
    cols.append(iters)
    table = np.column_stack(cols)
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in table:
            w.writerow(["%.17g" % x for x in row])
    meta = dict(rs.metadata)
    if rs.report is not None:
        r = rs.report
        meta["convergence"] = {
            "eta": r.eta,
            "outer_iters_max": int(r.outer_iters.max(initial=0)),
            "outer_iters_mean": float(r.outer_iters.mean()) if len(r.outer_iters) else 0.0,
            "inner_iters_max": int(r.inner_iters.max(initial=0)),
            "max_final_residual": r.max_final_residual,
        }
    meta["units"] = {"temperature": "K", "flux": "W/m2", "h": "W/(m2.K)", "t": "s"}
    meta.update(extra_metadata or {})
    with open(out / "metadata.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=_json_default)
    return out


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def read_results(out_dir: str | Path) -> ResultSet:
    out = Path(out_dir)
    with open(out / "results.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(len(rows) - 1, len(header))
    col = {h: i for i, h in enumerate(header)}
    ids = [h.split(":", 1)[1] for h in header if h.startswith(ELEMENT_FIELDS[0] + ":")]
    zones = [h.split(":", 1)[1] for h in header if h.startswith("T_zone:")]
    flds = {f: data[:, [col[f"{f}:{e}"] for e in ids]] for f in ELEMENT_FIELDS}
    T_zone = data[:, [col[f"T_zone:{z}"] for z in zones]].reshape(len(data), len(zones))
    meta = {}
    if (out / "metadata.json").exists():
        with open(out / "metadata.json") as fh:
            meta = json.load(fh)
    iters = data[1:, col["outer_iters"]].astype(int)
    report = ConvergenceReport(iters, np.zeros((len(iters), len(zones)), dtype=int), [], [],
                               meta.get("convergence", {}).get("eta", float("nan")))
    return ResultSet(data[:, col["t"]], ids, zones, flds, T_zone, report=report, metadata=meta)


def config_dict(cfg: SimulationConfig) -> dict:
    return asdict(cfg)
