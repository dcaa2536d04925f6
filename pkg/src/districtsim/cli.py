"""Command-line entry point: ``districtsim {simulate,verify,sensitivity,viewfactors}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io as dio
from .conduction import KELVIN
from .scenes import data_path

log = logging.getLogger("districtsim")


def _resolve(path: str) -> Path:
    """A file path, falling back to the bundled data directory."""
    p = Path(path)
    if p.exists():
        return p
    bundled = data_path(path)
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"file not found: {path}")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([f"{x:.10g}" if isinstance(x, (float, np.floating)) else x for x in r])


def cmd_simulate(args) -> None:
    from .engine import run

    scene_path = _resolve(args.scene)
    scene = dio.load_scene(scene_path)
    overrides = {"workers": args.workers} if args.workers else {}
    cfg = dio.load_config(_resolve(args.config) if args.config else None, **overrides)
    weather_path = _resolve(args.weather)
    weather = dio.load_weather(weather_path, cfg.dt, cfg.horizon)
    scene.view_factor_matrix(args.vf_cache)
    t0 = time.perf_counter()
    rs = run(scene, weather, cfg)
    elapsed = time.perf_counter() - t0
    out = dio.write_results(rs, args.out, {
        "config": dio.config_dict(cfg),
        "scene_file": str(scene_path),
        "scene_sha256": dio.file_hash(scene_path),
        "scene_geometry_hash": scene.mesh.content_hash(),
        "weather_file": str(weather_path),
        "weather_sha256": dio.file_hash(weather_path),
        "runtime_s": elapsed,
    })
    print(f"{cfg.n_steps} steps in {elapsed:.1f} s, max outer iterations {rs.report.outer_iters.max(initial=0)}; "
          f"results in {out}")


def cmd_verify(args) -> None:
    from .verify import TheoreticalCase, convergence_orders, verify_theoretical

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    case = TheoreticalCase()
    res = verify_theoretical(args.dt, args.nodes, case)
    x = np.linspace(0.0, case.thickness, args.nodes)
    _write_csv(out / "error_space.csv", ["x_m", "eps2_K"], zip(x, res.wall.eps2_x))
    _write_csv(out / "error_time.csv", ["t_s", "eps2_K", "T_air_C", "T_air_ref_C"],
               zip(res.t, res.wall.eps2_t, res.T_air, res.reference.air))
    summary = {
        "dt": args.dt, "n_nodes": args.nodes, "eps_inf_wall_K": res.wall.eps_inf, "air_rmse_K": res.air_rmse,
        "face_eps2_K": res.face_errors, "reference_self_check_K": res.reference.self_check,
        "runtime_s": res.runtime,
    }
    print(f"wall eps_inf = {res.wall.eps_inf:.4f} K, air error = {res.air_rmse:.4f} K")
    if not args.skip_orders:
        study = convergence_orders(case)
        rows = study.rows()
        _write_csv(out / "convergence.csv", list(rows[0]), [list(r.values()) for r in rows])
        summary.update(p_time=study.p_time, p_space=study.p_space)
        print(f"observed order: time {study.p_time:.3f}, space {study.p_space:.3f}")
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)


def cmd_sensitivity(args) -> None:
    from .engine import SimulationConfig
    from .verify import SensitivitySpec, scene_sensitivity

    param = args.param.replace("-", "_")
    scene_path = _resolve(args.scene)
    doc = dio.read_document(scene_path)
    try:
        lo, hi = (float(v) for v in args.bounds.split(","))
    except ValueError:
        raise ValueError("--bounds expects two comma-separated numbers") from None
    groups = args.groups.split(",") if args.groups else None
    reference = args.reference
    if reference is None:
        reference = _reference_value(doc, param, groups)
    spec = SensitivitySpec(param, reference, hi, lo)
    cfg = dio.load_config(_resolve(args.config)) if args.config else SimulationConfig()
    weather = dio.load_weather(_resolve(args.weather), cfg.dt, cfg.horizon)
    res, base = scene_sensitivity(doc, spec, weather, cfg, groups)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for j, eid in enumerate(base.element_ids):
        for i, t in enumerate(base.t):
            rows.append((t, eid, res.value[i, j] - KELVIN, res.derivative[i, j],
                         res.band_low[i, j] - KELVIN, res.band_high[i, j] - KELVIN))
    _write_csv(out / "sensitivity.csv", ["t_s", "element", "T_C", "dT_dp", "band_low_C", "band_high_C"], rows)
    with open(out / "spec.json", "w") as fh:
        json.dump({"parameter": param, "reference": reference, "upper": hi, "lower": lo, "groups": groups}, fh,
                  indent=2)
    print(f"max |dT/dp| = {np.nanmax(np.abs(res.derivative)):.4g} K per unit of {param}")


def _reference_value(doc: dict, param: str, groups) -> float:
    from .verify import perturbed_document  # noqa: F401  (validates names the same way)

    gs = doc["groups"]
    names = groups or [g for g, s in gs.items()
                       if doc["constructions"][s["construction"]].get("kind", "wall") == "wall"
                       and s.get("face", "exterior") == "exterior"]
    if not names:
        raise ValueError("no groups to perturb")
    g = gs[names[0]]
    if param == "albedo":
        return float(g.get("albedo", 0.0))
    if param == "wall_thickness":
        return float(doc["constructions"][g["construction"]]["layers"][0][1])
    raise ValueError(f"unknown parameter {param!r}")


def cmd_viewfactors(args) -> None:
    scene = dio.load_scene(_resolve(args.scene))
    t0 = time.perf_counter()
    vf = scene.view_factor_matrix()
    vf.save(args.out)
    print(f"{len(vf.ids)} patches, view factors in {time.perf_counter() - t0:.1f} s -> {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="districtsim", description="Coupled urban-surface and building-zone thermal model")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scene against a weather file")
    s.add_argument("--scene", required=True)
    s.add_argument("--weather", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--vf-cache")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify", help="run the sinusoidal verification case")
    s.add_argument("--case", choices=["theoretical"], default="theoretical")
    s.add_argument("--out", required=True)
    s.add_argument("--dt", type=float, default=900.0)
    s.add_argument("--nodes", type=int, default=101)
    s.add_argument("--skip-orders", action="store_true", help="skip the convergence-order sweep")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("sensitivity", help="central-difference sensitivity to one parameter")
    s.add_argument("--scene", required=True)
    s.add_argument("--param", required=True, choices=["albedo", "wall-thickness"])
    s.add_argument("--bounds", required=True, help="upper,lower values, e.g. 0.6,0.69")
    s.add_argument("--reference", type=float)
    s.add_argument("--groups", help="comma-separated groups to perturb")
    s.add_argument("--weather", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sensitivity)

    s = sub.add_parser("viewfactors", help="assemble and store the view-factor matrix")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_viewfactors)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # every failure becomes a diagnostic and a nonzero exit
        if args.verbose:
            raise
        print(f"districtsim: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
