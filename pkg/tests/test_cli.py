import json

import numpy as np
import pytest

from districtsim.cli import main
from districtsim.geometry import ViewFactorMatrix
from districtsim.io import read_results


@pytest.fixture
def short_config(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text("dt: 900\nhorizon: 7200\n")
    return str(p)


def test_simulate(tmp_path, short_config):
    out = tmp_path / "sim"
    assert main(["simulate", "--scene", "demonstrator.yaml", "--weather", "demonstrator_weather.csv",
                 "--config", short_config, "--out", str(out)]) == 0
    rs = read_results(out)
    assert len(rs.t) == 9 and np.all(np.isfinite(rs.T_front))
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["config"]["horizon"] == 7200 and len(meta["scene_sha256"]) == 64


def test_verify_without_orders(tmp_path):
    assert main(["verify", "--case", "theoretical", "--out", str(tmp_path), "--skip-orders"]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["eps_inf_wall_K"] <= 0.40
    assert (tmp_path / "error_space.csv").exists() and (tmp_path / "error_time.csv").exists()


def test_sensitivity(tmp_path, short_config):
    assert main(["sensitivity", "--scene", "demonstrator.yaml", "--param", "wall-thickness", "--bounds", "0.05,0.04",
                 "--weather", "demonstrator_weather.csv", "--config", short_config, "--out", str(tmp_path)]) == 0
    spec = json.loads((tmp_path / "spec.json").read_text())
    assert spec["reference"] == 0.045
    lines = (tmp_path / "sensitivity.csv").read_text().splitlines()
    assert lines[0].startswith("t_s,element")


def test_viewfactors(tmp_path):
    out = tmp_path / "F.bin"
    assert main(["viewfactors", "--scene", "verification_cube.yaml", "--out", str(out)]) == 0
    assert ViewFactorMatrix.load(out).F.shape == (16, 16)


def test_errors_give_nonzero_exit(tmp_path, capsys):
    assert main(["simulate", "--scene", "missing.yaml", "--weather", "x.csv", "--out", str(tmp_path)]) == 1
    assert "missing.yaml" in capsys.readouterr().err
    bad = tmp_path / "bad.yaml"
    bad.write_text("triangles: []\n")
    assert main(["viewfactors", "--scene", str(bad), "--out", str(tmp_path / "F")]) == 1
    assert main(["sensitivity", "--scene", "demonstrator.yaml", "--param", "albedo", "--bounds", "x",
                 "--weather", "demonstrator_weather.csv", "--out", str(tmp_path)]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["simulate"])
    assert exc.value.code != 0
