import json

import numpy as np
import pytest
import yaml

from conftest import FIXTURES
from svem.cli import main
from svem.config import ConfigError, load_config, parse_config


def write_config(tmp_path, name="run.yaml", **changes):
    data = yaml.safe_load((FIXTURES / "ex1_desk_win.yaml").read_text())
    data["mesh"] = str(FIXTURES / "ex1_desk.mesh")
    data["samples"] = {"n": 1000, "seed": 5}
    for key, val in changes.items():
        if val is None:
            data.pop(key, None)
        else:
            data[key] = val
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


def read_stats(run):
    return np.loadtxt(run / "stats.csv", delimiter=",", skiprows=1)


def test_mesh_info(capsys):
    assert main(["mesh-info", str(FIXTURES / "unit_square.mesh")]) == 0
    assert capsys.readouterr().out.strip() == "dim=2 vertices=4 elements=1"


def test_solve_outputs_and_reruns(tmp_path):
    cfg = write_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["solve", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["solve", "--config", str(cfg), "--out", str(b)]) == 0
    names = ["stats.csv", "trace.csv", "run_manifest.json", "probes/load_y.csv", "pdf/load_y.csv"]
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    header = (a / "stats.csv").read_text().splitlines()[0]
    assert header == "x,y,mean_x,mean_y,std_x,std_y"
    manifest = json.loads((a / "run_manifest.json").read_text())
    assert manifest["config"]["solver"]["kind"] == "win"
    assert "numpy" in manifest["versions"]
    assert "wall_time" not in (a / "trace.csv").read_text()


def test_seed_override_changes_samples(tmp_path):
    cfg = write_config(tmp_path)
    main(["solve", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["solve", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "99"])
    pa = (tmp_path / "a" / "probes" / "load_y.csv").read_text()
    pb = (tmp_path / "b" / "probes" / "load_y.csv").read_text()
    assert pa != pb
    assert json.loads((tmp_path / "b" / "run_manifest.json").read_text())["config"]["samples"]["seed"] == 99


def test_timing_flag(tmp_path):
    cfg = write_config(tmp_path)
    main(["solve", "--config", str(cfg), "--out", str(tmp_path / "a"), "--timing"])
    assert (tmp_path / "a" / "trace.csv").read_text().splitlines()[0].endswith("wall_time")


def test_mcs_zero_sigma_std_is_zero(tmp_path):
    field = {"kernel": "separable-exponential-2d", "sigma": 0.0}
    loads = [{"kind": "point", "set": "load", "value": [0.0, -1000.0]}]
    cfg = write_config(tmp_path, field=field, loads=loads, solver={"kind": "mcs"})
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0
    s = read_stats(tmp_path / "r")
    assert np.all(s[:, 4:] == 0.0)


def test_threads_do_not_change_results(tmp_path):
    cfg = write_config(tmp_path, solver={"kind": "mcs", "chunk": 64})
    main(["solve", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["solve", "--config", str(cfg), "--out", str(tmp_path / "b"), "--threads", "3"])
    assert (tmp_path / "a" / "stats.csv").read_bytes() == (tmp_path / "b" / "stats.csv").read_bytes()


def test_compare_win_vs_mcs(tmp_path, capsys):
    win_cfg = FIXTURES / "ex1_desk_win.yaml"
    mcs_cfg = FIXTURES / "ex1_desk_mcs.yaml"
    main(["solve", "--config", str(win_cfg), "--out", str(tmp_path / "win")])
    main(["solve", "--config", str(mcs_cfg), "--out", str(tmp_path / "mcs")])
    capsys.readouterr()
    assert main(["compare", str(tmp_path / "win"), str(tmp_path / "mcs"), "--out", str(tmp_path / "cmp")]) == 0
    report = dict(line.split() for line in capsys.readouterr().out.strip().splitlines())
    assert float(report["mean_rel_l2"]) <= 0.01
    assert (tmp_path / "cmp" / "pdf_error" / "load_y.csv").exists()


def test_kl_command(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["kl", "--config", str(cfg), "--out", str(tmp_path / "k")]) == 0
    assert capsys.readouterr().out.strip() == "m=2"
    assert (tmp_path / "k" / "kl" / "modes.csv").exists()


@pytest.mark.parametrize(
    "changes, message",
    [
        ({"solver": {"kind": "fem"}}, "solver.kind"),
        ({"solver": {"kind": "win", "eps_u": -1}}, "eps_u"),
        ({"material": {"model": "plane-strain", "E0": 1, "nu": 0.3}}, "material.model"),
        ({"loads": []}, "load"),
        ({"dirichlet": ["nowhere"]}, "nowhere"),
        ({"mesh": "missing.mesh"}, "not found"),
        ({"bogus": 1}, "unknown"),
        ({"dirichlet_values": [1.0]}, "Dirichlet"),
    ],
)
def test_config_errors_exit_nonzero(tmp_path, capsys, changes, message):
    cfg = write_config(tmp_path, **changes)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) != 0
    assert message in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "none.yaml"), "--out", str(tmp_path)]) == 1
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.yaml")


def test_parse_config_defaults():
    cfg = parse_config(
        {"mesh": str(FIXTURES / "ex1_desk.mesh"), "material": {"model": "plane-stress", "E0": 100, "nu": 0.3},
         "loads": [{"kind": "body", "value": [0, -1]}], "solver": {"kind": "pc"}}
    )
    assert cfg.n_samples == 10_000 and cfg.tol == 1e-3 and cfg.lengths == "extent"
    assert cfg.kernel == "separable-exponential-2d"
