import json

import pytest

from qgdefect import cli
from qgdefect.config import SCHEMA
from qgdefect.output import read_csv, without_timestamp

STAR = {"graph": {"generator": "star", "N": 3, "L": 12.0}, "defects": {"kind": "center"},
        "mesh": {"h": 0.2}, "q": 3.0}


def _run(tmp_path, command, cfg, *extra):
    p = tmp_path / f"{command}.in.json"
    p.write_text(json.dumps(cfg))
    out = tmp_path / "out"
    code = cli.main([command, "--config", str(p), "--out", str(out), *extra])
    return code, out


def _load(path):
    return json.loads(path.read_text())


def test_solve_star(tmp_path):
    code, out = _run(tmp_path, "solve", {**STAR, "mu": 4.0})
    assert code == 0
    res = _load(out / "solve.json")["result"]
    assert res["energy"] < 0 and res["certified_negative"]
    assert res["mass"] == pytest.approx(4.0, rel=1e-9)


def test_solve_profile_csv(tmp_path):
    code, out = _run(tmp_path, "solve", {**STAR, "mu": 4.0}, "--format", "csv")
    assert code == 0
    rows = read_csv((out / "solve_profile.csv").read_text())
    assert len(rows) > 10


def test_missing_defects_is_a_config_error(tmp_path, capsys):
    cfg = {k: v for k, v in STAR.items() if k != "defects"}
    code, out = _run(tmp_path, "solve", {**cfg, "mu": 1.0})
    assert code == cli.EXIT_CONFIG
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config"
    assert _load(out / "error.json") == err


def test_wrong_exponent_rejected(tmp_path):
    code, _ = _run(tmp_path, "solve", {**STAR, "q": 4.5, "mu": 1.0})
    assert code == cli.EXIT_CONFIG


def test_sweep_csv_rows(tmp_path):
    code, out = _run(tmp_path, "sweep", {**STAR, "mu": [2.0, 4.0, 8.0]}, "--format", "csv")
    assert code == 0
    text = (out / "sweep.csv").read_text()
    assert text.startswith("# qgdefect")
    rows = read_csv((out / "sweep.csv").read_text())
    assert [float(r["mu"]) for r in rows] == [2.0, 4.0, 8.0]


def test_sweep_svg(tmp_path):
    code, out = _run(tmp_path, "sweep", {**STAR, "mu": [2.0, 4.0]}, "--format", "svg")
    assert code == 0
    svg = (out / "sweep.svg").read_text()
    assert "<svg" in svg and "<metadata>" in svg


def test_spectrum_natural_window(tmp_path):
    cfg = {"graph": {"generator": "grid", "n": 40}, "defects": {"kind": "center"},
           "mesh": {"h": 1.0, "truncation": "natural"}, "spectrum": {"alpha": 1.0}}
    code, out = _run(tmp_path, "spectrum", cfg)
    assert code == 0
    assert _load(out / "spectrum.json")["result"]["lambda"] < 0


def test_construct_grid_exp(tmp_path):
    cfg = {"graph": {"generator": "grid", "n": 6},
           "construct": {"family": "grid_exp", "params": {"mu": 2.0, "q": 3.0},
                         "sweep": {"name": "eps", "values": [0.2, 0.5]}}}
    code, out = _run(tmp_path, "construct", cfg, "--format", "csv")
    assert code == 0
    for r in read_csv((out / "construct.csv").read_text()):
        assert float(r["kinetic_over_mass"]) == pytest.approx(float(r["eps"]) ** 2)


def test_output_is_deterministic(tmp_path):
    cfg = {**STAR, "mu": 4.0}
    texts = []
    for sub in ("a", "b"):
        (tmp_path / sub).mkdir()
        _, out = _run(tmp_path / sub, "solve", cfg)
        texts.append((out / "solve.json").read_text())
    assert "timestamp" in json.loads(texts[0])
    assert without_timestamp(texts[0]) == without_timestamp(texts[1])


def test_threshold_half_line(tmp_path):
    cfg = {"graph": {"generator": "star", "N": 1, "L": 20.0}, "defects": {"kind": "center"},
           "mesh": {"h": 0.5}, "q": 3.0, "threshold": {"bracket": [0.05, 0.5], "rel_tol": 0.05}}
    code, out = _run(tmp_path, "threshold", cfg)
    assert code == 0
    res = _load(out / "threshold.json")["result"]
    assert json.dumps(res)


def test_verify_group(tmp_path):
    code, out = _run(tmp_path, "verify", {"verify": {"groups": ["graph"]}})
    assert code == 0
    assert _load(out / "verify.json")["result"]


def test_schema_file_matches(tmp_path):
    from importlib.resources import files
    shipped = json.loads(files("qgdefect").joinpath("data/run_config.schema.json").read_text())
    assert shipped == json.loads(json.dumps(SCHEMA))


def test_config_for_other_command(tmp_path):
    code, _ = _run(tmp_path, "solve", {**STAR, "mu": 1.0, "command": "sweep"})
    assert code == cli.EXIT_CONFIG
