import json
import os

import pytest

from heatlab import io
from heatlab.cli import EXIT_ASSERT, EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from heatlab.config import SCHEMA, build_config, dump_config, load_config, parse_text
from heatlab.errors import ConfigurationError

SMALL_STEER = """\
scenario = NonnegSteer
grid.n_nodes = 21
time.T = 0.5
time.tau = 1e-2
data.amplitude = -1   # constant datum
hum.eps_list = 1e-1, 1e-2
"""

SMOOTH_DIRICHLET = """\
scenario = SmoothingCheck
grid.n_nodes = 51
grid.bc = dirichlet
smoothing.t_lo = 0.1
smoothing.t_hi = 1.0
time.tau = 1e-2
"""


@pytest.fixture
def cfg_file(tmp_path):
    def make(text, name="run.cfg"):
        p = tmp_path / name
        p.write_text(text)
        return str(p)
    return make


# -- config -----------------------------------------------------------------

def test_parse_and_defaults():
    raw = parse_text("# comment\n\nseed = 4\nhum.eps_list = 1e-1, 1e-2\n")
    cfg = build_config(raw)
    assert cfg["seed"] == 4 and cfg["hum.eps_list"] == (0.1, 0.01)
    assert set(cfg) == set(SCHEMA)
    assert cfg["grid.n_nodes"] == SCHEMA["grid.n_nodes"].default


def test_dump_round_trip(tmp_path):
    cfg = build_config(parse_text(SMALL_STEER))
    p = tmp_path / "echo.cfg"
    p.write_text(dump_config(cfg))
    assert load_config(p) == cfg


@pytest.mark.parametrize("text,key", [
    ("grid.n_nodes = 2", "grid.n_nodes"),
    ("grid.bc = periodic", "grid.bc"),
    ("time.tau = -1", "time.tau"),
    ("hum.epsilon = nan", "hum.epsilon"),
    ("seed = 1.5", "seed"),
    ("grid.nodes = 10", "grid.nodes"),
])
def test_invalid_values(text, key):
    with pytest.raises(ConfigurationError, match=key.replace(".", r"\.")):
        build_config(parse_text(text))


def test_missing_equals():
    with pytest.raises(ConfigurationError, match="line 1"):
        parse_text("grid.n_nodes 21")


# -- run --------------------------------------------------------------------

def test_run_ok_and_manifest(cfg_file, tmp_path):
    out = tmp_path / "out"
    assert main(["run", cfg_file(SMALL_STEER), "--out", str(out)]) == EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert man["passed"] and man["scenario"] == "NonnegSteer"
    assert set(man["outputs"]) == {"steer.csv", "control.csv", "trajectory.csv", "norms.csv"}
    assert "C1_cal" in man["constants"]
    assert all(man["assertions"].values())
    header, rows = io.read_csv(out / "steer.csv")
    assert header[:3] == ["eps", "level", "neg_norm"] and len(rows) == 2


def test_invalid_config_exit_2(cfg_file, tmp_path, capsys):
    code = main(["run", cfg_file("grid.n_nodes = 2\n"), "--out", str(tmp_path / "o")])
    assert code == EXIT_CONFIG
    assert "grid.n_nodes" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()  # nothing computed or written


def test_missing_config_exit_3(tmp_path):
    assert main(["run", str(tmp_path / "nope.cfg"), "--out", str(tmp_path / "o")]) == EXIT_IO


def test_unwritable_out_exit_3(cfg_file, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", cfg_file(SMALL_STEER), "--out", str(blocker / "sub")]) == EXIT_IO


def test_failed_assertion_map(cfg_file, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["run", cfg_file(SMOOTH_DIRICHLET), "--out", str(out)]) == EXIT_ASSERT
    assert "slope_near_minus_half" in capsys.readouterr().err
    man = json.loads((out / "manifest.json").read_text())
    assert man["assertions"] == {"slope_near_minus_half": False} and not man["passed"]


def test_determinism(cfg_file, tmp_path):
    path = cfg_file(SMALL_STEER)
    mans = []
    for name in ("a", "b"):
        assert main(["run", path, "--out", str(tmp_path / name)]) == EXIT_OK
        mans.append(json.loads((tmp_path / name / "manifest.json").read_text()))
    for f in mans[0]["outputs"]:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    for m in mans:
        m.pop("wall_clock_s")
    assert mans[0] == mans[1]


def test_seed_override(cfg_file, tmp_path):
    assert main(["run", cfg_file(SMALL_STEER), "--out", str(tmp_path / "s"), "--seed", "9"]) == EXIT_OK
    assert json.loads((tmp_path / "s" / "manifest.json").read_text())["seed"] == 9


def test_env_default_out(cfg_file, tmp_path, monkeypatch):
    monkeypatch.setenv("HEATLAB_OUT", str(tmp_path / "env"))
    assert main(["run", cfg_file(SMALL_STEER)]) == EXIT_OK
    assert (tmp_path / "env" / "manifest.json").exists()


# -- sweep ------------------------------------------------------------------

def test_sweep_epsilon_trend(cfg_file, tmp_path):
    out = tmp_path / "sw"
    code = main(["sweep", cfg_file(SMALL_STEER), "--param", "hum.epsilon",
                 "--values", "1e-1,1e-2,1e-3", "--out", str(out)])
    assert code == EXIT_OK
    header, rows = io.read_csv(out / "sweep.csv")
    col = header.index("neg_norm")
    neg = [float(r[col]) for r in rows]
    assert neg[0] > neg[1] > neg[2]
    assert [r[header.index("failure")] for r in rows] == ["", "", ""]


def test_sweep_failure_column(cfg_file, tmp_path):
    out = tmp_path / "sw"
    code = main(["sweep", cfg_file(SMALL_STEER), "--param", "grid.n_nodes",
                 "--values", "21,2", "--out", str(out)])
    assert code == EXIT_ASSERT
    header, rows = io.read_csv(out / "sweep.csv")
    assert [r[header.index("exit_code")] for r in rows] == ["0", "2"]
    assert "grid.n_nodes" in rows[1][header.index("failure")]


def test_sweep_validation(cfg_file, tmp_path):
    path = cfg_file(SMALL_STEER)
    assert main(["sweep", path, "--param", "hum.epsilon", "--values", "", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["sweep", path, "--param", "grid.bc", "--values", "neumann", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["run", path, "--workers", "0", "--out", str(tmp_path)]) == EXIT_CONFIG


# -- io ---------------------------------------------------------------------

def test_csv_float_format(tmp_path):
    p = io.write_csv(tmp_path / "x.csv", ("a", "b", "c"), [(0.1, 3, True), (1 / 3, None, "s")])
    lines = p.read_text().splitlines()
    assert lines == ["a,b,c", "0.10000000000000001,3,true", "0.33333333333333331,,s"]
    assert float(lines[2].split(",")[0]) == 1 / 3


def test_atomic_write_keeps_old_file(tmp_path, monkeypatch):
    p = tmp_path / "f.txt"
    io.atomic_write_text(p, "old")

    def boom(*_):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        io.atomic_write_text(p, "new")
    assert p.read_text() == "old"
    assert sorted(x.name for x in tmp_path.iterdir()) == ["f.txt"]
