import csv
import io
import json
import logging
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from quadsim.cli import load_scenario, main
from quadsim.model import ConfigError, default_robot, dump_robot_config
from quadsim.sim import TrajectoryLog, log_columns

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write_scenario(tmp_path, body, name="sc.ini"):
    p = tmp_path / name
    p.write_text(body)
    return p


SHORT = """
[scenario]
duration = 0.05
h = 0.001
torque = pd
[initial]
height = 0.3
"""


@pytest.mark.parametrize("cmd", [[], ["simulate"], ["benchmark"], ["inspect"], ["plot"]])
def test_help(cmd, capsys):
    with pytest.raises(SystemExit) as e:
        main(cmd + ["--help"])
    assert e.value.code == 0
    assert "usage" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [["simulate", "--bogus"], ["benchmark", "--fast"],
                                  ["inspect", "--q"], ["launch"], []])
def test_usage_errors_exit_1(argv):
    with pytest.raises(SystemExit) as e:
        main(argv)
    assert e.value.code == 1


def test_simulate_scenario_writes_csv(tmp_path, capsys):
    sc = write_scenario(tmp_path, SHORT)
    out = tmp_path / "out.csv"
    assert main(["simulate", "--scenario", str(sc), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "max penetration" in text and "energy drift" in text and "contact solver" in text
    log = TrajectoryLog.from_csv(out)
    assert len(log) == 51
    with open(out) as fh:
        assert next(csv.reader(fh)) == log_columns()


def test_simulate_drop_config_file(tmp_path):
    out = tmp_path / "drop.csv"
    assert main(["simulate", "--scenario", str(CONFIGS / "drop.ini"), "--duration", "0.02",
                 "--out", str(out)]) == 0
    assert len(TrajectoryLog.from_csv(out)) == 21


def test_simulate_json_format(tmp_path):
    out = tmp_path / "out.json"
    sc = write_scenario(tmp_path, SHORT)
    assert main(["simulate", "--scenario", str(sc), "--out", str(out), "--format", "json",
                 "--no-stabilization", "--mu", "0.8"]) == 0
    data = json.loads(out.read_text())
    assert list(data) == log_columns()
    assert len(data["t"]) == 51


def test_simulate_default_drop_with_overrides(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["simulate", "--duration", "0.01", "--h", "0.002", "--out", str(out)]) == 0
    assert np.allclose(TrajectoryLog.from_csv(out).times(), np.arange(6) * 0.002)


def test_missing_robot_file(tmp_path, capsys):
    missing = tmp_path / "nope.ini"
    assert main(["simulate", "--robot", str(missing), "--duration", "0.01"]) == 1
    assert str(missing) in capsys.readouterr().err


def test_zero_step_rejected(capsys):
    assert main(["simulate", "--h", "0"]) == 1
    assert "h must be > 0" in capsys.readouterr().err


def test_negative_duration_rejected():
    assert main(["simulate", "--duration", "-1"]) == 1


def test_bad_scenario_key(tmp_path, capsys):
    sc = write_scenario(tmp_path, "[scenario]\nspeed = 3\n")
    assert main(["simulate", "--scenario", str(sc)]) == 1
    assert "speed" in capsys.readouterr().err


def test_missing_scenario_file(tmp_path):
    assert main(["simulate", "--scenario", str(tmp_path / "none.ini")]) == 1


def test_invalid_robot_file(tmp_path, capsys):
    robot = tmp_path / "r.ini"
    robot.write_text(dump_robot_config(default_robot()).replace("mass = 12.0", "mass = -12.0"))
    assert main(["simulate", "--robot", str(robot), "--duration", "0.01"]) == 1
    assert "main_body" in capsys.readouterr().err


def test_runtime_failure_exit_2(tmp_path, capsys):
    q = " ".join(["0", "0", "1", "0", "1.5707963267948966", "0"] + ["0"] * 14)
    sc = write_scenario(tmp_path, f"[scenario]\nduration = 0.01\n[initial]\nq = {q}\n")
    assert main(["simulate", "--scenario", str(sc), "--out", str(tmp_path / "x.csv")]) == 2
    assert "singularity" in capsys.readouterr().err


def test_parallel_jobs(tmp_path):
    a = write_scenario(tmp_path, SHORT, "a.ini")
    b = write_scenario(tmp_path, SHORT.replace("height = 0.3", "height = 0.4"), "b.ini")
    out = tmp_path / "runs"
    assert main(["simulate", "--scenario", str(a), "--scenario", str(b), "--jobs", "2",
                 "--out", str(out)]) == 0
    la = TrajectoryLog.from_csv(out / "a.csv")
    lb = TrajectoryLog.from_csv(out / "b.csv")
    assert la.q[0][2] == pytest.approx(0.3) and lb.q[0][2] == pytest.approx(0.4)


def test_profile_scenario(tmp_path):
    prof = tmp_path / "tau.csv"
    prof.write_text("t," + ",".join(f"tau{i}" for i in range(14)) + "\n0," + ",".join(["0.5"] * 14) + "\n")
    sc = write_scenario(tmp_path, "[scenario]\nduration = 0.005\ntorque = profile\nprofile = tau.csv\n")
    out = tmp_path / "p.csv"
    assert main(["simulate", "--scenario", str(sc), "--out", str(out)]) == 0
    assert np.all(np.asarray(TrajectoryLog.from_csv(out).tau) == 0.5)


def test_load_scenario_fields(tmp_path):
    sc = load_scenario(CONFIGS / "drop.ini")
    assert sc.duration == 3.0 and sc.h == 1e-3 and sc.torque == "pd"
    assert Path(sc.robot) == CONFIGS / "default_robot.ini"
    with pytest.raises(ConfigError):
        load_scenario(write_scenario(tmp_path, "[scenario]\nduration = soon\n"))


def test_benchmark_csv(capsys):
    assert main(["benchmark", "-n", "20", "--format", "csv", "--seed", "1"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [r["term"] for r in rows] == ["M", "C", "G", "J_C"]
    for r in rows:
        assert float(r["mean_s"]) < float(r["bound_s"])
        assert int(r["n"]) == 20


def test_benchmark_repeatable_order_of_magnitude(capsys):
    means = []
    for _ in range(2):
        assert main(["benchmark", "-n", "20", "--format", "json"]) == 0
        means.append(np.array([r["mean_s"] for r in json.loads(capsys.readouterr().out)]))
    ratio = means[0] / means[1]
    assert np.all((ratio > 0.1) & (ratio < 10))


def test_benchmark_table_with_reference(capsys):
    assert main(["benchmark", "-n", "3", "--reference"]) == 0
    out = capsys.readouterr().out
    assert "C_reference" in out and "bound [ms]" in out


def test_inspect_zero_pose(capsys):
    assert main(["inspect"]) == 0
    out = capsys.readouterr().out
    assert "FR" in out and "M eigenvalues" in out


def test_inspect_json_symmetric(capsys):
    assert main(["inspect", "--json"]) == 0
    snap = json.loads(capsys.readouterr().out)
    fr, fl = np.array(snap["feet"]["FR"]), np.array(snap["feet"]["FL"])
    assert np.allclose(fr * [1, -1, 1], fl)
    assert snap["gravity_vector"][2] == pytest.approx(snap["total_mass"] * 9.81)
    assert 0 < snap["mass_matrix_eigenvalues"][0] <= snap["mass_matrix_eigenvalues"][1]


def test_inspect_singularity_exit_2(capsys):
    q = ",".join(["0"] * 4 + [repr(np.pi / 2 - 1e-9)] + ["0"] * 15)
    assert main(["inspect", "--q", q]) == 2
    assert "singularity" in capsys.readouterr().err


def test_inspect_bad_q(tmp_path):
    assert main(["inspect", "--q", "1,2,3"]) == 1
    assert main(["inspect", "--q", "a,b"]) == 1
    f = tmp_path / "q.txt"
    f.write_text(" ".join(["0.1"] * 20))
    assert main(["inspect", "--q-file", str(f)]) == 0


def test_plot(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["simulate", "--duration", "0.02", "--out", str(out)]) == 0
    assert main(["plot", str(out), "--out", str(tmp_path / "png")]) == 0
    for name in ("base_height.png", "energy.png", "contact_forces.png"):
        assert (tmp_path / "png" / name).stat().st_size > 0
    assert main(["plot", str(tmp_path / "missing.csv")]) == 1


def test_log_env_var(monkeypatch):
    monkeypatch.setenv("QUADSIM_LOG", "debug")
    main(["inspect", "--json"])
    assert logging.getLogger("quadsim").level == logging.DEBUG
    monkeypatch.setenv("QUADSIM_LOG", "WARNING")
    main(["inspect", "--json"])
    assert logging.getLogger("quadsim").level == logging.WARNING


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "quadsim.cli", "inspect", "--bogus"],
                       capture_output=True, text=True)
    assert r.returncode == 1
