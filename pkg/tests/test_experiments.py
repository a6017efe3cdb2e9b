import csv
import filecmp
import subprocess
import sys

import numpy as np
import pytest

from rqe.cli import main
from rqe.experiments import (
    ConfigError,
    load_config,
    read_trajectory,
    resolve_out,
    summarize,
    summary_stats,
    trailing_mean,
)


def write(path, text):
    path.write_text(text)
    return path


def read_rows(path):
    return list(csv.DictReader(open(path)))


MAAC_CFG = """\
kind: maac
env:
  name: inspection
  gamma: 0.3
schedule:
  alpha: 0.05
  beta: 0.5
seeds: [0, 1]
params:
  n_episodes: 40
  K: 16
"""


# -- configuration ----------------------------------------------------------------


def test_defaults_and_overrides():
    cfg = load_config(kind="certify", overrides={"seeds": [3, 4]})
    assert cfg.seeds == [3, 4]
    assert cfg.params["n_samples"] == 500
    assert cfg.risk_profile().tau == (5.0, 5.0)


def test_config_errors_reference_lines(tmp_path):
    p = write(tmp_path / "c.yaml", "kind: maac\nenv:\n  name: moon\n")
    with pytest.raises(ConfigError, match=r"c.yaml:3: env.name"):
        load_config(p, kind="maac")
    p = write(tmp_path / "d.yaml", "kind: maac\nschedule:\n  alpha: 0.5\n  beta: 0.1\n")
    with pytest.raises(ConfigError, match=r"d.yaml:2: invalid schedule"):
        load_config(p, kind="maac")
    p = write(tmp_path / "e.yaml", "kind: maac\nparams:\n  n_episodes: 3\n  bogus: 1\n")
    with pytest.raises(ConfigError, match=r"e.yaml:4: unknown parameter 'bogus'"):
        load_config(p, kind="maac")
    p = write(tmp_path / "f.yaml", "kind: maac\nseeds: []\n")
    with pytest.raises(ConfigError, match=r"f.yaml:2: seeds"):
        load_config(p, kind="maac")
    p = write(tmp_path / "g.yaml", "kind: certify\n")
    with pytest.raises(ConfigError, match="does not match"):
        load_config(p, kind="maac")


def test_cli_config_error_exit_code(tmp_path, capsys):
    p = write(tmp_path / "c.yaml", "kind: maac\nenv:\n  name: moon\n")
    assert main(["maac", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
    assert "c.yaml:3" in capsys.readouterr().err
    assert main(["maac", "--seeds", "a,b"]) == 1
    assert main(["maac", "--threads", "0"]) == 1
    assert main(["nonsense"]) == 1


def test_output_directory_precedence(tmp_path, monkeypatch):
    monkeypatch.delenv("RQE_OUT_DIR", raising=False)
    assert resolve_out("cfg", None).name == "cfg"
    monkeypatch.setenv("RQE_OUT_DIR", str(tmp_path / "env"))
    assert resolve_out("cfg", None) == tmp_path / "env"
    assert resolve_out("cfg", str(tmp_path / "cli")) == tmp_path / "cli"


def test_env_var_directs_outputs(tmp_path, monkeypatch):
    monkeypatch.setenv("RQE_OUT_DIR", str(tmp_path / "envout"))
    assert main(["certify", "--seeds", "0"]) == 0
    assert (tmp_path / "envout" / "certificate_seed0.csv").exists()


# -- running ------------------------------------------------------------------------


def test_certify_reports_closed_form(tmp_path, capsys):
    assert main(["certify", "--out", str(tmp_path)]) == 0
    assert "ClosedForm certificate, 16*eps1*eps2*tau1*tau2 = 16" in capsys.readouterr().out
    row = read_rows(tmp_path / "certificate_seed0.csv")[0]
    assert float(row["product_test"]) == pytest.approx(16.0)


def test_dynamics_outputs(tmp_path):
    cfg = write(tmp_path / "d.yaml", "kind: normal_form_dynamics\nparams:\n  max_iter: 20000\n  record_every: 10\n")
    out = tmp_path / "out"
    assert main(["normal_form_dynamics", "--config", str(cfg), "--out", str(out)]) == 0
    for name in ("tau1", "tau2", "tau5", "risk_neutral"):
        assert (out / f"trajectory_{name}_seed0.csv").exists()
    rows = {r["variant"]: r for r in read_rows(out / "summary.csv") if r["row"] == "per_seed"}
    assert rows["risk_neutral"]["converged"] == "False"
    assert all(rows[t]["converged"] == "True" for t in ("tau1", "tau2", "tau5"))
    assert int(rows["tau1"]["iterations"]) > int(rows["tau5"]["iterations"])


def test_manifest_reproduces_bitwise(tmp_path):
    cfg = write(tmp_path / "m.yaml", MAAC_CFG)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["maac", "--config", str(cfg), "--out", str(a), "--threads", "2"]) == 0
    assert main(["maac", "--config", str(a / "manifest.json"), "--out", str(b)]) == 0
    for name in ("trajectory_seed0.csv", "trajectory_seed1.csv", "summary.csv"):
        assert filecmp.cmp(a / name, b / name, shallow=False)


def test_runtime_failure_leaves_marker(tmp_path, capsys):
    cfg = write(tmp_path / "v.yaml", "kind: value_iteration\nenv:\n  name: random\n  gamma: 0.9\n"
                                     "params:\n  tol: 1.0e-12\n  max_sweeps: 2\n")
    out = tmp_path / "out"
    assert main(["value_iteration", "--config", str(cfg), "--out", str(out)]) == 2
    assert "runtime failure" in capsys.readouterr().err
    assert (out / "FAILED").exists() and (out / "manifest.json").exists()


def test_summary_matches_independent_recomputation(tmp_path):
    cfg = write(tmp_path / "m.yaml", MAAC_CFG)
    assert main(["maac", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    finals = []
    for s in (0, 1):
        with open(tmp_path / f"trajectory_seed{s}.csv") as fh:
            vals = [float(r["mean_reward"]) for r in csv.DictReader(fh)]
        finals.append(sum(vals) / len(vals))  # 40 episodes < window 100, so all rows
    rows = read_rows(tmp_path / "summary.csv")
    per = [float(r["mean_reward_ma"]) for r in rows if r["row"] == "per_seed"]
    assert per == pytest.approx(finals, abs=1e-12)
    iqr = float(next(r for r in rows if r["row"] == "iqr")["mean_reward_ma"])
    assert iqr == pytest.approx(abs(finals[0] - finals[1]) / 2, abs=1e-12)
    assert all(r["window_clipped"] == "True" for r in rows if r["row"] == "per_seed")


# -- statistics and summarizing ---------------------------------------------------------


def test_summary_stats_examples():
    s = summary_stats([0.7])
    assert s["median"] == 0.7 and s["iqr"] == 0
    s = summary_stats([1.0, 4.0])
    assert s["iqr"] == pytest.approx(1.5)
    assert trailing_mean(np.arange(50.0), 100) == (24.5, True)
    assert trailing_mean(np.arange(200.0), 100) == (149.5, False)


def _traj(path, values):
    with open(path, "w") as fh:
        fh.write("episode,z_distance,q_distance,mean_reward,mode,seed\n")
        for k, v in enumerate(values, 1):
            fh.write(f"{k},,,{float(v)!r},OnPolicy,0\n")
    return path


def test_summarize_cli(tmp_path, capsys):
    a = _traj(tmp_path / "a.csv", np.linspace(0, 1, 50))
    b = _traj(tmp_path / "b.csv", np.linspace(0, 2, 150))
    out, plot = tmp_path / "s.csv", tmp_path / "p.gp"
    assert main(["summarize", str(a), str(b), "--out", str(out), "--plot", str(plot)]) == 0
    text = capsys.readouterr().out
    assert "window clipped" in text
    rows = read_rows(out)
    assert rows[0]["window"] == "50" and rows[0]["window_clipped"] == "True"
    assert rows[1]["window_clipped"] == "False"
    assert float(rows[1]["moving_average"]) == pytest.approx(np.linspace(0, 2, 150)[-100:].mean(), abs=1e-12)
    assert "plot '" in plot.read_text()


def test_summarize_malformed_csv_names_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("episode,mean_reward\n1,0.5\n2\n")
    assert main(["summarize", str(bad), "--out", str(tmp_path / "s.csv")]) == 1
    assert "bad.csv:3" in capsys.readouterr().err
    with pytest.raises(Exception, match="empty"):
        read_trajectory(write(tmp_path / "empty.csv", ""))
    with pytest.raises(Exception, match="no column"):
        summarize([_traj(tmp_path / "t.csv", [1.0])], tmp_path / "x.csv", metric="nope")


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "rqe.cli", "certify", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "ClosedForm" in res.stdout


def test_exponent_without_decimal_point_is_a_float(tmp_path):
    p = write(tmp_path / "c.yaml", "kind: two_timescale\nparams:\n  floor: 1e-6\n")
    assert load_config(p, kind="two_timescale").params["floor"] == 1e-6
