import json

import numpy as np
import pytest

from coagself import cli
from coagself.profile import Profile, l1_mass_distance, read_csv, write_csv


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


@pytest.fixture
def exp_csv(workdir):
    path = workdir / "exp.csv"
    write_csv(Profile.from_function(lambda x: np.exp(-x)), path)
    return path


def test_version(capsys):
    assert cli.main(["--version"]) == cli.EXIT_OK
    assert "numpy" in capsys.readouterr().out


def test_solve_constant(workdir):
    assert cli.main(["solve", "--kernel", "constant", "--out", "f.csv"]) == cli.EXIT_OK
    p = read_csv(workdir / "f.csv")
    assert l1_mass_distance(p, Profile.from_function(lambda x: np.exp(-x), p.grid)) <= 1e-3


def test_unknown_flag_writes_nothing(workdir):
    assert cli.main(["solve", "--bogus", "1", "--out", "f.csv"]) == cli.EXIT_USAGE
    assert list(workdir.iterdir()) == []


def test_bad_kernel_and_command(workdir):
    assert cli.main(["solve", "--kernel", "power:x:1"]) == cli.EXIT_USAGE
    assert cli.main(["launch"]) == cli.EXIT_USAGE
    assert cli.main(["evolve", "--t-end", "-1"]) == cli.EXIT_USAGE
    assert cli.main(["solve", "--threads", "0"]) == cli.EXIT_USAGE
    assert list(workdir.iterdir()) == []


def test_non_convergence_keeps_previous_output(workdir):
    (workdir / "f.csv").write_text("old\n")
    code = cli.main(["solve", "--kernel", "power:0.1:0.3333333333333333", "--max-iter", "2", "--out", "f.csv"])
    assert code == cli.EXIT_NUMERICAL
    assert (workdir / "f.csv").read_text() == "old\n"
    assert sorted(p.name for p in workdir.iterdir()) == ["f.csv"]


def test_config_rejects_unknown_keys(workdir):
    (workdir / "run.cfg").write_text("colour = blue\n")
    assert cli.main(["solve", "--config", "run.cfg"]) == cli.EXIT_USAGE
    (workdir / "bad.cfg").write_text("max-iter = many\n")
    assert cli.main(["solve", "--config", "bad.cfg"]) == cli.EXIT_USAGE


def test_config_defaults_and_precedence(workdir, exp_csv):
    (workdir / "run.cfg").write_text("# transform defaults\nprofile = exp.csv\nout = from_config.csv\n")
    assert cli.main(["transform", "--config", "run.cfg"]) == cli.EXIT_OK
    assert (workdir / "from_config.csv").exists()
    assert cli.main(["transform", "--config", "run.cfg", "--out", "from_flag.csv"]) == cli.EXIT_OK
    assert (workdir / "from_flag.csv").read_text() == (workdir / "from_config.csv").read_text()


def test_transform_outputs(workdir, exp_csv):
    assert cli.main(["transform", "--profile", "exp.csv", "--out", "t.csv", "--singularity-out", "s.json"]) == 0
    assert (workdir / "t.csv").read_text().startswith("q,Q,Qprime,Mcal,residual\n")
    est = json.loads((workdir / "s.json").read_text())
    assert -1.02 <= est["q_star"] <= -0.98


def test_contract(workdir, exp_csv):
    code = cli.main(["contract", "--kernel", "constant", "--seeds", "exp", "wide", "--out", "c.json"])
    assert code == cli.EXIT_OK
    assert json.loads((workdir / "c.json").read_text())["ratio"] == pytest.approx(0.5, abs=1e-3)


def test_evolve_meta(workdir):
    assert cli.main(["evolve", "--t-end", "0.5", "--snapshots", "2", "--out", "traj"]) == cli.EXIT_OK
    meta = json.loads((workdir / "traj" / "meta.json").read_text())
    assert meta["times"] == [0.0, 0.25, 0.5]
    assert meta["files"] == ["snapshot_000.csv", "snapshot_001.csv", "snapshot_002.csv"]
    assert meta["mass_drift"] <= 1e-6
    assert (workdir / "traj" / "snapshot_002.csv").read_text().startswith("xi,phi\n")


def test_verify_idempotent_across_threads(workdir, exp_csv):
    assert cli.main(["verify", "--profile", "exp.csv", "--threads", "1", "--out", "a.json"]) == 0
    assert cli.main(["verify", "--profile", "exp.csv", "--threads", "8", "--out", "b.json"]) == 0
    a = (workdir / "a.json").read_bytes()
    assert a == (workdir / "b.json").read_bytes()
    assert json.loads(a)["passed"] is True
