import json
import subprocess
import sys

import pytest

from fallingballs import cli
from fallingballs.errors import ConfigError


def run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = cli.main(["--out", str(out), *argv])
    return code, out


SMALL_RUN = ["--set", "orbits=2", "--set", "events=300"]


def test_parse_key_value_and_json():
    d = cli.parse_config_text("m1 = 5  # heavy\n\nenergy=3\n")
    assert d == {"m1": "5", "energy": "3"}
    d = cli.parse_config_text('{"masses": [4, 2, 1], "seed": 3}')
    assert (d["m1"], d["m2"], d["m3"], d["seed"]) == (4, 2, 1, 3)
    d = cli.parse_config_text('{"masses": {"m1": 5, "m3": 2}}')
    assert d == {"m1": 5, "m3": 2}
    with pytest.raises(ConfigError):
        cli.parse_config_text("{bad json")
    with pytest.raises(ConfigError):
        cli.parse_config_text("no equals sign")


def test_load_config(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("m1 = 9\nm3 = 2\nquick = false\n")
    cfg = cli.load_config(p, ["seed=4", "m2=wide"])
    assert cfg.m1 == 9.0 and cfg.m2 is None and cfg.seed == 4 and cfg.quick is False
    assert cfg.masses.m2 == pytest.approx(cli.wedge.solve_wide_m2(9.0, 2.0))
    assert cli.load_config(None, ["m2=2"]).masses.m2 == 2.0
    for bad in (["energy=-1"], ["orbits=2.5"], ["nonsense=1"], ["fd=maybe"], ["seed"]):
        with pytest.raises(ConfigError):
            cli.load_config(None, bad)
    with pytest.raises(ConfigError):
        cli.load_config(tmp_path / "missing.cfg")


def test_digest_ignores_out_and_workers():
    a = cli.load_config(None, ["out=a", "workers=1"])
    b = cli.load_config(None, ["out=b", "workers=3"])
    c = cli.load_config(None, ["seed=1"])
    assert a.digest() == b.digest() != c.digest()


@pytest.mark.parametrize("sub", ["simulate", "lyapunov", "sigma", "unbounded", "lambda"])
def test_orbit_subcommands(tmp_path, sub):
    code, out = run(tmp_path, *SMALL_RUN, sub)
    assert code == 0
    rep = json.loads((out / f"{sub}_report.json").read_text())
    assert rep["status"] == "ok" and rep["subcommand"] == sub
    assert rep["config"]["orbits"] == 2 and "out" not in rep["config"]


def test_simulate_files(tmp_path):
    code, out = run(tmp_path, *SMALL_RUN, "simulate")
    assert code == 0
    names = sorted(p.name for p in out.iterdir())
    assert "orbit_000000.csv" in names and "orbit_000001.json" in names


def test_determinism(tmp_path):
    _, a = run(tmp_path, *SMALL_RUN, "sigma", name="a")
    _, b = run(tmp_path, *SMALL_RUN, "--workers", "2", "sigma", name="b")
    for f in ("sigma_report.json", "sigma_traces.csv"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_alignment_subcommand(tmp_path):
    code, out = run(tmp_path, "--set", "samples=200", "--set", "iterate=5", "alignment")
    assert code == 0
    lines = (out / "alignment_scan.csv").read_text().splitlines()
    assert len(lines) == 201


def test_wedge_subcommand(tmp_path):
    code, out = run(tmp_path, "--set", "events=300", "wedge")
    assert code == 0
    rep = json.loads((out / "wedge_report.json").read_text())["results"]
    assert rep["masses"]["m2"] == pytest.approx(1.7720018727, abs=1e-10)
    assert rep["conjugacy"]["kind_mismatches"] == 0
    assert (out / "triangle_polylines.csv").exists()
    assert json.loads((out / "generator_frame.json").read_text())["unfolded"] is not None
    code, out = run(tmp_path, "--set", "m2=2", "wedge", name="generic")
    assert code == 0
    rep = json.loads((out / "wedge_report.json").read_text())["results"]
    assert "conjugacy" not in rep and rep["mass_relation_residual"] > 1e-3


def test_classify_subcommand(tmp_path):
    code, out = run(tmp_path, "--set", "segments=2000", "classify")
    assert code == 0
    rep = json.loads((out / "classify_report.json").read_text())["results"]
    assert rep["counts"]["Other"] == 0 and sum(rep["counts"].values()) == 2000


def test_selftest_subset(tmp_path, capsys):
    code, out = run(tmp_path, "--set", "only=1,2", "selftest")
    assert code == 0
    text = capsys.readouterr().out
    assert "PASS criterion  1" in text and "PASS criterion  2" in text


def test_exit_codes(tmp_path, capsys):
    code, out = run(tmp_path, "--set", "energy=0", "simulate")
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ConfigError" and err["exit_code"] == 2
    code, out = run(tmp_path, "--set", "only=13", "selftest", name="o13")
    assert code == 2
    code, out = run(tmp_path, "--set", "eps_sing=1e3", *SMALL_RUN, "simulate", name="sing")
    assert code == 3
    assert json.loads((out / "error.json").read_text())["error"] == "SingularEncounter"
    code, _ = run(tmp_path, "--set", "m1=1", "--set", "m3=1", "wedge", name="eq")
    assert code in (1, 2)


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "fallingballs.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "fallingballs" in r.stdout
    r = subprocess.run([sys.executable, "-m", "fallingballs.cli", "--out", str(tmp_path), "bogus"], capture_output=True)
    assert r.returncode == 2
