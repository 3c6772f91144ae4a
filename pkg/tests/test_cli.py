import csv
import json
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import pytest

from regfrac import ScenarioConfig, dump_config
from regfrac.cli import main, run_scenario, emit_tables, validate_report
from regfrac.config import MeshSpec, NonlinearitySpec, SourceSpec

ROOT = Path(__file__).parent.parent


def _write(tmp_path, cfg, name="s.toml"):
    p = tmp_path / name
    dump_config(cfg, p)
    return p


def test_phi_command_writes_tables(tmp_path):
    cfg = ScenarioConfig(name="phi_small", mesh=MeshSpec(M=128))
    out = tmp_path / "out"
    assert main(["phi", "--config", str(_write(tmp_path, cfg)), "--out", str(out)]) == 0
    with open(out / "profile_phi.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "rho", "phi"] and len(rows) == 129
    with open(out / "fits.csv") as fh:
        assert next(csv.reader(fh)) == ["name", "beta", "intercept", "r_squared", "rho_lo", "rho_hi",
                                        "node_count"]
    report = json.loads((out / "report.json").read_text())
    assert set(report) == {"scenario", "results", "checks", "timing_ms", "version"}
    assert validate_report(out / "report.json") == replace(cfg, task="phi")


def test_solve_profiles_use_level_header(tmp_path):
    cfg = ScenarioConfig(mesh=MeshSpec(M=64), nonlinearity=NonlinearitySpec(p=3.0),
                         source=SourceSpec(levels=(1.0, 2.0)))
    out = tmp_path / "o"
    assert main(["solve", "--config", str(_write(tmp_path, cfg)), "--out", str(out), "--no-json"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["fits.csv", "profile_n1.csv", "profile_n2.csv"]
    assert (out / "profile_n2.csv").read_text().splitlines()[0] == "x,rho,u_n"


def test_json_only_and_levels_override(tmp_path):
    cfg = ScenarioConfig(mesh=MeshSpec(M=64))
    out = tmp_path / "o"
    rc = main(["blowup", "--config", str(_write(tmp_path, cfg)), "--out", str(out), "--levels", "3",
               "--no-csv", "--seedless"])
    assert rc == 0
    assert [p.name for p in out.iterdir()] == ["report.json"]
    rep = json.loads((out / "report.json").read_text())
    limit = [r for r in rep["results"] if r["name"] == "limit"][0]
    assert limit["levels"] == [1.0, 2.0, 4.0]


def test_json_config_is_accepted(tmp_path):
    cfg = ScenarioConfig(mesh=MeshSpec(M=64), nonlinearity=NonlinearitySpec(p=2.0))
    p = _write(tmp_path, cfg, "s.json")
    assert main(["ko", "--config", str(p), "--out", str(tmp_path / "o")]) == 0


@pytest.mark.parametrize("text,task,code", [
    ("alpha = 1.2", "solve", 2),
    ("[nonlinearity]\nfamily = 'zero'", "blowup", 2),
    ("oops = 1", "phi", 2),
    ("[mesh]\nM = 64\n[solver]\nb2_policy = 'paper-exact'\nmax_iter = 20\n[source]\ntrace = 8.0\n"
     "[nonlinearity]\np = 8.0", "solve", 3),
])
def test_exit_codes(tmp_path, capsys, text, task, code):
    p = tmp_path / "c.toml"
    p.write_text(text)
    assert main([task, "--config", str(p), "--out", str(tmp_path / "o")]) == code
    assert "regfrac:" in capsys.readouterr().err


def test_invariant_breach_exit_code(tmp_path, monkeypatch):
    from regfrac import InvariantBreachError
    import regfrac.cli as cli

    def boom(cfg, rep):
        raise InvariantBreachError("synthetic breach")

    monkeypatch.setitem(cli._TASKS, "phi", boom)
    assert main(["phi", "--out", str(tmp_path)]) == 4


def test_identical_runs_give_identical_csv(tmp_path):
    cfg = ScenarioConfig(mesh=MeshSpec(M=64), source=SourceSpec(levels=(1.0, 4.0)))
    a = emit_tables(run_scenario(cfg, "solve"), tmp_path / "a")
    b = emit_tables(run_scenario(cfg, "solve"), tmp_path / "b")
    for pa, pb in zip(a, b):
        if pa.suffix == ".csv":
            assert pa.read_bytes() == pb.read_bytes()


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "regfrac", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("assemble-check", "phi", "solve", "blowup", "rates", "ko", "green-check", "barrier-check"):
        assert cmd in r.stdout
