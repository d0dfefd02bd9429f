import json
import os

import pytest

from dropletmm.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_PROPERTY, EXIT_USAGE, main, oracle_table

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")


def _write(tmp_path, obj, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


SMALL = {
    "domain": {"kind": "interval", "length": 2.0, "h": 0.03125},
    "params": {"mu_minus": 0.36, "mu_plus": 0.21},
    "amplitude": 1.0,
    "schedule": {"times": [0, 10, 20], "amplitudes": [1.0, 1.2, 0.9]},
}


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        main(["verify", "bogus"])
    assert e.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        main(["oracle", "--case", "3d"])
    assert e.value.code == EXIT_USAGE


def test_help_lists_exit_codes(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--help"])
    assert e.value.code == 0
    assert "exit codes" in capsys.readouterr().out


def test_solve_writes_files(tmp_path):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "o" / "s"
    assert main(["solve", "--config", cfg, "--out", str(out), "--quiet"]) == EXIT_OK
    assert (tmp_path / "o" / "s_certificate.txt").read_text().startswith("one-flip certificate: PASS")


def test_solve_requires_amplitude(tmp_path):
    raw = dict(SMALL)
    raw.pop("amplitude")
    cfg = _write(tmp_path, raw)
    assert main(["solve", "--config", cfg, "--quiet"]) == EXIT_CONFIG
    assert main(["solve", "--config", cfg, "--amplitude", "0.9", "--out", str(tmp_path / "x"), "--quiet"]) == EXIT_OK


def test_config_error_exit(tmp_path, capsys):
    raw = dict(SMALL, params={"mu_minus": 1.5, "mu_plus": 0.2})
    cfg = _write(tmp_path, raw)
    assert main(["solve", "--config", cfg]) == EXIT_CONFIG
    assert "params.mu_minus" in capsys.readouterr().err
    assert main(["solve"]) == EXIT_CONFIG


def test_missing_config_is_io_error(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "absent.json")]) == EXIT_IO


def test_unwritable_output_is_io_error(tmp_path):
    cfg = _write(tmp_path, SMALL)
    blocker = tmp_path / "blk"
    blocker.write_text("")
    assert main(["solve", "--config", cfg, "--out", str(blocker / "s"), "--quiet"]) == EXIT_IO


def test_evolve_outputs(tmp_path):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "ev"
    assert main(["evolve", "--config", cfg, "--out", str(out), "--quiet"]) == EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["schedule"]["amplitudes"] == [1.0, 1.2, 0.9]
    traces = sorted(out.glob("trace_*.csv"))
    assert traces
    assert traces[0].read_text().startswith("t,amplitude,volume,J,D,step_diss,flux,jump_flag")


def test_flags_before_subcommand(tmp_path):
    cfg = _write(tmp_path, SMALL)
    assert main(["--config", cfg, "--quiet", "solve", "--out", str(tmp_path / "p")]) == EXIT_OK


def test_evolve_needs_schedule(tmp_path):
    raw = dict(SMALL)
    raw.pop("schedule")
    assert main(["evolve", "--config", _write(tmp_path, raw), "--quiet"]) == EXIT_CONFIG


def test_oracle_cases(capsys):
    assert main(["oracle", "--case", "1d", "--params", '{"h": 0.0078125}', "--quiet"]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "quantity,oracle,solver,abs_error,pass"
    assert out[1].startswith("s_star,0.9090909090909")
    assert main(["oracle", "--case", "brute", "--params", '{"seed": 4, "index": 5}', "--quiet"]) == EXIT_OK
    assert main(["oracle", "--case", "1d", "--params", "[1]", "--quiet"]) == EXIT_CONFIG
    assert main(["oracle", "--case", "1d", "--params", "{bad", "--quiet"]) == EXIT_CONFIG


def test_oracle_property_failure(monkeypatch):
    import dropletmm.cli as cli
    monkeypatch.setattr(cli, "oracle_table", lambda case, p: [["x", 1.0, 2.0, 1.0, False]])
    assert cli.main(["oracle", "--case", "1d", "--quiet"]) == EXIT_PROPERTY


def test_oracle_table_radial():
    rows = oracle_table("radial", {"h": 0.0625})
    assert [r[0] for r in rows] == ["rho_star", "slope_sq"]
    assert all(r[4] for r in rows)


def test_verify_to_directory(tmp_path):
    out = tmp_path / "v"
    assert main(["verify", "lattice", "--instances", "4", "--seed", "9", "--out", str(out), "--quiet"]) == EXIT_OK
    lines = (out / "verify_lattice.csv").read_text().splitlines()
    assert lines[0] == "property,instance,measured,bound,pass"
    assert len(lines) == 1 + 4 * 5


def test_shipped_configs_parse():
    from dropletmm.config import load_config
    names = sorted(os.listdir(CONFIGS))
    assert names
    for name in names:
        load_config(os.path.join(CONFIGS, name)).build_domain()
