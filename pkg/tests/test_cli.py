import json
import hashlib

import pytest

from stokes_rve.cli import main
from stokes_rve.config import parse_config
from stokes_rve.errors import ConfigParseError

EFFECTIVE = """\
[geometry]
L = 16
lambda = 0.1
seeds = 0-1

[grid]
N = 64
strict = false

[solver]
tol = 1e-9
"""


def test_parse_effective_config():
    cfg = parse_config(EFFECTIVE, "effective")
    assert cfg.L == 16.0 and cfg.lam == 0.1 and cfg.seeds == [0, 1]
    assert cfg.N == 64 and cfg.strict is False
    assert cfg.solver.preconditioner == "blockdiag" and cfg.solver.tol == 1e-9


def test_missing_key_names_key():
    text = EFFECTIVE.replace("N = 64\n", "")
    with pytest.raises(ConfigParseError) as info:
        parse_config(text, "effective")
    assert info.value.key == "grid.n"
    assert "missing" in str(info.value)


@pytest.mark.parametrize(
    "old,new,key,line",
    [
        ("lambda = 0.1", "lambda = 0.9", "geometry.lambda", 3),
        ("lambda = 0.1", "lambda = abc", "geometry.lambda", 3),
        ("tol = 1e-9", "preconditioner = ilu", "solver.preconditioner", 11),
        ("tol = 1e-9", "tolerance = 1e-9", "solver.tolerance", 11),
        ("N = 64", "N = 32", "grid.n", 7),
        ("strict = false", "strict = true", "grid.strict", 8),
    ],
)
def test_bad_values_report_key_and_line(old, new, key, line):
    with pytest.raises(ConfigParseError) as info:
        parse_config(EFFECTIVE.replace(old, new), "effective")
    assert info.value.key == key
    assert info.value.line == line


def test_malformed_file_reports_line():
    with pytest.raises(ConfigParseError) as info:
        parse_config("L = 3\n", "effective")
    assert info.value.line == 1
    with pytest.raises(ConfigParseError):
        parse_config("[geometry]\nthis line is broken\n", "effective")


def test_mode_specific_rules():
    ens = "[geometry]\nlambda = 0.1\nL_ladder = 16, 32\nseeds = 0\n[grid]\nh = 0.25\nstrict = false\n"
    with pytest.raises(ConfigParseError) as info:
        parse_config(ens, "ensemble")
    assert info.value.key == "geometry.seeds"
    cfg = parse_config(ens.replace("seeds = 0", "seeds = 0, 1"), "ensemble")
    assert cfg.L_ladder == [16.0, 32.0]
    ts = "[geometry]\nL = 16\nlambda = 0.1\n[grid]\nN = 256\n[twoscale]\neps = 0.25, 0.3\n"
    with pytest.raises(ConfigParseError) as info:
        parse_config(ts, "twoscale")
    assert info.value.key == "twoscale.eps"
    with pytest.raises(ConfigParseError):
        parse_config(EFFECTIVE.replace("[geometry]", "[run]\nmode = dilute\n[geometry]"), "effective")


def run_cli(tmp_path, mode, text, name="run", extra=()):
    cfg = tmp_path / f"{name}.ini"
    cfg.write_text(text)
    out = tmp_path / name
    code = main([mode, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


def test_validate_empty_suspension(tmp_path, capsys):
    text = "[geometry]\nL = 16\nlambda = 0\n[grid]\nN = 64\n"
    code, out = run_cli(tmp_path, "validate", text)
    assert code == 0
    printed = capsys.readouterr().out
    assert "PASS seed=0 identity_B" in printed
    assert "FAIL" not in printed
    assert (out / "validate.csv").exists()


def test_validate_with_inclusions(tmp_path, capsys):
    code, out = run_cli(tmp_path, "validate", EFFECTIVE.replace("seeds = 0-1", "seeds = 3"))
    assert code == 0
    printed = capsys.readouterr().out
    for name in ("coercivity", "symmetry", "energy_identity", "force_torque_balance", "linearity"):
        assert f"PASS seed=3 {name}" in printed


def test_config_error_exit_code(tmp_path):
    code, _ = run_cli(tmp_path, "effective", EFFECTIVE.replace("N = 64\n", ""))
    assert code == 2
    assert main(["effective", "--config", str(tmp_path / "missing.ini")]) == 2


def test_solver_failure_exit_code(tmp_path):
    code, _ = run_cli(tmp_path, "effective", EFFECTIVE.replace("tol = 1e-9", "max_iter = 2"))
    assert code == 3


def test_effective_is_byte_identical_and_manifested(tmp_path):
    code_a, a = run_cli(tmp_path, "effective", EFFECTIVE, "a")
    code_b, b = run_cli(tmp_path, "effective", EFFECTIVE, "b")
    assert code_a == code_b == 0
    assert (a / "coefficients.csv").read_bytes() == (b / "coefficients.csv").read_bytes()
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["config"]["seeds"] == [0, 1]
    for name, digest in manifest["artifacts"].items():
        assert hashlib.sha256((a / name).read_bytes()).hexdigest() == digest
    rows = (a / "coefficients.csv").read_text().splitlines()
    assert rows[0].startswith("seed,L,N,lambda,B_11") and len(rows) == 3


def test_seed_override_and_field_dumps(tmp_path):
    text = EFFECTIVE + "dump_fields = true\n"
    code, out = run_cli(tmp_path, "effective", text, extra=["--seed-override", "5"])
    assert code == 0
    rows = (out / "coefficients.csv").read_text().splitlines()
    assert len(rows) == 2 and rows[1].startswith("5,")
    assert (out / "fields" / "psi_seed5_E1.txt").read_text().startswith("2 64 periodic velocity")
    assert (out / "fields" / "inclusions_seed5.txt").exists()


def test_worker_pool_matches_serial(tmp_path):
    code_a, a = run_cli(tmp_path, "effective", EFFECTIVE, "serial")
    code_b, b = run_cli(tmp_path, "effective", "[run]\nworkers = 2\n" + EFFECTIVE, "pool")
    assert code_a == code_b == 0
    assert (a / "coefficients.csv").read_bytes() == (b / "coefficients.csv").read_bytes()


def test_ensemble_dilute_and_twoscale_modes(tmp_path):
    ens = "[geometry]\nlambda = 0.1\nL_ladder = 8, 16\nseeds = 0-1\n[grid]\nh = 0.25\nstrict = false\n"
    code, out = run_cli(tmp_path, "ensemble", ens, "ens")
    assert code == 0
    head = (out / "ensemble.csv").read_text().splitlines()[0].split(",")
    assert head[:3] == ["L", "n_seeds", "mean_B_11"]
    dil = "[geometry]\nseeds = 0\n[grid]\nN = 64\nstrict = false\n[dilute]\nlambdas = 0.02, 0.04\n"
    code, out = run_cli(tmp_path, "dilute", dil, "dil")
    assert code == 0
    assert json.loads((out / "summary.json").read_text())["slope"] > 0
    ts = "[geometry]\nL = 8\nlambda = 0.1\n[grid]\nN = 80\n[twoscale]\neps = 0.25, 0.125\n"
    code, out = run_cli(tmp_path, "twoscale", ts, "ts")
    assert code == 0
    lines = (out / "twoscale.csv").read_text().splitlines()
    assert lines[0] == "eps,lambda_eps,h1_err_vel,l2_err_press,weak_avg_err" and len(lines) == 3
