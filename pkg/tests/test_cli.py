import subprocess
import sys

import pytest

from trimiga.cli import main


def _cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_stability_header(tmp_path):
    cfg = _cfg(tmp_path, "experiment = stability\nscenario = eps_mesh\neps_list = 1e-2,1e-4\nstab_mode = none\n")
    out = tmp_path / "s.csv"
    assert main(["stability", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "eps,mode,lambda_max,lambda_min"
    assert len(lines) == 3


def test_convergence_header(tmp_path):
    cfg = _cfg(tmp_path, "experiment = convergence\nscenario = test1\nlevels = 2,3\n")
    out = tmp_path / "c.csv"
    assert main(["convergence", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    header = out.read_text().splitlines()[0]
    assert header.startswith("h,dofs,err_nnorm,err_l2,rate_nnorm")


def test_missing_config_file(tmp_path):
    assert main(["stability", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_bad_config(tmp_path):
    assert main(["solve", "--config", _cfg(tmp_path, "scenario = test1\nflavour = mint\n")]) == 2


def test_config_for_another_experiment(tmp_path):
    assert main(["solve", "--config", _cfg(tmp_path, "experiment = stability\nscenario = eps_mesh\n")]) == 2


def test_unknown_subcommand_and_flag(capsys):
    assert main(["dance"]) == 2
    assert main(["solve", "--config", "x.cfg", "--loud"]) == 2
    assert "usage" in capsys.readouterr().err


def test_numerical_failure(tmp_path):
    # a single cell keeping 1% of its area has no good neighbour at theta = 1
    text = "geometry = identity\nregion.kind = half_plane\nregion.axis = 1\nregion.threshold = 0.01\ntheta = 1\nlevels = 0\n"
    assert main(["solve", "--config", _cfg(tmp_path, text), "--quiet"]) == 3


def test_solve_is_deterministic(tmp_path):
    cfg = _cfg(tmp_path, "scenario = test3\ndegree = 2\nlevels = 3\n")
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}.csv"
        assert main(["solve", "--config", cfg, "--out", str(out), "--quiet"]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_out_key_in_config(tmp_path):
    out = tmp_path / "via_key.csv"
    cfg = _cfg(tmp_path, f"scenario = test1\nlevels = 2\nout = {out}\n")
    assert main(["solve", "--config", cfg, "--quiet"]) == 0
    assert out.read_text().startswith("h,mode,dofs")


@pytest.mark.slow
def test_verify_subcommand_in_subprocess():
    res = subprocess.run([sys.executable, "-m", "trimiga.cli", "verify"], capture_output=True, text=True)
    assert res.returncode == 0, res.stdout + res.stderr
    assert "FAIL" not in res.stdout
