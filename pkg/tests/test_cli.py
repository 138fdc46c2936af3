import os
import subprocess
import sys

import numpy as np
import pytest

from fracpfem import AssemblyContext, DomainSpec, KernelSpec, Mesh, build_mesh
from fracpfem.assembly import load_solution
from fracpfem.cli import main
from fracpfem.config import parse_config_text
from fracpfem.norms import wsp_norm
from fracpfem.solver import solve

SOLVE_CFG = """\
# one linear cell on the symmetric interval
domain = interval
a = -1
b = 1
h = 0.125
s = 0.5
p = 2
"""

EXPERIMENT_CFG = """\
kind = boundary_exponent
domain = interval
a = -1
b = 1
h_values = 0.0625
s_values = 0.5
p_values = 2
mu = 2
"""


def write(path, text):
    with open(path, "w") as fh:
        fh.write(text)
    return str(path)


# -- config parsing --------------------------------------------------------


def test_parse_config_text():
    kv = parse_config_text("s = 0.5\n\n# note\np = 2  # trailing\n")
    assert kv == {"s": "0.5", "p": "2"}


def test_parse_config_rejects_unknown_key():
    with pytest.raises(ValueError, match="unknown config keys: horizon"):
        parse_config_text("horizon = 0.1\n")


def test_parse_config_rejects_duplicates_and_garbage():
    with pytest.raises(ValueError, match="duplicate"):
        parse_config_text("s = 0.5\ns = 0.6\n")
    with pytest.raises(ValueError, match="expected 'key = value'"):
        parse_config_text("just some words\n")


# -- solve subcommand ------------------------------------------------------


def test_solve_writes_report_and_dumps(tmp_path, capsys):
    cfg = write(tmp_path / "solve.cfg", SOLVE_CFG)
    mesh_p = str(tmp_path / "out.mesh")
    sol_p = str(tmp_path / "out.sol")
    mat_p = str(tmp_path / "out.mtx")
    rc = main(["solve", "--config", cfg, "--dump-mesh", mesh_p,
               "--dump-solution", sol_p, "--dump-matrix", mat_p])
    out = capsys.readouterr().out
    assert rc == 0
    assert out.startswith("field,value\n")
    assert "converged,true" in out
    assert "method,direct_linear" in out

    mesh = Mesh.load(mesh_p)
    u = load_solution(sol_p, mesh)
    ctx = AssemblyContext(mesh, KernelSpec(d=1, s=0.5, p=2.0))
    uref, _ = solve(ctx, 1.0)
    assert np.allclose(u.dof_values, uref.dof_values, rtol=1e-12)

    with open(mat_p) as fh:
        n, m, nnz = (int(t) for t in fh.readline().split())
    assert n == m == mesh.ndof
    assert 0 < nnz <= n * m


def test_solve_nonconverged_exits_1(tmp_path, capsys):
    cfg = write(tmp_path / "hard.cfg",
                SOLVE_CFG.replace("p = 2", "p = 3") + "max_iter = 1\n"
                + "tol = 1e-14\n")
    rc = main(["solve", "--config", cfg])
    assert rc == 1
    assert "converged,false" in capsys.readouterr().out


def test_bad_config_exits_2(tmp_path, capsys):
    cfg = write(tmp_path / "bad.cfg", "horizon = 0.1\n")
    rc = main(["solve", "--config", cfg])
    err = capsys.readouterr().err
    assert rc == 2
    assert "unknown config keys" in err
    assert main(["solve", "--config", str(tmp_path / "missing.cfg")]) == 2


# -- norm subcommand -------------------------------------------------------


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli_norm")
    cfg = write(tmp / "solve.cfg", SOLVE_CFG)
    sol = str(tmp / "u.sol")
    rc = main(["solve", "--config", cfg, "--dump-solution", sol])
    assert rc == 0
    return cfg, sol


def last_csv_value(out, col=1):
    line = out.strip().splitlines()[-1]
    return line.split(",")[col]


def test_norm_wsp_matches_library(solved, capsys):
    cfg, sol = solved
    rc = main(["norm", "--config", cfg, "--solution", sol, "--family", "wsp"])
    out = capsys.readouterr().out
    assert rc == 0
    mesh = build_mesh(DomainSpec(kind="interval", a=-1.0, b=1.0), 0.125)
    ctx = AssemblyContext(mesh, KernelSpec(d=1, s=0.5, p=2.0))
    u = load_solution(sol, mesh)
    assert np.isclose(float(last_csv_value(out)), wsp_norm(ctx, u),
                      rtol=1e-12)


def test_norm_energy_and_besov(solved, capsys):
    cfg, sol = solved
    for family in ("energy", "besov"):
        rc = main(["norm", "--config", cfg, "--solution", sol,
                   "--family", family])
        out = capsys.readouterr().out
        assert rc == 0
        assert out.splitlines()[1].startswith(family + ",")
        assert float(last_csv_value(out)) > 0.0
    rc = main(["norm", "--config", cfg, "--solution", sol,
               "--family", "besov", "--sigma", "0.4"])
    assert rc == 0
    assert ",0.4," in capsys.readouterr().out.splitlines()[1] + ","


# -- experiment subcommand -------------------------------------------------


def test_experiment_runs_and_emits(tmp_path, capsys):
    cfg = write(tmp_path / "study.cfg", EXPERIMENT_CFG)
    outdir = str(tmp_path / "results")
    rc = main(["experiment", "--config", cfg, "--outdir", outdir])
    out = capsys.readouterr().out
    assert rc == 0
    assert "cell s=0.5 p=2: ok" in out
    assert "alpha=" in out
    assert os.path.exists(os.path.join(outdir, "boundary_exponents_p2.csv"))
    assert os.path.exists(os.path.join(outdir, "manifest.txt"))


def test_experiment_failing_cell_exits_1(tmp_path, capsys):
    cfg = write(tmp_path / "study.cfg",
                EXPERIMENT_CFG.replace("s_values = 0.5", "s_values = 0.5, 1.5"))
    rc = main(["experiment", "--config", cfg])
    out = capsys.readouterr().out
    assert rc == 1
    assert "FAILED" in out


# -- entry points ----------------------------------------------------------


def test_version_flag():
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0


def test_console_script_installed():
    proc = subprocess.run([sys.executable, "-m", "fracpfem.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip()
