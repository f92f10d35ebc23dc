import pytest

from maxhdg import cli
from maxhdg.scheme import SolverBreakdown


def test_empty_argv_is_usage_error(capsys):
    assert cli.main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_low_order_reduced_variant_rejected(capsys):
    assert cli.main(["converge", "--variant", "Bplus", "--k", "0"]) == 2
    assert "k >= 1" in capsys.readouterr().err


def test_levels_semantics():
    assert cli.parse_levels("4") == [1, 2, 4, 8]
    assert cli.parse_levels("3,1,2") == [1, 2, 3]
    with pytest.raises(ValueError):
        cli.parse_levels("0")


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# study\nvariant = B\nk = 0\ntau = test-D\nlevels = 2\n", encoding="utf-8")
    rc = cli.parse_config(["converge", "--config", str(cfg), "--tau", "test-E"])
    assert rc.variants == ["B"] and rc.k == 0 and rc.levels == [1, 2]
    assert str(rc.tau) == "test-E"


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n", encoding="utf-8")
    assert cli.main(["converge", "--config", str(cfg)]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_converge_writes_reproducible_csv(tmp_path):
    args = ["converge", "--variant", "H", "--k", "0", "--levels", "2", "--no-timing"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "H_k0_cube.csv").read_bytes()
    assert a == (tmp_path / "b" / "H_k0_cube.csv").read_bytes()
    assert a.startswith(b"variant,k,domain,level,h,dofs_skeleton,err_w,ord_w")
    assert (tmp_path / "a" / "H_k0_cube.plt").exists()


def test_check_suite_passes(capsys):
    assert cli.main(["check", "--k", "1"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") >= 30 and "FAIL" not in out


def test_project_rate_table(capsys):
    assert cli.main(["project", "--op", "curlplus", "--k", "1"]) == 0
    last = capsys.readouterr().out.strip().splitlines()[-1]
    assert abs(float(last.split()[-1]) - 2.0) <= 0.15


def test_export_writes_files(tmp_path):
    assert cli.main(["export", "--variant", "H", "--k", "1", "--level", "1",
                     "--out", str(tmp_path)]) == 0
    assert (tmp_path / "H_k1_cube_n1.vtk").exists() and (tmp_path / "H_k1_cube_n1.chk").exists()


def test_solver_breakdown_exit_code(monkeypatch, capsys):
    def broken(system, method="direct", tol=1e-12):
        raise SolverBreakdown("residual too large")

    monkeypatch.setattr("maxhdg.verify.solve", broken)
    assert cli.main(["converge", "--variant", "H", "--k", "0", "--levels", "1",
                     "--out", "/tmp/maxhdg-breakdown"]) == 3
    err = capsys.readouterr().err
    assert "level n=1" in err and "k=0" in err
