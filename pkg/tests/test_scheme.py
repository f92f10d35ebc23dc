import numpy as np
import pytest

from maxhdg.exact import LinearSolution, smooth_solution
from maxhdg.mesh import Mesh, build_cube_mesh
from maxhdg.polyspace import VARIANTS, Element, VariantSpaces, full_space
from maxhdg.scheme import (
    ConfigError,
    DataRules,
    Discretization,
    TauRule,
    VariantConfig,
    kernel_trace_condition,
    local_blocks,
    local_residual,
    read_checkpoint,
    skeleton_dof_count,
    solve_monolithic,
    solve_problem,
    uniqueness_probe,
    write_checkpoint,
    write_vtk,
)
from maxhdg.verify import compute_errors

LINEAR = LinearSolution(np.array([[0.5, -1.0, 2.0], [1.0, 0.0, -0.5], [0.3, 0.7, -0.5]]),
                        np.array([0.1, -0.2, 0.3]))


def configs(ks=(0, 1, 2)):
    for v in VARIANTS:
        for k in ks:
            if v in ("Bplus", "Hplus") and k == 0:
                continue
            yield v, k


def test_std_k0_skeleton_size():
    mesh = build_cube_mesh(1)
    disc = Discretization(mesh, VariantConfig("STD", 0), DataRules(mesh, 4))
    assert int((~mesh.boundary).sum()) == 6
    assert disc.n_skeleton == 18


@pytest.mark.parametrize("variant,k", list(configs((0, 1, 2, 3))))
def test_skeleton_count_matches_formula(variant, k):
    mesh = build_cube_mesh(2)
    disc = Discretization(mesh, VariantConfig(variant, k), DataRules(mesh, 2))
    assert disc.n_skeleton == skeleton_dof_count(mesh, variant, k)


def test_local_block_sizes():
    mesh = build_cube_mesh(1)
    disc = Discretization(mesh, VariantConfig("STD", 0), DataRules(mesh, 4))
    A, B, C, D, F = local_blocks(disc, 0, None)
    assert A.shape == (7, 7)
    assert np.allclose(F, 0)


def test_tau_rules():
    mesh = build_cube_mesh(2)
    h = mesh.diameters[:, None]
    tt, tn = TauRule.parse("test-A").resolve(mesh)
    assert np.allclose(tt, 1 / h) and np.allclose(tn, h)
    tt, tn = TauRule.parse("test-B").resolve(mesh)
    assert np.all((tn > 0).sum(axis=1) == 1)
    lowest = np.argmin(mesh.tet_faces, axis=1)
    assert np.allclose(tn[np.arange(mesh.n_elements), lowest], 1e5 / mesh.diameters**2)
    tt, tn = TauRule.parse("exp:a=-1,b=1").resolve(mesh)
    assert np.allclose(tn, 1 / h) and np.allclose(tt, h)
    tt, tn = TauRule.parse("test-E;face:3=2.5").resolve(mesh)
    assert np.allclose(tn[mesh.tet_faces == 3], 2.5)
    assert np.allclose(tn[mesh.tet_faces != 3], 0)
    for bad in ("nope", "exp:a=x", "face:1"):
        with pytest.raises(ConfigError):
            TauRule.parse(bad)


def test_config_validation():
    with pytest.raises(ConfigError, match="k >= 1"):
        VariantConfig("Bplus", 0)
    with pytest.raises(ConfigError):
        VariantConfig("Q", 1)
    with pytest.raises(ConfigError):
        VariantConfig("H", 4)
    mesh = build_cube_mesh(1)
    with pytest.raises(ConfigError):
        solve_problem(mesh, VariantConfig("H", 1, TauRule.parse("test-E")), None)


@pytest.mark.parametrize("variant,k", list(configs()))
def test_condensed_matches_monolithic(variant, k):
    mesh = build_cube_mesh(1)
    sol, system = solve_problem(mesh, VariantConfig(variant, k), smooth_solution(),
                                keep_blocks=True)
    mono = solve_monolithic(system)
    for name in ("w", "u", "p", "uhat", "phat"):
        assert np.abs(getattr(sol, name) - getattr(mono, name)).max() < 1e-9
    assert local_residual(system, sol) < 1e-10


@pytest.mark.parametrize("variant,k", [(v, k) for v, k in configs() if k >= 1 or v != "STD"])
def test_linear_solution_reproduced(variant, k):
    mesh = build_cube_mesh(2)
    sol, system = solve_problem(mesh, VariantConfig(variant, k), LINEAR)
    errs = compute_errors(system.disc, sol, LINEAR)
    assert max(errs.values()) < 1e-9, errs


def test_zero_data_gives_zero_solution():
    mesh = build_cube_mesh(1)
    for variant, k in configs((0, 1)):
        size, rel, full_rank = uniqueness_probe(mesh, VariantConfig(variant, k))
        assert size < 1e-10 and full_rank


def test_test_e_solvable():
    mesh = build_cube_mesh(2)
    sol, system = solve_problem(mesh, VariantConfig("B", 0, TauRule.parse("test-E")),
                                smooth_solution(), keep_blocks=True)
    assert local_residual(system, sol) < 1e-10
    assert uniqueness_probe(build_cube_mesh(1), VariantConfig("B", 0, TauRule.parse("test-E")))[2]


def test_single_element_mesh_has_empty_skeleton():
    V = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    mesh = Mesh(V, [[0, 1, 2, 3]])
    sol, system = solve_problem(mesh, VariantConfig("H", 1), LINEAR)
    assert system.matrix.shape == (0, 0)
    assert max(compute_errors(system.disc, sol, LINEAR).values()) < 1e-10


@pytest.mark.parametrize("variant,k", list(configs((0, 1, 2, 3))))
def test_kernel_trace_condition_holds(variant, k):
    mesh = build_cube_mesh(1)
    disc = Discretization(mesh, VariantConfig(variant, k), DataRules(mesh, 2))
    holds, res = kernel_trace_condition(disc.spaces(0))
    assert holds, res


def test_kernel_trace_condition_detects_small_trace_space():
    el = Element(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]), 2)
    sp = VariantSpaces(el, "H", 1)
    sp.N = [full_space(fb, 0, 2) for fb in el.faces]
    holds, res = kernel_trace_condition(sp)
    assert not holds and res > 1e-3


def test_checkpoint_round_trip_and_vtk(tmp_path):
    mesh = build_cube_mesh(1)
    sol, system = solve_problem(mesh, VariantConfig("Hplus", 1), smooth_solution())
    path = tmp_path / "run.chk"
    write_checkpoint(path, system.disc, sol)
    variant, k, digest, blocks = read_checkpoint(path, mesh)
    assert (variant, k, digest) == ("Hplus", 1, mesh.digest())
    assert np.array_equal(blocks, np.hstack([sol.w, sol.u, sol.p]))
    with pytest.raises(ValueError):
        read_checkpoint(path, build_cube_mesh(2))
    vtk = tmp_path / "run.vtk"
    write_vtk(vtk, system.disc, sol)
    text = vtk.read_text()
    assert text.startswith("# vtk DataFile Version")
    assert f"CELLS {mesh.n_elements} {5 * mesh.n_elements}" in text
    assert "VECTORS u double" in text


@pytest.mark.parametrize("tau", ["test-A", "test-C"])
def test_dissection_solve_matches_pivoted_lu(tau):
    import scipy.sparse.linalg as spla

    from maxhdg.scheme import assemble_global, data_degree, solve

    m = build_cube_mesh(3)
    disc = Discretization(m, VariantConfig("Hplus", 1, TauRule.parse(tau)),
                          DataRules(m, data_degree(1, h=m.h)))
    system = assemble_global(disc, smooth_solution())
    x = solve(system)
    ref = spla.splu(system.matrix.tocsc(), permc_spec="COLAMD").solve(system.rhs)
    assert np.linalg.norm(x - ref) <= 1e-7 * np.linalg.norm(ref)
