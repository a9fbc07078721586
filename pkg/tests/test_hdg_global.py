import numpy as np
import pytest
import scipy.sparse

from hdgelast import hdg_global as G
from hdgelast import manufactured as MF
from hdgelast import mesh as M
from hdgelast import postproc as P
from hdgelast.material import ComplianceTensor

PLANE_STRESS = ComplianceTensor.plane_stress(1.0, 0.3)


def solve_manufactured(family, n, k, sol, material, tau_c=3.0, variant="projected",
                       solver="cholesky", tol=1e-12):
    mesh = M.build_mesh(family, n)
    tau = tau_c / mesh.h
    disc = G.build_discretization(mesh, k)
    f_fn = lambda pts: MF.body_force(sol, material, pts)
    g_fn = lambda pts: MF.boundary_data(sol, pts)
    systems = G.build_element_systems(disc, material, tau, f_fn, variant=variant)
    bvals = G.boundary_trace_values(disc, g_fn, exactness=P.error_quadrature_exactness(k))
    glob = G.assemble_global(disc, systems, bvals)
    trace, stats = G.solve_condensed(glob, solver, tol)
    dsol = G.recover_fields(disc, systems, trace)
    return mesh, tau, disc, systems, glob, dsol, stats


def test_system_size_single_interior_face():
    mesh = M.build_unit_square_tri(1)
    disc = G.build_discretization(mesh, 1)
    systems = G.build_element_systems(disc, PLANE_STRESS, tau=2.0)
    glob = G.assemble_global(disc, systems)
    assert glob.matrix.shape == (4, 4)


def test_zero_data_zero_solution():
    mesh = M.build_unit_square_tri(2)
    disc = G.build_discretization(mesh, 1)
    systems = G.build_element_systems(disc, PLANE_STRESS, tau=2.0)
    glob = G.assemble_global(disc, systems)
    assert np.abs(glob.rhs).max() == 0.0
    trace, stats = G.solve_condensed(glob)
    assert np.abs(trace).max() == 0.0
    sol = G.recover_fields(disc, systems, trace)
    assert max(np.abs(s).max() for s in sol.stress_coeffs) == 0.0
    assert max(np.abs(w).max() for w in sol.disp_coeffs) == 0.0


@pytest.mark.parametrize("family,k", [("tri", 1), ("tri", 2), ("poly", 2)])
def test_global_matrix_symmetric_and_spd(family, k):
    mesh = M.build_mesh(family, 4)
    disc = G.build_discretization(mesh, k)
    systems = G.build_element_systems(disc, PLANE_STRESS, tau=1.0 / mesh.h)
    glob = G.assemble_global(disc, systems)
    A = glob.matrix
    asym = abs(A - A.T).max()
    assert asym <= 1e-11 * abs(A).max()
    dense = A.toarray()
    np.linalg.cholesky(0.5 * (dense + dense.T))  # raises if not SPD


def test_cholesky_positive_pivots_reported():
    _, _, _, _, glob, _, stats = solve_manufactured(
        "tri", 8, 1, MF.test1_solution(), PLANE_STRESS
    )
    assert stats.method == "cholesky"
    assert stats.min_pivot > 0
    assert stats.residual < 1e-10


def test_cg_and_cholesky_agree_on_random_spd():
    # cross-solver oracle on a synthetic SPD system with the same block layout
    rng = np.random.default_rng(9)
    nfaces, bs = 10, 5
    n = nfaces * bs
    B = rng.normal(size=(n, n))
    A = scipy.sparse.csr_matrix(B @ B.T + n * np.eye(n))
    b = rng.normal(size=n)
    from hdgelast.fespace import TraceDofMap

    dm = TraceDofMap(
        k=1,
        face_offset=np.arange(nfaces) * bs,
        ndof_face=bs,
        total=n,
        interior_index=np.arange(n),
        n_interior=n,
        boundary_face_ids=(),
    )
    system = G.CondensedSystem(A, b, np.zeros(n), dm)
    x_chol, _ = G.solve_condensed(system, "cholesky")
    x_cg, stats = G.solve_condensed(system, "cg", tol=1e-13)
    assert stats.iterations > 0
    assert np.abs(x_chol - x_cg).max() < 1e-10 * max(1.0, np.abs(x_chol).max())


def test_cg_on_actual_problem_matches_direct():
    sol = MF.test1_solution()
    *_, dsol_direct, _ = solve_manufactured("tri", 4, 1, sol, PLANE_STRESS, solver="cholesky")
    *_, dsol_cg, stats = solve_manufactured("tri", 4, 1, sol, PLANE_STRESS, solver="cg", tol=1e-14)
    assert np.abs(dsol_direct.trace - dsol_cg.trace).max() < 1e-9
    assert stats.iterations > 0


def test_non_spd_detected():
    rng = np.random.default_rng(2)
    n = 12
    B = rng.normal(size=(n, n))
    A = B @ B.T + n * np.eye(n)
    A[0, 0] = -5.0  # break positive definiteness
    from hdgelast.fespace import TraceDofMap

    dm = TraceDofMap(
        k=1,
        face_offset=np.arange(3) * 4,
        ndof_face=4,
        total=n,
        interior_index=np.arange(n),
        n_interior=n,
        boundary_face_ids=(),
    )
    system = G.CondensedSystem(scipy.sparse.csr_matrix(A), np.ones(n), np.zeros(n), dm)
    with pytest.raises(G.SolverError):
        G.solve_condensed(system, "cholesky")


def test_unknown_solver_rejected():
    mesh = M.build_unit_square_tri(1)
    disc = G.build_discretization(mesh, 1)
    systems = G.build_element_systems(disc, PLANE_STRESS, tau=1.0)
    glob = G.assemble_global(disc, systems)
    with pytest.raises(ValueError):
        G.solve_condensed(glob, "qr")


def test_rigid_motion_dirichlet_reproduced():
    sol = MF.rigid_motion_solution(0.8, (0.1, 0.6))
    mesh, tau, disc, systems, glob, dsol, _ = solve_manufactured(
        "poly", 3, 1, sol, PLANE_STRESS
    )
    rep = P.error_norms(disc, dsol, sol, PLANE_STRESS, tau)
    assert rep.err_sigma < 1e-10
    assert rep.err_u < 1e-10
    assert rep.trace_diag < 1e-10


@pytest.mark.parametrize("family", ["tri", "poly"])
@pytest.mark.parametrize("k", [1, 2])
def test_polynomial_exactness(family, k):
    # any displacement of total degree k+1 with matching force and boundary
    # data lies in the discrete space and is reproduced to roundoff
    rng = np.random.default_rng(31 + k)
    deg = k + 1
    c1 = np.zeros((deg + 1, deg + 1))
    c2 = np.zeros((deg + 1, deg + 1))
    for a in range(deg + 1):
        for b in range(deg + 1 - a):
            c1[a, b] = rng.uniform(-1, 1)
            c2[a, b] = rng.uniform(-1, 1)
    sol = MF.polynomial_solution(c1, c2, name=f"poly-deg{deg}")
    material = ComplianceTensor.plane_strain(3.0, 0.3)
    mesh, tau, disc, systems, glob, dsol, _ = solve_manufactured(family, 2, k, sol, material)
    rep = P.error_norms(disc, dsol, sol, material, tau)
    assert rep.err_sigma_proj < 1e-9
    assert rep.err_u_proj < 1e-9
    assert rep.err_sigma < 1e-9
    assert rep.err_u < 1e-9
    assert rep.trace_diag < 1e-9


def test_discrete_equations_residuals():
    sol = MF.test1_solution()
    mesh, tau, disc, systems, glob, dsol, _ = solve_manufactured("tri", 4, 2, sol, PLANE_STRESS)
    f_fn = lambda pts: MF.body_force(sol, PLANE_STRESS, pts)
    g_fn = lambda pts: MF.boundary_data(sol, pts)
    res = G.scheme_residuals(disc, systems, dsol, f_fn, g_fn)
    for key, val in res.items():
        assert val < 1e-9, (key, val)


@pytest.mark.parametrize("family", ["tri", "poly"])
def test_flux_single_valued_projected(family):
    sol = MF.test1_solution()
    mesh, tau, disc, systems, glob, dsol, _ = solve_manufactured(family, 4, 1, sol, PLANE_STRESS)
    jump, scale = G.flux_jump_norm(disc, systems, dsol, tau, variant="projected")
    assert jump <= 1e-9 * scale


def test_flux_jump_visible_in_plain_variant():
    sol = MF.test1_solution()
    mesh, tau, disc, systems, glob, dsol, _ = solve_manufactured(
        "tri", 4, 1, sol, PLANE_STRESS, variant="plain"
    )
    jump, scale = G.flux_jump_norm(disc, systems, dsol, tau, variant="plain")
    assert jump > 1e-6 * scale


def test_boundary_lifting_values_applied():
    sol = MF.rigid_motion_solution(0.5, (0.0, 0.0))
    mesh, tau, disc, systems, glob, dsol, _ = solve_manufactured("tri", 2, 1, sol, PLANE_STRESS)
    g_fn = lambda pts: MF.boundary_data(sol, pts)
    expected = G.boundary_trace_values(disc, g_fn)
    boundary = disc.dofmap.interior_index < 0
    assert np.abs(dsol.trace[boundary] - expected[boundary]).max() < 1e-14


def test_assembly_deterministic():
    sol = MF.test1_solution()
    *_, glob1, dsol1, _ = solve_manufactured("poly", 3, 1, sol, PLANE_STRESS)
    *_, glob2, dsol2, _ = solve_manufactured("poly", 3, 1, sol, PLANE_STRESS)
    assert np.array_equal(glob1.matrix.toarray(), glob2.matrix.toarray())
    assert np.array_equal(glob1.rhs, glob2.rhs)
    assert np.array_equal(dsol1.trace, dsol2.trace)


def test_threaded_assembly_matches_serial(monkeypatch):
    sol = MF.test1_solution()
    *_, dsol1, _ = solve_manufactured("tri", 3, 1, sol, PLANE_STRESS)
    monkeypatch.setenv("HDG_THREADS", "4")
    *_, dsol2, _ = solve_manufactured("tri", 3, 1, sol, PLANE_STRESS)
    assert np.array_equal(dsol1.trace, dsol2.trace)


def test_auto_solver_policy(monkeypatch):
    sol = MF.test1_solution()
    *_, stats_small = solve_manufactured("tri", 4, 1, sol, PLANE_STRESS, solver="auto")
    assert stats_small.method == "cholesky"
    monkeypatch.setattr(G, "DIRECT_SOLVER_DOF_LIMIT", 10)
    *_, stats_big = solve_manufactured("tri", 4, 1, sol, PLANE_STRESS, solver="auto")
    assert stats_big.method == "cg"
    assert stats_big.iterations > 0
