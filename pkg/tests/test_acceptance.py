"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The refinement studies reuse module-scoped results so the whole gate stays
well inside its runtime budget. Criteria 1 and 2 assert the stated order
windows at the stated refinement levels for every (family, degree) cell;
the k=1 displacement cells on the triangle family are known not to reach
their window at these levels (see the project decision log for the
analysis), so their failures here are expected and deliberate.
"""

import numpy as np
import pytest

from hdgelast import fespace as F
from hdgelast import hdg_global as G
from hdgelast import hdg_local as L
from hdgelast import manufactured as MF
from hdgelast import mesh as M
from hdgelast import postproc as P
from hdgelast.harness import RunConfig, run_convergence
from hdgelast.material import ComplianceTensor

LEVELS = (4, 8, 16, 32)
SIGMA_TOL = 0.15
U_TOL = 0.2


def _report(criterion, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE {criterion}: {status}" + (f" ({detail})" if detail else ""))


# --- shared study results ---------------------------------------------------


@pytest.fixture(scope="module")
def convergence_tables():
    tables = {}
    for family in ("tri", "poly"):
        for k in (1, 2, 3):
            cfg = RunConfig(mesh=family, k=k, solution="test1",
                            material="plane_stress", E=1.0, nu=0.3)
            tables[family, k] = run_convergence(cfg, LEVELS)
    return tables


@pytest.fixture(scope="module")
def locking_tables():
    tables = {}
    for k in (1, 2, 3):
        for nu in (0.49, 0.4999, 0.49999):
            cfg = RunConfig(mesh="tri", k=k, solution="test2",
                            material="plane_strain", E=3.0, nu=nu)
            tables[k, nu] = run_convergence(cfg, LEVELS)
    return tables


def _order_failures(table, k, label):
    bad = []
    so = table.final_order("err_sigma_proj")
    uo = table.final_order("err_u_proj")
    if abs(so - (k + 1)) > SIGMA_TOL:
        bad.append(f"{label}: stress order {so:.3f} outside {k+1}+-{SIGMA_TOL}")
    if abs(uo - (k + 2)) > U_TOL:
        bad.append(f"{label}: displacement order {uo:.3f} outside {k+2}+-{U_TOL}")
    return bad


def test_criterion_1_convergence_rates(convergence_tables):
    """Smooth-solution study: final orders k+1 (stress) and k+2 (displacement)."""
    failures = []
    for (family, k), table in convergence_tables.items():
        failures += _order_failures(table, k, f"{family} k={k}")
    ok = not failures
    _report("1 convergence-rates", ok, "; ".join(failures))
    assert ok, (
        "order windows violated at levels n=4..32: " + "; ".join(failures)
        + " [known spec-level infeasibility for tri k=1 displacement; see decision log]"
    )


def test_criterion_2_locking_study(locking_tables):
    """Near-incompressible study: optimal orders at every nu, and stress
    errors insensitive to nu (< 10% spread at fixed level)."""
    failures = []
    for (k, nu), table in locking_tables.items():
        failures += _order_failures(table, k, f"k={k} nu={nu}")
    for k in (1, 2, 3):
        for i, n in enumerate(LEVELS):
            errs = [locking_tables[k, nu].rows[i]["err_sigma_proj"]
                    for nu in (0.49, 0.4999, 0.49999)]
            spread = (max(errs) - min(errs)) / max(errs)
            if spread >= 0.10:
                failures.append(f"k={k} n={n}: stress error spread {spread:.1%}")
    ok = not failures
    _report("2 locking-study", ok, "; ".join(failures))
    assert ok, (
        "locking study violations: " + "; ".join(failures)
        + " [known spec-level infeasibility for k=1 displacement at n<=32; see decision log]"
    )


def test_criterion_3_spd_characterization():
    """Condensed matrix symmetric and Cholesky-positive; element blocks have
    exactly the rigid-motion kernel and no negative modes."""
    failures = []
    for family in ("tri", "poly"):
        mesh = M.build_mesh(family, 4)
        material = ComplianceTensor.plane_stress(1.0, 0.3)
        for k in (1, 2, 3):
            disc = G.build_discretization(mesh, k)
            systems = G.build_element_systems(disc, material, tau=3.0 / mesh.h)
            glob = G.assemble_global(disc, systems)
            A = glob.matrix
            if abs(A - A.T).max() > 1e-11 * abs(A).max():
                failures.append(f"{family} k={k}: condensed matrix not symmetric")
            try:
                dense = A.toarray()
                np.linalg.cholesky(0.5 * (dense + dense.T))
            except np.linalg.LinAlgError:
                failures.append(f"{family} k={k}: Cholesky failed")
            for sys in systems:
                w = np.linalg.eigvalsh(sys.matrix)
                if int(np.sum(w < 1e-10 * w[-1])) != 3:
                    failures.append(
                        f"{family} k={k} element {sys.ctx.element}: kernel dim != 3"
                    )
                    break
                if w[0] < -1e-10 * w[-1]:
                    failures.append(
                        f"{family} k={k} element {sys.ctx.element}: negative eigenvalue"
                    )
                    break
    ok = not failures
    _report("3 spd-characterization", ok, "; ".join(failures))
    assert ok, failures


def test_criterion_4_condensation_oracle():
    """Element condensed matrix equals the dense Schur complement."""
    failures = []
    material = ComplianceTensor.plane_strain(3.0, 0.49)
    cells = [("tri", e) for e in (0, 1, 3, 4, 6, 7)] + [("poly", e) for e in (0, 1, 2, 3)]
    for k in (1, 2):
        for family, e in cells:
            mesh = M.build_mesh(family, 2)
            disc = G.build_discretization(mesh, k)
            ctx = L.build_element_context(mesh, e, k, disc.face_bases, disc.face_quads)
            blocks = L.assemble_local_blocks(ctx, material, tau=3.0 / mesh.h)
            ops = L.build_local_solvers(blocks)
            A = L.condense(ops, blocks)
            MM = np.block(
                [
                    [-blocks.stress_mass, -blocks.div_coupling],
                    [-blocks.div_coupling.T, blocks.stab_uu],
                ]
            )
            N = np.vstack([blocks.trace_coupling, -blocks.stab_ulam])
            schur = blocks.stab_lamlam - N.T @ np.linalg.solve(MM, N)
            err = np.abs(A - schur).max() / np.abs(schur).max()
            if err > 1e-10:
                failures.append(f"{family} e={e} k={k}: relative mismatch {err:.2e}")
    ok = not failures
    _report("4 condensation-oracle", ok, "; ".join(failures))
    assert ok, failures


def _solve(sol, material, family, n, k, variant="projected", tau_c=3.0):
    mesh = M.build_mesh(family, n)
    tau = tau_c / mesh.h
    disc = G.build_discretization(mesh, k)
    systems = G.build_element_systems(
        disc, material, tau, lambda p: MF.body_force(sol, material, p), variant=variant
    )
    bvals = G.boundary_trace_values(
        disc, lambda p: MF.boundary_data(sol, p), exactness=P.error_quadrature_exactness(k)
    )
    glob = G.assemble_global(disc, systems, bvals)
    trace, _ = G.solve_condensed(glob)
    dsol = G.recover_fields(disc, systems, trace)
    return mesh, tau, disc, systems, dsol


def test_criterion_5_polynomial_exactness():
    """Rigid motions and degree-(k+1) polynomial displacements are solved to
    roundoff, boundary data and body force included."""
    failures = []
    material = ComplianceTensor.plane_stress(1.0, 0.3)
    rng = np.random.default_rng(17)
    for k in (1, 2, 3):
        cases = [MF.rigid_motion_solution(0.6, (0.25, -0.1))]
        deg = k + 1
        c1 = np.zeros((deg + 1, deg + 1))
        c2 = np.zeros((deg + 1, deg + 1))
        for a in range(deg + 1):
            for b in range(deg + 1 - a):
                c1[a, b] = rng.uniform(-1, 1)
                c2[a, b] = rng.uniform(-1, 1)
        cases.append(MF.polynomial_solution(c1, c2, name=f"deg{deg}"))
        for family in ("tri", "poly"):
            for sol in cases:
                mesh, tau, disc, systems, dsol = _solve(sol, material, family, 2, k)
                rep = P.error_norms(disc, dsol, sol, material, tau)
                scale = max(1.0, rep.err_sigma_proj, rep.err_u_proj)
                worst = max(rep.err_sigma_proj, rep.err_u_proj, rep.err_sigma,
                            rep.err_u, rep.trace_diag)
                if worst > 1e-9 * scale:
                    failures.append(f"{family} k={k} {sol.name}: error {worst:.2e}")
    ok = not failures
    _report("5 polynomial-exactness", ok, "; ".join(failures))
    assert ok, failures


def test_criterion_6_flux_single_valuedness():
    """Numerical traction is single-valued across interior faces in the
    projected variant; the plain variant demonstrably violates it."""
    material = ComplianceTensor.plane_stress(1.0, 0.3)
    sol = MF.test1_solution()
    details = []
    ok = True
    for family in ("tri", "poly"):
        mesh, tau, disc, systems, dsol = _solve(sol, material, family, 4, 1)
        jump, scale = G.flux_jump_norm(disc, systems, dsol, tau, variant="projected")
        details.append(f"{family} projected jump {jump / scale:.2e}")
        if jump > 1e-9 * scale:
            ok = False
    mesh, tau, disc, systems, dsol = _solve(sol, material, "tri", 4, 1, variant="plain")
    jump, scale = G.flux_jump_norm(disc, systems, dsol, tau, variant="plain")
    details.append(f"plain jump {jump / scale:.2e} (expected violation)")
    if jump <= 1e-6 * scale:
        ok = False
    _report("6 flux-single-valuedness", ok, "; ".join(details))
    assert ok, details


def test_criterion_7_superconvergence():
    """With tau = 1/h the face mismatch between the projected displacement
    and its trace, weighted by sqrt(h), gains a full extra order."""
    values = []
    for n in (2, 4, 8, 16):
        cfg = RunConfig(mesh="tri", k=1, solution="test1", tau_c=1.0)
        mesh = M.build_unit_square_tri(n)
        sol = MF.test1_solution()
        material = cfg.material_law()
        _, tau, disc, systems, dsol = _solve(sol, material, "tri", n, 1, tau_c=1.0)
        rep = P.error_norms(disc, dsol, sol, material, tau)
        # tau = 1/h makes sqrt(h)*||mismatch|| equal h times the tau-weighted norm
        values.append(mesh.h * rep.trace_diag)
    orders = P.rates(values)
    final = orders[-1]
    ok = final >= 2.8
    _report("7 superconvergence", ok, f"final order {final:.3f} (threshold 2.8)")
    assert ok, (values, orders)


def test_criterion_8_manufactured_data_oracle():
    """Analytic body force equals the finite-difference divergence of the
    manufactured stress, relative to the force magnitude."""
    rng = np.random.default_rng(77)
    pts = rng.uniform(0.02, 0.98, size=(100, 2))
    materials = [
        ComplianceTensor.plane_stress(1.0, 0.3),
        ComplianceTensor.plane_strain(3.0, 0.49),
        ComplianceTensor.plane_strain(3.0, 0.4999),
        ComplianceTensor.plane_strain(3.0, 0.49999),
    ]
    step = 1e-5
    worst = 0.0
    for sol in (MF.test1_solution(), MF.test2_solution()):
        for mat in materials:
            analytic = MF.body_force(sol, mat, pts)
            fd = np.zeros_like(analytic)
            for j, e in enumerate(np.eye(2)):
                ds = (
                    MF.stress(sol, mat, pts + step * e)
                    - MF.stress(sol, mat, pts - step * e)
                ) / (2 * step)
                fd += ds[:, :, j]
            rel = np.abs(analytic - fd).max() / max(1.0, np.abs(analytic).max())
            worst = max(worst, rel)
    ok = worst < 1e-7
    _report("8 manufactured-data-oracle", ok, f"worst relative mismatch {worst:.2e}")
    assert ok, worst
