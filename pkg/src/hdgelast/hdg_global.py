"""Global trace system: assembly, boundary lifting, solve, and recovery.

Only the displacement trace unknowns on interior faces are globally
coupled. Boundary faces carry prescribed trace coefficients (the face
projection of the boundary displacement); their coupling is moved to the
right-hand side during assembly, which keeps the solved matrix symmetric
positive definite. After the solve, stress and displacement are recovered
element by element from the local solution operators.

Assembly and recovery iterate over elements in index order and scatter
with a deterministic duplicate-summing conversion, so repeated runs with
the same configuration produce bit-identical results. The element loop
can optionally run on a thread pool (HDG_THREADS); results are gathered
in element order before scattering, so parallel runs stay deterministic.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .fespace import (
    FaceBasis,
    FaceQuadrature,
    TraceDofMap,
    build_face_basis,
    build_trace_dof_map,
    face_quadrature,
    project_trace,
    scalar_dim,
)
from .hdg_local import (
    ElementContext,
    ElementOperators,
    LocalBlocks,
    assemble_local_blocks,
    build_element_context,
    build_local_solvers,
    condense,
    condensed_rhs,
    default_quadrature_exactness,
    displacement_moments,
)
from .material import ComplianceTensor
from .mesh import Mesh

__all__ = [
    "ElementSystem",
    "CondensedSystem",
    "SolverStats",
    "DiscreteSolution",
    "SolverError",
    "Discretization",
    "build_discretization",
    "build_element_systems",
    "assemble_global",
    "boundary_trace_values",
    "solve_condensed",
    "recover_fields",
    "flux_jump_norm",
    "scheme_residuals",
]


class SolverError(Exception):
    """Linear solve failed (non-SPD matrix or no convergence)."""


# size above which the "auto" solver policy switches from the direct
# factorization to preconditioned conjugate gradients
DIRECT_SOLVER_DOF_LIMIT = 200_000


def _thread_count() -> int:
    env = os.environ.get("HDG_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


@dataclass
class Discretization:
    """Mesh-level discretization data shared by all elements."""

    mesh: Mesh
    k: int
    dofmap: TraceDofMap
    face_bases: dict[int, FaceBasis]
    face_quads: dict[int, FaceQuadrature]

    def face_dofs(self, face_id: int) -> np.ndarray:
        return self.dofmap.face_dofs(face_id)


def build_discretization(mesh: Mesh, k: int, quad_exactness: int | None = None) -> Discretization:
    if quad_exactness is None:
        quad_exactness = default_quadrature_exactness(k)
    dofmap = build_trace_dof_map(mesh, k)
    face_bases = {fid: build_face_basis(mesh, fid, k) for fid in range(mesh.num_faces)}
    face_quads = {fid: face_quadrature(mesh, fid, quad_exactness) for fid in range(mesh.num_faces)}
    return Discretization(mesh, k, dofmap, face_bases, face_quads)


@dataclass
class ElementSystem:
    """One element's assembled blocks, eliminated operators, and condensed
    contribution to the trace system."""

    ctx: ElementContext
    blocks: LocalBlocks
    ops: ElementOperators
    matrix: np.ndarray  # (n_lam, n_lam)
    rhs: np.ndarray  # (n_lam,)
    source_stress: np.ndarray
    source_disp: np.ndarray


def build_element_systems(
    disc: Discretization,
    material: ComplianceTensor,
    tau: float,
    f_fn=None,
    variant: str = "projected",
    quad_exactness: int | None = None,
) -> list[ElementSystem]:
    """Build, eliminate and condense every element; embarrassingly parallel."""
    mesh, k = disc.mesh, disc.k

    def one(e: int) -> ElementSystem:
        ctx = build_element_context(
            mesh, e, k, disc.face_bases, disc.face_quads, quad_exactness
        )
        blocks = assemble_local_blocks(ctx, material, tau, variant)
        ops = build_local_solvers(blocks)
        A_K = condense(ops, blocks)
        if f_fn is not None:
            qs, us = ops.source_parts(displacement_moments(ctx, f_fn))
        else:
            qs = np.zeros(ctx.n_stress)
            us = np.zeros(ctx.n_disp)
        b_K = condensed_rhs(blocks, qs, us)
        return ElementSystem(ctx, blocks, ops, A_K, b_K, qs, us)

    nthreads = _thread_count()
    ids = range(mesh.num_elements)
    if nthreads == 1:
        return [one(e) for e in ids]
    with ThreadPoolExecutor(max_workers=nthreads) as pool:
        return list(pool.map(one, ids))


@dataclass
class CondensedSystem:
    """Reduced SPD system over interior trace dofs plus boundary data."""

    matrix: scipy.sparse.csr_matrix
    rhs: np.ndarray
    boundary_values: np.ndarray  # full trace vector, nonzero on boundary dofs
    dofmap: TraceDofMap


def boundary_trace_values(disc: Discretization, g_fn, exactness: int | None = None) -> np.ndarray:
    """Full trace vector holding the face projection of the boundary data."""
    values = np.zeros(disc.dofmap.total)
    if g_fn is None:
        return values
    for fid in disc.dofmap.boundary_face_ids:
        if exactness is None:
            fq = disc.face_quads[fid]
        else:
            fq = face_quadrature(disc.mesh, fid, exactness)
        values[disc.face_dofs(fid)] = project_trace(g_fn, disc.face_bases[fid], fq)
    return values


def assemble_global(
    disc: Discretization,
    systems: list[ElementSystem],
    boundary_values: np.ndarray | None = None,
) -> CondensedSystem:
    """Scatter element contributions into the interior trace system, lifting
    prescribed boundary coefficients to the right-hand side."""
    dofmap = disc.dofmap
    if boundary_values is None:
        boundary_values = np.zeros(dofmap.total)
    n = dofmap.n_interior
    rhs = np.zeros(n)
    rows, cols, vals = [], [], []
    for sys in systems:
        gdofs = np.concatenate([disc.face_dofs(fid) for fid in sys.ctx.face_ids])
        if len(gdofs) != len(sys.rhs):
            raise AssertionError("element/face dof count mismatch")
        red = dofmap.interior_index[gdofs]
        inside = red >= 0
        np.add.at(rhs, red[inside], sys.rhs[inside])
        A = sys.matrix
        ii = np.where(inside)[0]
        rows.append(np.repeat(red[ii], len(ii)))
        cols.append(np.tile(red[ii], len(ii)))
        vals.append(A[np.ix_(ii, ii)].ravel())
        bb = np.where(~inside)[0]
        if len(bb):
            lift = A[np.ix_(ii, bb)] @ boundary_values[gdofs[bb]]
            np.add.at(rhs, red[ii], -lift)
    matrix = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    matrix.sum_duplicates()
    return CondensedSystem(matrix, rhs, boundary_values, dofmap)


@dataclass
class SolverStats:
    method: str
    n: int
    nnz: int
    iterations: int = 0
    min_pivot: float = np.nan
    residual: float = np.nan


def _block_jacobi(system: CondensedSystem) -> scipy.sparse.csr_matrix:
    """Inverse of the per-face diagonal blocks (interior dofs are contiguous
    per face by construction)."""
    A = system.matrix
    bs = system.dofmap.ndof_face
    blocks = []
    for start in range(0, system.dofmap.n_interior, bs):
        sub = A[start : start + bs, start : start + bs].toarray()
        blocks.append(np.linalg.inv(sub))
    return scipy.sparse.block_diag(blocks, format="csr")


def solve_condensed(
    system: CondensedSystem, method: str = "auto", tol: float = 1e-12
) -> tuple[np.ndarray, SolverStats]:
    """Solve for the interior trace coefficients.

    ``cholesky``: sparse symmetric factorization with zero pivot threshold;
    all elimination pivots must come out positive, anything else means the
    matrix is not SPD and is reported as a hard error. ``cg``: conjugate
    gradients with a per-face block-Jacobi preconditioner. ``auto`` picks
    the factorization up to DIRECT_SOLVER_DOF_LIMIT unknowns, cg above.

    Returns the full trace vector (boundary values filled in) and stats."""
    A, b = system.matrix, system.rhs
    n = A.shape[0]
    if method == "auto":
        method = "cholesky" if n <= DIRECT_SOLVER_DOF_LIMIT else "cg"
    stats = SolverStats(method=method, n=n, nnz=A.nnz)
    if n == 0:
        full = system.boundary_values.copy()
        return full, stats

    if method == "cholesky":
        try:
            lu = scipy.sparse.linalg.splu(
                A.tocsc(),
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:
            raise SolverError(f"symmetric factorization failed: {exc}") from exc
        pivots = lu.U.diagonal()
        stats.min_pivot = float(pivots.min())
        if stats.min_pivot <= 0.0 or not np.all(np.isfinite(pivots)):
            raise SolverError(
                f"matrix is not positive definite (min pivot {stats.min_pivot:.3e})"
            )
        x = lu.solve(b)
    elif method == "cg":
        M = _block_jacobi(system)
        count = {"it": 0}

        def cb(_xk):
            count["it"] += 1

        x, info = scipy.sparse.linalg.cg(A, b, rtol=tol, atol=0.0, M=M, callback=cb)
        stats.iterations = count["it"]
        if info > 0:
            raise SolverError(f"cg did not converge in {info} iterations")
        if info < 0:
            raise SolverError("cg failed (illegal input or breakdown)")
    else:
        raise ValueError(f"unknown solver {method!r} (expected 'cholesky' or 'cg')")

    bnorm = np.linalg.norm(b)
    stats.residual = float(np.linalg.norm(A @ x - b) / bnorm) if bnorm > 0 else 0.0
    full = system.boundary_values.copy()
    full[system.dofmap.interior_index >= 0] = x
    return full, stats


@dataclass
class DiscreteSolution:
    """Recovered per-element fields plus the trace vector."""

    k: int
    stress_coeffs: list[np.ndarray]
    disp_coeffs: list[np.ndarray]
    trace: np.ndarray
    contexts: list[ElementContext] = field(repr=False, default=None)

    def element_trace(self, disc: Discretization, e: int) -> np.ndarray:
        gdofs = np.concatenate(
            [disc.face_dofs(fid) for fid in disc.mesh.element_faces[e]]
        )
        return self.trace[gdofs]


def recover_fields(
    disc: Discretization, systems: list[ElementSystem], trace: np.ndarray
) -> DiscreteSolution:
    """Apply the local solution operators to the solved trace, element by
    element, adding the body-force response."""
    stress, disp, contexts = [], [], []
    for sys in systems:
        gdofs = np.concatenate([disc.face_dofs(fid) for fid in sys.ctx.face_ids])
        lam = trace[gdofs]
        stress.append(sys.ops.stress_map @ lam + sys.source_stress)
        disp.append(sys.ops.disp_map @ lam + sys.source_disp)
        contexts.append(sys.ctx)
    return DiscreteSolution(disc.k, stress, disp, trace, contexts)


def _face_flux_values(
    disc: Discretization,
    sys: ElementSystem,
    sol: DiscreteSolution,
    local_face: int,
    fq: FaceQuadrature,
    variant: str,
    tau: float,
) -> np.ndarray:
    """Numerical traction of one element on one of its faces, evaluated at
    the given face quadrature points, shape (nq, 2)."""
    ctx = sys.ctx
    e = ctx.element
    k = ctx.k
    p_s = scalar_dim(k)
    fid = ctx.face_ids[local_face]
    nrm = ctx.normals[local_face]
    s = sol.stress_coeffs[e].reshape(3, p_s)
    phi_s = ctx.basis.eval(fq.points, p_s)  # (nq, p_s)
    comp = phi_s @ s.T  # (nq, 3): s11, s22, s12
    sig_n = np.stack(
        [comp[:, 0] * nrm[0] + comp[:, 2] * nrm[1], comp[:, 2] * nrm[0] + comp[:, 1] * nrm[1]],
        axis=1,
    )
    fb = disc.face_bases[fid]
    modes = fb.eval_param(fq.params)  # (nq, k+1)
    uhat = sol.trace[disc.face_dofs(fid)].reshape(-1, 2)  # (k+1, 2)
    uhat_vals = modes @ uhat
    p_u = scalar_dim(k + 1)
    phi_u = ctx.basis.eval(fq.points)  # (nq, p_u)
    w = sol.disp_coeffs[e].reshape(2, p_u)
    u_face = phi_u @ w.T  # raw displacement trace, (nq, 2)
    if variant == "projected":
        mom = modes.T @ (fq.weights[:, None] * u_face)  # (k+1, 2)
        u_face = modes @ mom
    return sig_n - tau * (u_face - uhat_vals)


def flux_jump_norm(
    disc: Discretization,
    systems: list[ElementSystem],
    sol: DiscreteSolution,
    tau: float,
    variant: str = "projected",
    exactness: int | None = None,
) -> tuple[float, float]:
    """(L2 norm of the traction jump over interior faces, L2 norm of the
    one-sided tractions) for relative single-valuedness checks."""
    mesh = disc.mesh
    if exactness is None:
        exactness = 2 * (disc.k + 1) + 4
    sys_by_elem = {s.ctx.element: s for s in systems}
    jump_sq = 0.0
    scale_sq = 0.0
    for fid, f in enumerate(mesh.faces):
        fq = face_quadrature(mesh, fid, exactness)
        sides = [(f.left, None)] if f.is_boundary else [(f.left, None), (f.right, None)]
        fluxes = []
        for e, _ in sides:
            sys = sys_by_elem[e]
            local = sys.ctx.face_ids.index(fid)
            vals = _face_flux_values(disc, sys, sol, local, fq, variant, tau)
            fluxes.append(vals)
            scale_sq += float(np.sum(fq.weights * (vals**2).sum(axis=1)))
        if len(fluxes) == 2:
            j = fluxes[0] + fluxes[1]
            jump_sq += float(np.sum(fq.weights * (j**2).sum(axis=1)))
    return np.sqrt(jump_sq), np.sqrt(scale_sq)


def scheme_residuals(
    disc: Discretization,
    systems: list[ElementSystem],
    sol: DiscreteSolution,
    f_fn=None,
    g_fn=None,
) -> dict[str, float]:
    """Residual norms of the discrete equations for the recovered solution,
    relative to the size of the terms entering each equation.

    Keys: constitutive (stress equation), balance (momentum equation),
    transmission (interior traction moments), boundary (trace data)."""
    res = {"constitutive": 0.0, "balance": 0.0, "transmission": 0.0, "boundary": 0.0}
    scale = {"constitutive": 0.0, "balance": 0.0, "transmission": 0.0, "boundary": 0.0}
    nf_dof = disc.dofmap.ndof_face
    trans = np.zeros(disc.dofmap.total)
    for sys in systems:
        e = sys.ctx.element
        gdofs = np.concatenate([disc.face_dofs(fid) for fid in sys.ctx.face_ids])
        lam = sol.trace[gdofs]
        s, w = sol.stress_coeffs[e], sol.disp_coeffs[e]
        b = sys.blocks
        r1 = b.stress_mass @ s + b.div_coupling @ w - b.trace_coupling @ lam
        res["constitutive"] += float(r1 @ r1)
        scale["constitutive"] += float(np.sum((b.stress_mass @ s) ** 2)) + float(
            np.sum((b.trace_coupling @ lam) ** 2)
        )
        fm = displacement_moments(sys.ctx, f_fn) if f_fn is not None else np.zeros_like(w)
        r2 = -b.div_coupling.T @ s + b.stab_uu @ w - b.stab_ulam @ lam + fm
        res["balance"] += float(r2 @ r2)
        scale["balance"] += float(np.sum((b.div_coupling.T @ s) ** 2)) + float(fm @ fm)
        tmom = b.trace_coupling.T @ s - b.stab_ulam.T @ w + b.stab_lamlam @ lam
        np.add.at(trans, gdofs, tmom)
        scale["transmission"] += float(tmom @ tmom)
    interior = disc.dofmap.interior_index >= 0
    res["transmission"] = float(np.sum(trans[interior] ** 2))
    g_vals = boundary_trace_values(disc, g_fn)
    diff = sol.trace[~interior] - g_vals[~interior]
    res["boundary"] = float(diff @ diff)
    scale["boundary"] = float(np.sum(g_vals[~interior] ** 2))
    out = {}
    for key in res:
        denom = np.sqrt(scale[key]) if scale[key] > 0 else 1.0
        out[key] = np.sqrt(res[key]) / denom
    return out
