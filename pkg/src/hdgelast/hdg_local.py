"""Per-element local solvers and static condensation.

Each element carries three unknown groups: symmetric stress coefficients of
degree k (layout direction-major over e11/e22/e12sym), displacement
coefficients of degree k+1 (component-major), and the trace coefficients on
its faces (mode-major, component-minor per face). The local saddle system
couples stress and displacement to the trace; eliminating the first two
yields a small symmetric positive semidefinite trace matrix per element
whose kernel consists exactly of the rigid-motion traces.

The condensed matrix is assembled in its symmetric quadratic form

    A_K = Q^T (stress mass) Q + sum_F tau * R_F^T R_F,
    R_F = (face projection of U) - (face selection),

where Q and U map trace coefficients to the eliminated stress and
displacement coefficients. An equivalent "flux" expression, obtained by
pairing the numerical traction with the face test functions, is kept as a
cross-check and as the assembly route for the unprojected stabilization
variant (where the quadratic form above does not apply).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .fespace import (
    ElementBasis,
    FaceBasis,
    FaceQuadrature,
    Quadrature,
    build_element_basis,
    element_quadrature,
    scalar_dim,
)
from .material import ComplianceTensor
from .mesh import Mesh

__all__ = [
    "ElementContext",
    "LocalBlocks",
    "ElementOperators",
    "build_element_context",
    "assemble_local_blocks",
    "build_local_solvers",
    "condense",
    "condensed_rhs",
    "displacement_moments",
    "default_quadrature_exactness",
]


class LocalSolverError(Exception):
    """Local element system could not be factorized."""


class AssemblyError(Exception):
    """An assembled matrix violates a structural requirement."""


def default_quadrature_exactness(k: int) -> int:
    """Assembly quadrature exactness: covers every bilinear pairing of the
    degree-(k, k+1, k) spaces on straight-sided elements with margin."""
    return 2 * (k + 1) + 2


@dataclass
class ElementContext:
    """Geometry, quadrature and bases needed to assemble one element."""

    mesh: Mesh
    element: int
    k: int
    basis: ElementBasis  # scalar basis of degree k+1 (degree-k part nested)
    quad: Quadrature
    area: float
    face_ids: tuple[int, ...]
    normals: list[np.ndarray]  # outward unit normal per local face
    face_bases: list[FaceBasis]
    face_quads: list[FaceQuadrature]

    @property
    def n_stress(self) -> int:
        return 3 * scalar_dim(self.k)

    @property
    def n_disp(self) -> int:
        return 2 * scalar_dim(self.k + 1)

    @property
    def n_trace(self) -> int:
        return len(self.face_ids) * 2 * (self.k + 1)


def build_element_context(
    mesh: Mesh,
    e: int,
    k: int,
    face_bases: dict[int, FaceBasis],
    face_quads: dict[int, FaceQuadrature],
    quad_exactness: int | None = None,
) -> ElementContext:
    if quad_exactness is None:
        quad_exactness = default_quadrature_exactness(k)
    quad = element_quadrature(mesh, e, quad_exactness)
    basis = build_element_basis(mesh, e, k + 1, quad)
    fids = mesh.element_faces[e]
    return ElementContext(
        mesh=mesh,
        element=e,
        k=k,
        basis=basis,
        quad=quad,
        area=mesh.area(e),
        face_ids=fids,
        normals=[mesh.outward_normal(e, fid) for fid in fids],
        face_bases=[face_bases[fid] for fid in fids],
        face_quads=[face_quads[fid] for fid in fids],
    )


@dataclass
class LocalBlocks:
    """Element matrices of the saddle system.

    stress_mass     (A sigma, v)                 n_s x n_s, SPD
    div_coupling    (u, div v)                   n_s x n_u
    trace_coupling  <lam, v n>                   n_s x n_lam
    stab_uu         tau-weighted pairing of face-projected displacement
                    traces (raw traces in the plain variant)
    stab_ulam       tau-weighted pairing of trace unknowns with projected
                    displacement traces, n_u x n_lam
    stab_lamlam     tau <lam, mu> = tau I        n_lam x n_lam
    face_proj       per face: moments of the displacement trace against the
                    face modes, shape (2(k+1), n_u)
    """

    ctx: ElementContext
    tau: float
    variant: str
    stress_mass: np.ndarray
    div_coupling: np.ndarray
    trace_coupling: np.ndarray
    stab_uu: np.ndarray
    stab_ulam: np.ndarray
    stab_lamlam: np.ndarray
    face_proj: list[np.ndarray]


def assemble_local_blocks(
    ctx: ElementContext,
    material: ComplianceTensor,
    tau: float,
    variant: str = "projected",
    debug_quadrature_check: bool = False,
) -> LocalBlocks:
    """Quadrature-assemble all element matrices.

    The stabilization projects the displacement trace onto the face modes
    through exact face mass matrices before pairing; ``variant="plain"``
    skips that projection and pairs the raw degree-(k+1) traces instead.
    With ``debug_quadrature_check`` the element is reassembled with a richer
    rule and any disagreement above 1e-9 raises AssemblyError.
    """
    if tau <= 0:
        raise ValueError(f"stabilization parameter must be positive, got {tau}")
    if variant not in ("projected", "plain"):
        raise ValueError(f"unknown trace variant {variant!r}")
    blocks = _assemble_local_blocks(ctx, material, tau, variant)
    if debug_quadrature_check:
        rich = _enriched_context(ctx)
        ref = _assemble_local_blocks(rich, material, tau, variant)
        for name in ("div_coupling", "trace_coupling", "stab_uu", "stab_ulam"):
            a, b = getattr(blocks, name), getattr(ref, name)
            err = np.abs(a - b).max() / max(np.abs(b).max(), 1e-300)
            if err > 1e-9:
                raise AssemblyError(
                    f"element {ctx.element}: quadrature-sensitive block {name} "
                    f"(relative deviation {err:.2e}); raise the exactness degree"
                )
    return blocks


def _enriched_context(ctx: ElementContext) -> ElementContext:
    """Same element with quadrature four degrees richer (debug comparisons)."""
    from .fespace import face_quadrature

    extra = default_quadrature_exactness(ctx.k) + 4
    return ElementContext(
        mesh=ctx.mesh,
        element=ctx.element,
        k=ctx.k,
        basis=ctx.basis,
        quad=element_quadrature(ctx.mesh, ctx.element, extra),
        area=ctx.area,
        face_ids=ctx.face_ids,
        normals=ctx.normals,
        face_bases=ctx.face_bases,
        face_quads=[face_quadrature(ctx.mesh, fid, extra) for fid in ctx.face_ids],
    )


def _assemble_local_blocks(
    ctx: ElementContext,
    material: ComplianceTensor,
    tau: float,
    variant: str,
) -> LocalBlocks:
    k = ctx.k
    p_s, p_u = scalar_dim(k), scalar_dim(k + 1)
    n_s, n_u, n_lam = ctx.n_stress, ctx.n_disp, ctx.n_trace
    nf_dof = 2 * (k + 1)
    w = ctx.quad.weights

    # Stress mass: with an orthonormal scalar basis and constant material the
    # block is the 3x3 direction Gram matrix kron the identity.
    stress_mass = np.kron(material.compliance_direction_matrix(), np.eye(p_s))

    phi_u = ctx.basis.eval(ctx.quad.points)  # (nq, p_u)
    grad_s = ctx.basis.grad(ctx.quad.points, p_s)  # (nq, p_s, 2)
    gx = grad_s[:, :, 0].T @ (w[:, None] * phi_u)  # (p_s, p_u)
    gy = grad_s[:, :, 1].T @ (w[:, None] * phi_u)
    div_coupling = np.zeros((n_s, n_u))
    div_coupling[0 * p_s : 1 * p_s, 0 * p_u : 1 * p_u] = gx
    div_coupling[1 * p_s : 2 * p_s, 1 * p_u : 2 * p_u] = gy
    div_coupling[2 * p_s : 3 * p_s, 0 * p_u : 1 * p_u] = gy
    div_coupling[2 * p_s : 3 * p_s, 1 * p_u : 2 * p_u] = gx

    trace_coupling = np.zeros((n_s, n_lam))
    stab_uu = np.zeros((n_u, n_u))
    stab_ulam = np.zeros((n_u, n_lam))
    face_proj: list[np.ndarray] = []

    for j, (fb, fq, nrm) in enumerate(zip(ctx.face_bases, ctx.face_quads, ctx.normals)):
        mu = fb.eval_param(fq.params)  # (nq, k+1)
        tr_full = ctx.basis.eval(fq.points)  # (nq, p_u)
        wf = fq.weights
        ms = tr_full[:, :p_s].T @ (wf[:, None] * mu)  # (p_s, k+1)
        mu_u = tr_full.T @ (wf[:, None] * mu)  # (p_u, k+1)

        # (E_c n) columns per direction: e11 -> (n0, 0), e22 -> (0, n1),
        # e12 -> (n1, n0).
        en = np.array([[nrm[0], 0.0], [0.0, nrm[1]], [nrm[1], nrm[0]]])
        cols = slice(j * nf_dof, (j + 1) * nf_dof)
        blk = np.zeros((n_s, nf_dof))
        for c in range(3):
            for m in range(2):
                if en[c, m] != 0.0:
                    blk[c * p_s : (c + 1) * p_s, m::2] = en[c, m] * ms
        trace_coupling[:, cols] = blk

        proj = np.zeros((nf_dof, n_u))
        for m in range(2):
            proj[m::2, m * p_u : (m + 1) * p_u] = mu_u.T
        face_proj.append(proj)

        if variant == "projected":
            stab_uu += tau * proj.T @ proj
        else:
            fmass = tr_full.T @ (wf[:, None] * tr_full)  # (p_u, p_u)
            for m in range(2):
                stab_uu[m * p_u : (m + 1) * p_u, m * p_u : (m + 1) * p_u] += tau * fmass
        stab_ulam[:, cols] = tau * proj.T

    stab_lamlam = tau * np.eye(n_lam)
    return LocalBlocks(
        ctx=ctx,
        tau=tau,
        variant=variant,
        stress_mass=stress_mass,
        div_coupling=div_coupling,
        trace_coupling=trace_coupling,
        stab_uu=stab_uu,
        stab_ulam=stab_ulam,
        stab_lamlam=stab_lamlam,
        face_proj=face_proj,
    )


@dataclass
class ElementOperators:
    """Eliminated local solution operators and the condensed contribution.

    stress_map / disp_map send trace coefficients to the eliminated stress
    and displacement coefficients; source_parts solves the same factorized
    system for a body-force load. condensed / condensed_rhs are the element
    contribution to the global trace system.
    """

    ctx: ElementContext
    stress_map: np.ndarray  # (n_s, n_lam)
    disp_map: np.ndarray  # (n_u, n_lam)
    _lu: tuple

    def source_parts(self, f_moments: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Stress/displacement response to a body-force moment vector."""
        n_s = self.ctx.n_stress
        rhs = np.zeros(n_s + self.ctx.n_disp)
        rhs[n_s:] = -f_moments
        sol = scipy.linalg.lu_solve(self._lu, rhs)
        return sol[:n_s], sol[n_s:]


def _saddle_matrix(blocks: LocalBlocks) -> np.ndarray:
    """Symmetric indefinite element matrix over (stress, displacement)."""
    n_s = blocks.ctx.n_stress
    n_u = blocks.ctx.n_disp
    M = np.empty((n_s + n_u, n_s + n_u))
    M[:n_s, :n_s] = -blocks.stress_mass
    M[:n_s, n_s:] = -blocks.div_coupling
    M[n_s:, :n_s] = -blocks.div_coupling.T
    M[n_s:, n_s:] = blocks.stab_uu
    return M


def _trace_coupling_stacked(blocks: LocalBlocks) -> np.ndarray:
    """Coupling of (stress, displacement) rows to the trace columns."""
    return np.vstack([blocks.trace_coupling, -blocks.stab_ulam])


def build_local_solvers(blocks: LocalBlocks) -> ElementOperators:
    """Factorize the element saddle system once and solve for the response
    to every trace basis vector; the factorization is retained for source
    loads."""
    M = _saddle_matrix(blocks)
    try:
        lu = scipy.linalg.lu_factor(M)
    except scipy.linalg.LinAlgError as exc:
        raise LocalSolverError(f"element {blocks.ctx.element}: singular local system") from exc
    if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) == 0.0:
        raise LocalSolverError(f"element {blocks.ctx.element}: singular local system")
    n_s = blocks.ctx.n_stress
    sol = scipy.linalg.lu_solve(lu, -_trace_coupling_stacked(blocks))
    return ElementOperators(
        ctx=blocks.ctx, stress_map=sol[:n_s], disp_map=sol[n_s:], _lu=lu
    )


def condense(
    ops: ElementOperators,
    blocks: LocalBlocks,
    check_tol: float | None = 1e-9,
    debug_flux_check: bool = False,
) -> np.ndarray:
    """Element trace matrix, symmetric positive semidefinite with the
    rigid-motion traces as kernel.

    Uses the symmetric quadratic form for the projected variant and the
    flux pairing for the plain variant; raises AssemblyError if the result
    is not symmetric to ``check_tol`` (relative). ``debug_flux_check``
    additionally verifies the two algebraically identical expressions
    against each other."""
    if blocks.variant == "projected":
        A = ops.stress_map.T @ blocks.stress_mass @ ops.stress_map
        nf_dof = 2 * (blocks.ctx.k + 1)
        for j, proj in enumerate(blocks.face_proj):
            R = proj @ ops.disp_map
            R[:, j * nf_dof : (j + 1) * nf_dof] -= np.eye(nf_dof)
            A += blocks.tau * R.T @ R
    else:
        A = condense_flux_form(ops, blocks)
    scale = max(np.abs(A).max(), 1e-300)
    if check_tol is not None:
        asym = np.abs(A - A.T).max() / scale
        if asym > check_tol:
            raise AssemblyError(
                f"element {blocks.ctx.element}: condensed matrix asymmetry {asym:.2e}"
            )
    if debug_flux_check and blocks.variant == "projected":
        dev = np.abs(A - condense_flux_form(ops, blocks)).max() / scale
        if dev > 1e-10:
            raise AssemblyError(
                f"element {blocks.ctx.element}: quadratic and flux forms of the "
                f"condensed matrix disagree ({dev:.2e})"
            )
    return 0.5 * (A + A.T)


def condense_flux_form(ops: ElementOperators, blocks: LocalBlocks) -> np.ndarray:
    """Condensed matrix via the numerical-traction pairing; algebraically
    identical to the quadratic form and used as its cross-check."""
    return (
        blocks.trace_coupling.T @ ops.stress_map
        - blocks.stab_ulam.T @ ops.disp_map
        + blocks.stab_lamlam
    )


def condensed_rhs(
    blocks: LocalBlocks, source_stress: np.ndarray, source_disp: np.ndarray
) -> np.ndarray:
    """Element load for the trace system: the negative traction moments of
    the source response, so that the condensed equations express flux
    continuity of the full recovered solution."""
    return -(
        blocks.trace_coupling.T @ source_stress - blocks.stab_ulam.T @ source_disp
    )


def displacement_moments(ctx: ElementContext, f_fn) -> np.ndarray:
    """Moments of a vector field against the displacement basis,
    component-major layout."""
    vals = np.asarray(f_fn(ctx.quad.points), dtype=float)  # (nq, 2)
    phi = ctx.basis.eval(ctx.quad.points)  # (nq, p_u)
    mom = phi.T @ (ctx.quad.weights[:, None] * vals)  # (p_u, 2)
    return mom.T.reshape(-1)
