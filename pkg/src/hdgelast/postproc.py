"""Error measurement, convergence tables, and CSV/VTK export.

Errors are reported both against the exact fields and against their
elementwise L2 projections onto the discrete spaces; the projection errors
are the quantities tracked by the convergence studies. A trace mismatch
norm, sqrt(tau) times the face-projected displacement error minus the trace
error, is measured over all element boundaries; with tau = 1/h it converges
one order faster than the displacement gradient, which is the
superconvergence effect the solver relies on.

Error quadrature uses a higher exactness than assembly so that measured
rates are not polluted by under-integration of the smooth exact solutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fespace import element_quadrature, face_quadrature, scalar_dim
from .hdg_global import Discretization, DiscreteSolution
from .hdg_local import ElementContext
from .material import ComplianceTensor
from .manufactured import ExactSolution, stress
from .mesh import Mesh

__all__ = [
    "ErrorReport",
    "ConvergenceTable",
    "error_quadrature_exactness",
    "project_displacement",
    "project_stress",
    "error_norms",
    "rates",
    "write_csv",
    "write_vtk",
    "CSV_COLUMNS",
]

# Frobenius pairing of the three stress directions with themselves.
_DIR_NORMSQ = np.array([1.0, 1.0, 2.0])


def error_quadrature_exactness(k: int) -> int:
    return 2 * (k + 1) + 6


def project_displacement(ctx: ElementContext, quad, u_fn) -> np.ndarray:
    """Coefficients of the elementwise L2 projection of a vector field onto
    the displacement space (orthonormal basis: plain moments)."""
    vals = np.asarray(u_fn(quad.points), dtype=float)
    phi = ctx.basis.eval(quad.points)
    return (phi.T @ (quad.weights[:, None] * vals)).T.reshape(-1)


def project_stress(ctx: ElementContext, quad, sigma_fn) -> np.ndarray:
    """Coefficients of the elementwise L2 projection of a symmetric matrix
    field onto the stress space."""
    p_s = scalar_dim(ctx.k)
    sig = np.asarray(sigma_fn(quad.points), dtype=float)  # (nq, 2, 2)
    comp = np.stack([sig[:, 0, 0], sig[:, 1, 1], sig[:, 0, 1] + sig[:, 1, 0]], axis=1)
    # pairing with direction c of a symmetric matrix: e12 direction picks up
    # both off-diagonal entries; dividing by the direction norm squared turns
    # moments into coefficients.
    phi = ctx.basis.eval(quad.points, p_s)
    mom = phi.T @ (quad.weights[:, None] * comp)  # (p_s, 3)
    return (mom / _DIR_NORMSQ[None, :]).T.reshape(-1)


@dataclass
class ErrorReport:
    h: float
    k: int
    n_elements: int
    n_trace_dofs: int
    tau: float
    material: str
    err_sigma_proj: float
    err_u_proj: float
    err_sigma: float
    err_u: float
    trace_diag: float

    def as_row(self, mesh_label: str = "") -> dict:
        return {
            "k": self.k,
            "mesh": mesh_label,
            "h": self.h,
            "err_sigma_proj": self.err_sigma_proj,
            "err_u_proj": self.err_u_proj,
            "err_sigma": self.err_sigma,
            "err_u": self.err_u,
            "trace_diag": self.trace_diag,
        }


def error_norms(
    disc: Discretization,
    sol: DiscreteSolution,
    exact: ExactSolution,
    material: ComplianceTensor,
    tau: float,
) -> ErrorReport:
    """All error norms of a recovered solution against an exact one."""
    mesh, k = disc.mesh, disc.k
    p_s, p_u = scalar_dim(k), scalar_dim(k + 1)
    exact_sigma = lambda pts: stress(exact, material, pts)
    qe = error_quadrature_exactness(k)

    e_sig_proj = e_u_proj = e_sig = e_u = trace_sq = 0.0
    for ctx in sol.contexts:
        e = ctx.element
        quad = element_quadrature(mesh, e, qe)
        s_h = sol.stress_coeffs[e]
        w_h = sol.disp_coeffs[e]

        s_pi = project_stress(ctx, quad, exact_sigma)
        w_pi = project_displacement(ctx, quad, exact.u)
        ds = (s_pi - s_h).reshape(3, p_s)
        e_sig_proj += float(np.sum(ds**2 * _DIR_NORMSQ[:, None]))
        e_u_proj += float(np.sum((w_pi - w_h) ** 2))

        phi = ctx.basis.eval(quad.points)
        u_vals = phi @ w_h.reshape(2, p_u).T
        du = u_vals - exact.u(quad.points)
        e_u += float(np.sum(quad.weights * (du**2).sum(axis=1)))
        comp = phi[:, :p_s] @ s_h.reshape(3, p_s).T  # (nq, 3)
        sig_vals = np.empty((len(comp), 2, 2))
        sig_vals[:, 0, 0] = comp[:, 0]
        sig_vals[:, 1, 1] = comp[:, 1]
        sig_vals[:, 0, 1] = sig_vals[:, 1, 0] = comp[:, 2]
        dsig = sig_vals - exact_sigma(quad.points)
        e_sig += float(np.sum(quad.weights * (dsig**2).sum(axis=(1, 2))))

        # trace mismatch sqrt(tau) * (face-projected displacement error
        # minus trace error) over the element boundary
        for fid in ctx.face_ids:
            fq = face_quadrature(mesh, fid, qe)
            modes = disc.face_bases[fid].eval_param(fq.params)
            phi_f = ctx.basis.eval(fq.points)
            du_face = phi_f @ (w_pi - w_h).reshape(2, p_u).T  # (nq, 2)
            pm_du = modes.T @ (fq.weights[:, None] * du_face)  # (k+1, 2)
            pm_u = modes.T @ (fq.weights[:, None] * exact.u(fq.points))
            uhat = sol.trace[disc.face_dofs(fid)].reshape(-1, 2)
            mismatch = pm_du - (pm_u - uhat)
            trace_sq += tau * float(np.sum(mismatch**2))

    return ErrorReport(
        h=mesh.h,
        k=k,
        n_elements=mesh.num_elements,
        n_trace_dofs=disc.dofmap.n_interior,
        tau=tau,
        material=material.mode,
        err_sigma_proj=float(np.sqrt(e_sig_proj)),
        err_u_proj=float(np.sqrt(e_u_proj)),
        err_sigma=float(np.sqrt(e_sig)),
        err_u=float(np.sqrt(e_u)),
        trace_diag=float(np.sqrt(trace_sq)),
    )


def rates(errors: list[float]) -> list[float | None]:
    """Observed orders between successive rows of a halving sequence:
    entry i is log2(e[i-1] / e[i]), None for the first row or when either
    error is not positive."""
    out: list[float | None] = [None]
    for prev, cur in zip(errors, errors[1:]):
        if prev > 0 and cur > 0:
            out.append(float(np.log2(prev / cur)))
        else:
            out.append(None)
    return out


CSV_COLUMNS = [
    "k",
    "mesh",
    "h",
    "err_sigma_proj",
    "order",
    "err_u_proj",
    "order",
    "err_sigma",
    "err_u",
    "trace_diag",
    "order",
]

_RATE_SOURCES = {4: "err_sigma_proj", 6: "err_u_proj", 10: "trace_diag"}


@dataclass
class ConvergenceTable:
    """Rows of a refinement study (h halving downwards) plus derived orders."""

    rows: list[dict] = field(default_factory=list)

    def add_row(self, row: dict) -> None:
        if self.rows and not row["h"] < self.rows[-1]["h"]:
            raise ValueError("rows must be added with strictly decreasing h")
        self.rows.append(row)

    def column(self, key: str) -> list:
        return [row[key] for row in self.rows]

    def orders(self, key: str) -> list[float | None]:
        return rates(self.column(key))

    def final_order(self, key: str) -> float | None:
        return self.orders(key)[-1] if len(self.rows) >= 2 else None


def _fmt(value) -> str:
    if value is None:
        return "-"
    return f"{value:.2E}"


def write_csv(table: ConvergenceTable, path: str) -> None:
    """Write the study in the fixed column layout (errors in scientific
    notation, orders with two decimals, '-' where undefined)."""
    order_cols = {idx: table.orders(src) for idx, src in _RATE_SOURCES.items()}
    with open(path, "w") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for i, row in enumerate(table.rows):
            cells = []
            for idx, name in enumerate(CSV_COLUMNS):
                if name == "order":
                    val = order_cols[idx][i]
                    cells.append("-" if val is None else f"{val:.2f}")
                elif name == "h":
                    cells.append(f"{row['h']:.4f}")
                elif name in ("k",):
                    cells.append(str(row["k"]))
                elif name == "mesh":
                    cells.append(str(row["mesh"]))
                else:
                    cells.append(_fmt(row[name]))
            fh.write(",".join(cells) + "\n")


def write_vtk(mesh: Mesh, sol: DiscreteSolution, path: str, title: str = "hdgelast") -> None:
    """Legacy ASCII unstructured-grid export.

    Elements are fan-triangulated (polygons gain their centroid as an extra
    point). The displacement is point-sampled, averaging over the elements
    sharing a vertex; stress components are exported as cell data holding
    the element mean."""
    k = sol.k
    p_s, p_u = scalar_dim(k), scalar_dim(k + 1)
    npts = mesh.num_vertices
    points = [mesh.vertices]
    u_sum = np.zeros((mesh.num_vertices, 2))
    u_cnt = np.zeros(mesh.num_vertices)
    extra_pts, extra_u = [], []
    tris, tri_elem = [], []

    for e, poly in enumerate(mesh.elements):
        ctx = sol.contexts[e]
        w = sol.disp_coeffs[e].reshape(2, p_u)
        vert_u = ctx.basis.eval(mesh.vertices[list(poly)]) @ w.T
        for loc, v in enumerate(poly):
            u_sum[v] += vert_u[loc]
            u_cnt[v] += 1
        m = len(poly)
        if m == 3:
            tris.append(list(poly))
            tri_elem.append(e)
        else:
            c = mesh.centroid(e)
            cid = npts + len(extra_pts)
            extra_pts.append(c)
            extra_u.append((ctx.basis.eval(c[None, :]) @ w.T)[0])
            for i in range(m):
                tris.append([cid, poly[i], poly[(i + 1) % m]])
                tri_elem.append(e)

    u_pts = np.vstack(
        [u_sum / np.maximum(u_cnt, 1)[:, None]] + ([np.array(extra_u)] if extra_u else [])
    )
    all_pts = np.vstack(points + ([np.array(extra_pts)] if extra_pts else []))

    mean_sigma = []
    for e in range(mesh.num_elements):
        s = sol.stress_coeffs[e].reshape(3, p_s)
        area = mesh.area(e)
        mean_sigma.append(s[:, 0] / np.sqrt(area))  # constant mode is 1/sqrt(area)
    mean_sigma = np.array(mean_sigma)

    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 2.0\n")
        fh.write(f"{title}\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(all_pts)} double\n")
        for p in all_pts:
            fh.write(f"{p[0]:.9E} {p[1]:.9E} 0.0\n")
        fh.write(f"CELLS {len(tris)} {4 * len(tris)}\n")
        for t in tris:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")
        fh.write(f"CELL_TYPES {len(tris)}\n")
        fh.write("5\n" * len(tris))
        fh.write(f"POINT_DATA {len(all_pts)}\n")
        fh.write("VECTORS displacement double\n")
        for u in u_pts:
            fh.write(f"{u[0]:.9E} {u[1]:.9E} 0.0\n")
        fh.write(f"CELL_DATA {len(tris)}\n")
        for name, col in (("stress_xx", 0), ("stress_yy", 1), ("stress_xy", 2)):
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for e in tri_elem:
                fh.write(f"{mean_sigma[e, col]:.9E}\n")
