"""Element and face polynomial bases, quadrature, and the trace dof map.

Scalar element bases are built from monomials scaled to the element bounding
box, then orthonormalized against the element mass matrix. This works on
arbitrary convex polygons, where no reference-element map exists, and keeps
the Gram matrix close to the identity even on stretched trapezoids. The
orthonormalization is graded: the leading (m+1)(m+2)/2 functions of a
degree-m basis span exactly the polynomials of total degree <= m, so a
degree-(k+1) basis also provides the nested degree-k basis.

Polygon quadrature triangulates the element as a fan around the centroid and
applies a collapsed tensor-product Gauss rule on each triangle. Collapsed
rules are exact at any requested degree and have strictly positive weights
(classical compact symmetric tables lose positivity at several degrees).

Face bases are scaled Legendre polynomials in the arc-length parameter, so
they are exactly orthonormal, and they belong to the face rather than to an
element: both neighbours of an interior face see the same trace functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .mesh import Mesh

__all__ = [
    "Quadrature",
    "FaceQuadrature",
    "ElementBasis",
    "StressBasis",
    "FaceBasis",
    "TraceDofMap",
    "triangle_rule",
    "segment_rule",
    "element_quadrature",
    "face_quadrature",
    "build_element_basis",
    "build_face_basis",
    "project_trace",
    "build_trace_dof_map",
    "scalar_dim",
]

MAX_EXACTNESS = 50


class QuadratureDegreeError(Exception):
    """Requested polynomial exactness beyond the supported range."""


class ElementConditioningError(Exception):
    """Element geometry too degenerate to orthonormalize a basis on."""


def scalar_dim(degree: int) -> int:
    """Dimension of the scalar polynomials of total degree <= degree in 2D."""
    return (degree + 1) * (degree + 2) // 2


@dataclass(frozen=True)
class Quadrature:
    """Quadrature rule in physical coordinates; weights carry the measure."""

    points: np.ndarray  # (nq, 2)
    weights: np.ndarray  # (nq,)


@dataclass(frozen=True)
class FaceQuadrature:
    """Quadrature on a straight face, with arc-length parameters in [0, 1]."""

    points: np.ndarray  # (nq, 2)
    weights: np.ndarray  # (nq,), sums to the face length
    params: np.ndarray  # (nq,), position along the face from v0 to v1


@lru_cache(maxsize=None)
def _gauss_legendre_01(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def triangle_rule(exactness: int) -> tuple[np.ndarray, np.ndarray]:
    """Rule on the reference triangle (0,0)-(1,0)-(0,1), exact for the
    given total degree, with positive weights.

    Built by collapsing a tensor Gauss rule: x = u, y = v(1-u) with
    Jacobian (1-u). A degree-d monomial x^a y^b becomes a polynomial of
    degree a+b+1 in u and b in v, which fixes the 1D point counts.
    """
    if exactness < 0 or exactness > MAX_EXACTNESS:
        raise QuadratureDegreeError(
            f"exactness {exactness} out of range (max supported {MAX_EXACTNESS})"
        )
    d = max(exactness, 0)
    u, wu = _gauss_legendre_01((d + 3) // 2)
    v, wv = _gauss_legendre_01((d + 2) // 2)
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv) * (1.0 - U)
    pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
    return pts, W.ravel()


@lru_cache(maxsize=None)
def segment_rule(exactness: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule on [0, 1] exact for the given 1D polynomial degree."""
    if exactness < 0 or exactness > MAX_EXACTNESS:
        raise QuadratureDegreeError(
            f"exactness {exactness} out of range (max supported {MAX_EXACTNESS})"
        )
    return _gauss_legendre_01(exactness // 2 + 1)


def _polygon_quadrature(poly: np.ndarray, exactness: int) -> Quadrature:
    """Fan-triangulate a convex polygon around its centroid and map the
    reference triangle rule to each fan triangle."""
    ref_pts, ref_w = triangle_rule(exactness)
    m = len(poly)
    if m == 3:
        tris = [poly]
    else:
        x, y = poly[:, 0], poly[:, 1]
        cross = x * np.roll(y, -1) - np.roll(x, -1) * y
        a = 0.5 * cross.sum()
        c = np.array(
            [
                np.sum((x + np.roll(x, -1)) * cross) / (6 * a),
                np.sum((y + np.roll(y, -1)) * cross) / (6 * a),
            ]
        )
        tris = [np.array([c, poly[i], poly[(i + 1) % m]]) for i in range(m)]
    pts, wts = [], []
    for tri in tris:
        jac = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
        det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
        pts.append(ref_pts @ jac.T + tri[0])
        wts.append(ref_w * det)
    return Quadrature(np.vstack(pts), np.concatenate(wts))


def element_quadrature(mesh: Mesh, e: int, exactness: int) -> Quadrature:
    """Quadrature on element ``e`` exact for bivariate total degree
    ``exactness``; raises QuadratureDegreeError beyond MAX_EXACTNESS."""
    return _polygon_quadrature(mesh.polygon(e), exactness)


def face_quadrature(mesh: Mesh, face_id: int, exactness: int) -> FaceQuadrature:
    """Gauss quadrature on a face, exact for 1D degree ``exactness``."""
    f = mesh.faces[face_id]
    t, w = segment_rule(exactness)
    p0, p1 = mesh.vertices[f.v0], mesh.vertices[f.v1]
    pts = p0[None, :] + t[:, None] * (p1 - p0)[None, :]
    return FaceQuadrature(pts, w * f.length, t)


class ElementBasis:
    """Orthonormal scalar polynomial basis on one element.

    Functions are linear combinations of bounding-box scaled monomials in
    graded order; the first function is the constant 1/sqrt(area). The
    combination matrix is lower triangular, so truncating to the leading
    scalar_dim(m) functions yields an orthonormal basis of degree m.
    """

    def __init__(self, element: int, degree: int, center, scale, coeff: np.ndarray):
        self.element = element
        self.degree = degree
        self.center = np.asarray(center, dtype=float)
        self.scale = np.asarray(scale, dtype=float)
        self.coeff = coeff  # (N, N), rows = basis functions over monomials
        self.exponents = _graded_exponents(degree)

    @property
    def dim(self) -> int:
        return len(self.coeff)

    def _local(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pts = np.atleast_2d(pts)
        return (pts[:, 0] - self.center[0]) / self.scale[0], (
            pts[:, 1] - self.center[1]
        ) / self.scale[1]

    def eval(self, pts: np.ndarray, nfun: int | None = None) -> np.ndarray:
        """Basis values at points, shape (npts, nfun)."""
        X, Y = self._local(pts)
        V = _monomial_values(X, Y, self.exponents)
        C = self.coeff if nfun is None else self.coeff[:nfun]
        return V @ C.T

    def grad(self, pts: np.ndarray, nfun: int | None = None) -> np.ndarray:
        """Basis gradients at points, shape (npts, nfun, 2)."""
        X, Y = self._local(pts)
        gx, gy = _monomial_grads(X, Y, self.exponents)
        C = self.coeff if nfun is None else self.coeff[:nfun]
        out = np.empty((len(X), len(C), 2))
        out[:, :, 0] = (gx @ C.T) / self.scale[0]
        out[:, :, 1] = (gy @ C.T) / self.scale[1]
        return out


@lru_cache(maxsize=None)
def _graded_exponents(degree: int) -> tuple[tuple[int, int], ...]:
    return tuple((d - b, b) for d in range(degree + 1) for b in range(d + 1))


def _monomial_values(X, Y, exponents) -> np.ndarray:
    deg = max(a + b for a, b in exponents)
    Xp = np.vander(X, deg + 1, increasing=True)
    Yp = np.vander(Y, deg + 1, increasing=True)
    return np.stack([Xp[:, a] * Yp[:, b] for a, b in exponents], axis=1)


def _monomial_grads(X, Y, exponents) -> tuple[np.ndarray, np.ndarray]:
    deg = max(a + b for a, b in exponents)
    Xp = np.vander(X, deg + 1, increasing=True)
    Yp = np.vander(Y, deg + 1, increasing=True)
    gx = np.stack(
        [a * Xp[:, a - 1] * Yp[:, b] if a > 0 else np.zeros_like(X) for a, b in exponents],
        axis=1,
    )
    gy = np.stack(
        [b * Xp[:, a] * Yp[:, b - 1] if b > 0 else np.zeros_like(X) for a, b in exponents],
        axis=1,
    )
    return gx, gy


def build_element_basis(mesh: Mesh, e: int, degree: int, quad: Quadrature | None = None) -> ElementBasis:
    """Orthonormalize scaled monomials of total degree <= degree against the
    element mass matrix.

    A Cholesky factorization of the monomial Gram matrix plays the role of
    modified Gram-Schmidt in the L2(K) inner product; a second pass removes
    the O(eps * cond) residue of the first."""
    if degree < 0:
        raise ValueError("degree must be >= 0")
    poly = mesh.polygon(e)
    lo, hi = poly.min(axis=0), poly.max(axis=0)
    center, scale = 0.5 * (lo + hi), 0.5 * (hi - lo)
    if min(scale) <= 1e-14 * max(max(scale), 1e-300):
        raise ElementConditioningError(f"element {e}: degenerate bounding box {scale}")
    if quad is None:
        quad = element_quadrature(mesh, e, 2 * degree)
    exponents = _graded_exponents(degree)
    X = (quad.points[:, 0] - center[0]) / scale[0]
    Y = (quad.points[:, 1] - center[1]) / scale[1]
    V = _monomial_values(X, Y, exponents)
    coeff = np.eye(len(exponents))
    for _ in range(2):
        W = V @ coeff.T
        gram = W.T @ (quad.weights[:, None] * W)
        try:
            L = np.linalg.cholesky(gram)
        except np.linalg.LinAlgError as exc:
            raise ElementConditioningError(
                f"element {e}: mass matrix not positive definite at degree {degree}"
            ) from exc
        coeff = scipy.linalg.solve_triangular(L, coeff, lower=True)
    return ElementBasis(e, degree, center, scale, coeff)


class StressBasis:
    """Symmetric-matrix-valued basis: 3 constant symmetric directions
    (e11, e22, symmetric e12) times a scalar basis of degree k.

    Coefficient layout is direction-major: entry c * dim_scalar + i pairs
    direction c with scalar function i.
    """

    DIRECTIONS = np.array(
        [
            [[1.0, 0.0], [0.0, 0.0]],
            [[0.0, 0.0], [0.0, 1.0]],
            [[0.0, 1.0], [1.0, 0.0]],
        ]
    )
    # Frobenius norms squared of the directions; the Gram matrix of the
    # stress basis is diag(1, 1, 2) kron identity.
    DIR_NORMSQ = np.array([1.0, 1.0, 2.0])

    def __init__(self, scalar: ElementBasis, degree: int):
        if degree > scalar.degree:
            raise ValueError("scalar basis degree too low for requested stress degree")
        self.scalar = scalar
        self.degree = degree
        self.nscalar = scalar_dim(degree)

    @property
    def dim(self) -> int:
        return 3 * self.nscalar

    def eval_field(self, coeffs: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """Evaluate the stress field with the given coefficients, (npts, 2, 2)."""
        phi = self.scalar.eval(pts, self.nscalar)
        comp = phi @ coeffs.reshape(3, self.nscalar).T  # (npts, 3)
        return np.einsum("pc,cij->pij", comp, self.DIRECTIONS)


class FaceBasis:
    """Orthonormal scalar basis on one face: scaled Legendre polynomials in
    the arc parameter. Vector trace functions pair each mode with one of the
    two Cartesian components (mode-major, component-minor layout)."""

    def __init__(self, face_id: int, degree: int, length: float):
        self.face_id = face_id
        self.degree = degree
        self.length = length

    @property
    def nmodes(self) -> int:
        return self.degree + 1

    @property
    def dim(self) -> int:
        return 2 * (self.degree + 1)

    def eval_param(self, t: np.ndarray) -> np.ndarray:
        """Scalar mode values at arc parameters t in [0, 1], (npts, nmodes)."""
        t = np.atleast_1d(t)
        x = 2.0 * t - 1.0
        out = np.empty((len(t), self.nmodes))
        for j in range(self.nmodes):
            c = np.zeros(j + 1)
            c[j] = 1.0
            out[:, j] = np.polynomial.legendre.legval(x, c) * np.sqrt(
                (2 * j + 1) / self.length
            )
        return out


def build_face_basis(mesh: Mesh, face_id: int, degree: int) -> FaceBasis:
    return FaceBasis(face_id, degree, mesh.faces[face_id].length)


def project_trace(fn, basis: FaceBasis, quad: FaceQuadrature) -> np.ndarray:
    """L2-orthogonal projection of a vector-valued function onto the face
    trace space; returns the 2(degree+1) coefficients, mode-major.

    ``fn`` maps (npts, 2) physical points to (npts, 2) values. With an
    orthonormal basis the coefficients are plain quadrature moments."""
    vals = np.asarray(fn(quad.points), dtype=float)
    modes = basis.eval_param(quad.params)
    moments = modes.T @ (quad.weights[:, None] * vals)  # (nmodes, 2)
    return moments.reshape(-1)


@dataclass
class TraceDofMap:
    """Global numbering of the trace unknowns.

    Every face owns 2(k+1) consecutive dofs (mode-major, component-minor).
    Interior dofs additionally carry a condensed-system index; boundary
    dofs map to -1 there and hold prescribed data instead.
    """

    k: int
    face_offset: np.ndarray  # (nfaces,), start of each face's dof block
    ndof_face: int
    total: int
    interior_index: np.ndarray  # (total,), -1 on boundary faces
    n_interior: int
    boundary_face_ids: tuple[int, ...]

    def face_dofs(self, face_id: int) -> np.ndarray:
        start = self.face_offset[face_id]
        return np.arange(start, start + self.ndof_face)


def build_trace_dof_map(mesh: Mesh, k: int) -> TraceDofMap:
    """Number the trace dofs face by face; interior condensed indices follow
    the same deterministic face order."""
    ndof_face = 2 * (k + 1)
    nfaces = mesh.num_faces
    face_offset = np.arange(nfaces) * ndof_face
    total = nfaces * ndof_face
    interior_index = np.full(total, -1, dtype=int)
    nxt = 0
    boundary = []
    for fid, f in enumerate(mesh.faces):
        if f.is_boundary:
            boundary.append(fid)
            continue
        s = face_offset[fid]
        interior_index[s : s + ndof_face] = np.arange(nxt, nxt + ndof_face)
        nxt += ndof_face
    return TraceDofMap(
        k=k,
        face_offset=face_offset,
        ndof_face=ndof_face,
        total=total,
        interior_index=interior_index,
        n_interior=nxt,
        boundary_face_ids=tuple(boundary),
    )
