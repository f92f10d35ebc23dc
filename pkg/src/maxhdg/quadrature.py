"""Quadrature rules on the reference tetrahedron and triangle.

Rules are conical (collapsed) products of one-dimensional Gauss-Jacobi
rules, so every weight is positive and any exactness degree is available.
The reference tetrahedron has vertices 0, e1, e2, e3 and the reference
triangle has vertices 0, e1, e2.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_DEGREE = 60


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (dim, npts) reference or physical coordinates
    weights: np.ndarray  # (npts,)
    degree: int
    domain: str

    @property
    def size(self):
        return self.weights.size


def _gauss_jacobi01(n, alpha):
    """n-point rule on [0, 1] for the weight (1 - t)^alpha."""
    if alpha == 0:
        x, w = roots_legendre(n)
    else:
        x, w = roots_jacobi(n, alpha, 0.0)
    return (1.0 + x) / 2.0, w / 2.0 ** (alpha + 1)


def gauss_legendre01(n):
    return _gauss_jacobi01(n, 0)


@lru_cache(maxsize=None)
def _tet_rule(degree):
    n = max(1, (degree + 2) // 2)
    a, wa = _gauss_jacobi01(n, 2)
    b, wb = _gauss_jacobi01(n, 1)
    c, wc = _gauss_jacobi01(n, 0)
    A, B, C = np.meshgrid(a, b, c, indexing="ij")
    W = np.einsum("i,j,k->ijk", wa, wb, wc)
    x = A
    y = B * (1.0 - A)
    z = C * (1.0 - A) * (1.0 - B)
    pts = np.vstack([x.ravel(), y.ravel(), z.ravel()])
    return pts, W.ravel()


@lru_cache(maxsize=None)
def _triangle_rule(degree):
    n = max(1, (degree + 2) // 2)
    a, wa = _gauss_jacobi01(n, 1)
    b, wb = _gauss_jacobi01(n, 0)
    A, B = np.meshgrid(a, b, indexing="ij")
    W = np.outer(wa, wb)
    pts = np.vstack([A.ravel(), (B * (1.0 - A)).ravel()])
    return pts, W.ravel()


def make_quadrature(kind, degree):
    """Reference rule on ``kind`` ("tet" or "triangle") exact to ``degree``."""
    if degree < 0:
        raise ValueError("quadrature degree must be nonnegative")
    if degree > MAX_DEGREE:
        raise ValueError(f"unsupported quadrature degree {degree} (max {MAX_DEGREE})")
    if kind == "tet":
        if degree == 0:
            return QuadratureRule(np.full((3, 1), 0.25), np.array([1.0 / 6.0]), 0, "tet")
        pts, w = _tet_rule(degree)
    elif kind == "triangle":
        if degree == 0:
            return QuadratureRule(np.full((2, 1), 1.0 / 3.0), np.array([0.5]), 0, "triangle")
        pts, w = _triangle_rule(degree)
    else:
        raise ValueError(f"unknown quadrature domain {kind!r}")
    return QuadratureRule(pts.copy(), w.copy(), degree, kind)


def map_tet_rule(rule, vertices):
    """Push a reference tet rule onto the tetrahedron with the given vertices (4, 3)."""
    v0 = vertices[0]
    J = (vertices[1:] - v0).T
    pts = v0[:, None] + J @ rule.points
    return QuadratureRule(pts, rule.weights * abs(np.linalg.det(J)), rule.degree, "tet")


def map_triangle_rule(rule, vertices):
    """Push a reference triangle rule onto a triangle in 3D with vertices (3, 3)."""
    v0 = vertices[0]
    E = (vertices[1:] - v0).T
    area2 = np.linalg.norm(np.cross(E[:, 0], E[:, 1]))
    pts = v0[:, None] + E @ rule.points
    return QuadratureRule(pts, rule.weights * area2, rule.degree, "triangle")


# Rules for integrands that behave like dist(x, L)^(-1/3) * smooth near a
# line L touching the simplex.  Coordinates are collapsed toward the part of
# the simplex on L and the radial parameter is substituted t = s^3, which
# turns the singular radial factor into a polynomial in s.

def _radial_nodes(degree):
    n = (3 * degree + 10) // 2 + 1
    s, ws = gauss_legendre01(n)
    return s**3, 3.0 * s**2 * ws


def singular_tet_rule(vertices, on_line, degree):
    """Rule on a tet whose vertices flagged by ``on_line`` lie on the singular line."""
    idx_on = [i for i in range(4) if on_line[i]]
    idx_off = [i for i in range(4) if not on_line[i]]
    t, wt = _radial_nodes(degree)
    ng = max(2, degree // 2 + 4)
    if len(idx_on) == 1:
        A = vertices[idx_on[0]]
        B, C, D = (vertices[i] for i in idx_off)
        tri = make_quadrature("triangle", 2 * ng)
        Q = B[:, None] + np.outer(C - B, tri.points[0]) + np.outer(D - B, tri.points[1])
        jac = abs(np.linalg.det(np.column_stack([B - A, C - B, D - B])))
        pts = A[:, None, None] + t[None, :, None] * (Q[:, None, :] - A[:, None, None])
        w = jac * np.outer(wt * t**2, tri.weights)
    elif len(idx_on) == 2:
        A, B = (vertices[i] for i in idx_on)
        C, D = (vertices[i] for i in idx_off)
        a, wa = gauss_legendre01(ng)
        P = A[:, None] + np.outer(B - A, a)  # (3, na)
        Qp = C[:, None] + np.outer(D - C, a)  # (3, nb)
        jac = abs(np.linalg.det(np.column_stack([C - A, B - A, D - C])))
        pts = ((1 - t)[None, :, None, None] * P[:, None, :, None]
               + t[None, :, None, None] * Qp[:, None, None, :])
        w = jac * np.einsum("t,a,b->tab", wt * t * (1 - t), wa, wa)
    else:
        raise ValueError("a tetrahedron touches the singular line in a vertex or an edge")
    return QuadratureRule(pts.reshape(3, -1), w.ravel(), degree, "tet")


def singular_triangle_rule(vertices, on_line, degree):
    """Rule on a triangle (3, 3) touching the singular line in a vertex or an edge."""
    idx_on = [i for i in range(3) if on_line[i]]
    idx_off = [i for i in range(3) if not on_line[i]]
    t, wt = _radial_nodes(degree)
    ng = max(2, degree // 2 + 4)
    a, wa = gauss_legendre01(ng)
    area2 = np.linalg.norm(np.cross(vertices[1] - vertices[0], vertices[2] - vertices[0]))
    if len(idx_on) == 1:
        A = vertices[idx_on[0]]
        B, C = (vertices[i] for i in idx_off)
        Q = B[:, None] + np.outer(C - B, a)
        pts = A[:, None, None] + t[None, :, None] * (Q[:, None, :] - A[:, None, None])
        w = area2 * np.outer(wt * t, wa)
    elif len(idx_on) == 2:
        A, B = (vertices[i] for i in idx_on)
        C = vertices[idx_off[0]]
        P = A[:, None] + np.outer(B - A, a)
        pts = (1 - t)[None, :, None] * P[:, None, :] + t[None, :, None] * C[:, None, None]
        w = area2 * np.outer(wt * (1 - t), wa)
    else:
        raise ValueError("a triangle touches the singular line in a vertex or an edge")
    return QuadratureRule(pts.reshape(3, -1), w.ravel(), degree, "triangle")
