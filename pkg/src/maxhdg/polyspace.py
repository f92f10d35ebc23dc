"""Orthonormal polynomial bases on tetrahedra and faces, and constrained subspaces.

Every space is represented by a coefficient matrix over an orthonormal
ambient basis, so L2 inner products reduce to Euclidean ones on coefficients.
Scalar bases are hierarchical: the first dim P_j functions span P_j.
"""

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np

from .quadrature import make_quadrature, map_tet_rule, map_triangle_rule

SVD_TOL = 1e-10


def dim_p(dim, k):
    """Dimension of P_k in ``dim`` variables (0 for k < 0)."""
    return comb(k + dim, dim) if k >= 0 else 0


def dim_homogeneous(dim, k):
    return comb(k + dim - 1, dim - 1) if k >= 0 else 0


@lru_cache(maxsize=None)
def monomial_exponents(dim, degree):
    """Exponents of all monomials of total degree <= degree, graded by degree."""
    out = []
    for d in range(degree + 1):
        out.extend(_homogeneous_exponents(dim, d))
    return np.array(out, dtype=int).reshape(-1, dim)


@lru_cache(maxsize=None)
def homogeneous_exponents(dim, degree):
    return np.array(_homogeneous_exponents(dim, degree), dtype=int).reshape(-1, dim)


def _homogeneous_exponents(dim, d):
    if dim == 1:
        return [(d,)]
    out = []
    for a in range(d, -1, -1):
        for rest in _homogeneous_exponents(dim - 1, d - a):
            out.append((a,) + rest)
    return out


def _powers(y, pmax):
    P = np.ones((pmax + 1,) + y.shape)
    for p in range(1, pmax + 1):
        P[p] = P[p - 1] * y
    return P


def eval_monomials(exps, y):
    """Values (nmono, npts) of monomials y^exps at points y (dim, npts)."""
    P = _powers(y, max(int(exps.max(initial=0)), 1))
    out = np.ones((len(exps), y.shape[1]))
    for d in range(y.shape[0]):
        out *= P[exps[:, d], d]
    return out


def eval_monomial_grads(exps, y):
    """Gradients (nmono, dim, npts) of monomials at points y."""
    P = _powers(y, max(int(exps.max(initial=0)), 1))
    dim = y.shape[0]
    out = np.empty((len(exps), dim, y.shape[1]))
    for a in range(dim):
        g = exps[:, a].astype(float)[:, None] * P[np.maximum(exps[:, a] - 1, 0), a]
        for d in range(dim):
            if d != a:
                g = g * P[exps[:, d], d]
        out[:, a] = g
    return out


_REF = {
    "tet": (3, np.full(3, 0.25)),
    "triangle": (2, np.full(2, 1.0 / 3.0)),
}


@lru_cache(maxsize=None)
def _reference_coefficients(kind, degree):
    """Monomial coefficients (in coordinates centred at the reference centroid) of the
    orthonormal hierarchical basis of P_degree on the reference simplex."""
    dim, c = _REF[kind]
    rule = make_quadrature(kind, 2 * degree + 2)
    exps = monomial_exponents(dim, degree)
    M = eval_monomials(exps, rule.points - c[:, None]).T * np.sqrt(rule.weights)[:, None]
    # Householder QR preserves the graded column order, hence hierarchy;
    # one reorthogonalization pass removes residual Gram defect.
    Q, R = np.linalg.qr(M)
    Q2, R2 = np.linalg.qr(Q)
    R = R2 @ R
    s = np.sign(np.diag(R))
    R = R * s[:, None]
    Cinv = np.linalg.inv(R)
    return exps, Cinv


class PolyBasis:
    """Orthonormal hierarchical scalar basis of P_degree on a tetrahedron or a triangle in R^3.

    ``vertices`` has 4 rows for a tetrahedron, 3 rows for a triangle.  The
    basis is the reference basis composed with the inverse affine map and
    rescaled to unit L2 norm on the physical simplex.
    """

    def __init__(self, vertices, degree, frame=None):
        self.vertices = np.asarray(vertices, dtype=float)
        self.degree = degree
        self.kind = "tet" if len(self.vertices) == 4 else "triangle"
        self.dim_ref, self.ref_centroid = _REF[self.kind]
        self.origin = self.vertices[0]
        self.J = (self.vertices[1:] - self.origin).T  # (3, dim_ref)
        if self.kind == "tet":
            det = np.linalg.det(self.J)
            self.measure = abs(det) / 6.0
            self.Jpinv = np.linalg.inv(self.J)
            jac = abs(det)
        else:
            G = self.J.T @ self.J
            self.Jpinv = np.linalg.solve(G, self.J.T)
            jac = np.sqrt(np.linalg.det(G))
            self.measure = jac / 2.0
        self.jac = jac
        self.scale = 1.0 / np.sqrt(jac)
        self.exps, self.coef = _reference_coefficients(self.kind, degree)
        self.size = len(self.exps)
        self.centroid = self.vertices.mean(axis=0)
        self.frame = frame
        if self.kind == "triangle" and frame is None:
            self.frame = face_frame(self.vertices)
        self._rules = {}

    def size_of(self, k):
        return dim_p(self.dim_ref, k)

    def to_ref(self, x):
        return self.Jpinv @ (np.asarray(x) - self.origin[:, None])

    def _local(self, x):
        return self.to_ref(x) - self.ref_centroid[:, None]

    def values(self, x, k=None):
        n = self.size if k is None else self.size_of(k)
        m = eval_monomials(self.exps, self._local(x))
        return self.scale * (self.coef[:, :n].T @ m)

    def grads(self, x, k=None):
        """Gradients (n, 3, npts); on a triangle these are surface gradients."""
        n = self.size if k is None else self.size_of(k)
        g = eval_monomial_grads(self.exps, self._local(x))  # (nm, dim_ref, npts)
        gref = np.tensordot(self.coef[:, :n], g, axes=([0], [0]))
        return self.scale * np.matmul(self.Jpinv.T, gref)

    def rule(self, degree):
        r = self._rules.get(degree)
        if r is None:
            ref = make_quadrature(self.kind, degree)
            if self.kind == "tet":
                r = map_tet_rule(ref, self.vertices)
            else:
                r = map_triangle_rule(ref, self.vertices)
            self._rules[degree] = r
        return r

    def project(self, values, rule, k=None):
        """L2 projection coefficients of samples (..., npts) at ``rule`` points onto P_k."""
        phi = self.values(rule.points, k)
        return np.einsum("...q,nq->...n", values * rule.weights, phi)

    def homogeneous_values(self, x, degree, origin=None):
        """Values of a (non-orthonormal) monomial basis of polynomials homogeneous of
        ``degree`` about ``origin`` (default: centroid), in reference-scaled coordinates."""
        c = self.ref_centroid if origin is None else self.to_ref(np.asarray(origin)[:, None])[:, 0]
        y = self.to_ref(x) - c[:, None]
        return eval_monomials(homogeneous_exponents(self.dim_ref, degree), y)

    def homogeneous_grads(self, x, degree, origin=None):
        c = self.ref_centroid if origin is None else self.to_ref(np.asarray(origin)[:, None])[:, 0]
        y = self.to_ref(x) - c[:, None]
        g = eval_monomial_grads(homogeneous_exponents(self.dim_ref, degree), y)
        return np.einsum("ab,nbk->nak", self.Jpinv.T, g)


@dataclass
class SubspaceBasis:
    """Span of the columns of ``coeffs`` over ``ncomp`` copies of an orthonormal scalar basis.

    Vector values are ``frame @ components``: the identity on a tetrahedron,
    the tangent frame (t1, t2) on a face; scalar spaces have ``frame=None``.
    Coefficient layout is component-major: row ``c * basis.size + i``.
    """

    basis: PolyBasis
    ncomp: int
    coeffs: np.ndarray
    frame: np.ndarray = None

    @property
    def dim(self):
        return self.coeffs.shape[1]

    def _split(self, coeffs=None):
        C = self.coeffs if coeffs is None else coeffs
        return C.reshape(self.ncomp, self.basis.size, -1)

    def values(self, x, coeffs=None):
        """Scalar spaces: (m, npts).  Vector spaces: (m, 3, npts)."""
        phi = self.basis.values(x)
        comp = np.matmul(self._split(coeffs).transpose(0, 2, 1), phi).transpose(1, 0, 2)
        if self.frame is None:
            return comp[:, 0] if self.ncomp == 1 else comp
        return np.matmul(self.frame, comp)

    def jacobian(self, x, coeffs=None):
        """(m, 3, 3, npts) with [m, c, a] = d(component c)/dx_a, tetrahedra only."""
        g = self.basis.grads(x)
        return np.tensordot(self._split(coeffs), g, axes=([1], [0])).transpose(1, 0, 2, 3)

    def grads(self, x, coeffs=None):
        """Gradients (m, 3, npts) of a scalar space."""
        g = self.basis.grads(x)
        return np.tensordot(self._split(coeffs)[0], g, axes=([0], [0]))

    def curl(self, x, coeffs=None):
        J = self.jacobian(x, coeffs)
        return np.stack([J[:, 2, 1] - J[:, 1, 2], J[:, 0, 2] - J[:, 2, 0],
                         J[:, 1, 0] - J[:, 0, 1]], axis=1)

    def div(self, x, coeffs=None):
        J = self.jacobian(x, coeffs)
        return J[:, 0, 0] + J[:, 1, 1] + J[:, 2, 2]

    def with_coeffs(self, coeffs):
        return SubspaceBasis(self.basis, self.ncomp, coeffs, self.frame)


def full_space(basis, k, ncomp=1, frame=None):
    """P_k^ncomp inside the ambient basis (selection of hierarchical columns)."""
    if k > basis.degree:
        raise ValueError(f"degree {k} exceeds ambient degree {basis.degree}")
    n = basis.size
    dk = basis.size_of(k)
    C = np.zeros((ncomp * n, ncomp * dk))
    for c in range(ncomp):
        C[c * n + np.arange(dk), c * dk + np.arange(dk)] = 1.0
    if ncomp == 2:
        frame = basis.frame
    return SubspaceBasis(basis, ncomp, C, frame)


def orthonormal_basis(vertices, k, ncomp=1):
    """Orthonormal basis of P_k (ncomp = 1 or 3 on a tet; 1 or 2 tangential on a face)."""
    if k < 0 or k > 6:
        raise ValueError("supported degrees are 0..6")
    return full_space(PolyBasis(vertices, k), k, ncomp)


def face_frame(vertices, normal=None):
    from .mesh import tangent_frame

    p = np.asarray(vertices, dtype=float)
    if normal is None:
        n = np.cross(p[1] - p[0], p[2] - p[0])
        normal = n / np.linalg.norm(n)
    t1, t2 = tangent_frame(p, normal)
    return np.column_stack([t1, t2])


def orthonormalize(C, tol=SVD_TOL):
    """Orthonormal basis of the column span of C via SVD with a relative threshold."""
    if C.shape[1] == 0:
        return C.copy()
    U, s, _ = np.linalg.svd(C, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return C[:, :0].copy()
    r = int(np.sum(s > tol * s[0]))
    return U[:, :r]


def nullspace(M, tol=SVD_TOL, scale=None):
    """Orthonormal basis of the nullspace of M (columns)."""
    n = M.shape[1]
    if M.shape[0] == 0:
        return np.eye(n)
    _, s, Vt = np.linalg.svd(M, full_matrices=True)
    ref = scale if scale is not None else (s[0] if s.size else 0.0)
    r = int(np.sum(s > tol * ref)) if ref > 0 else 0
    return Vt[r:].T


def span(*spaces):
    """Orthonormal basis of the sum of subspaces sharing an ambient."""
    first = spaces[0]
    C = np.hstack([s.coeffs for s in spaces])
    return first.with_coeffs(orthonormalize(C))


def _rule_for(basis, extra=0):
    return basis.rule(2 * basis.degree + 2 + extra)


def project_vector_samples(basis, samples, rule, ncomp=3, frame=None):
    """Coefficients (ncomp * n, m) of vector samples (m, 3, npts) in P_degree^ncomp."""
    phi = basis.values(rule.points)
    if frame is not None:
        samples = np.einsum("ac,maq->mcq", frame, samples)
    coef = np.einsum("mcq,iq->cim", samples * rule.weights, phi)
    return coef.reshape(ncomp * basis.size, -1)


def homogeneous_subspace(basis, k, origin=None):
    """Scalar polynomials homogeneous of degree k about ``origin`` (default centroid)."""
    if k > basis.degree:
        raise ValueError("ambient degree too small")
    rule = _rule_for(basis)
    h = basis.homogeneous_values(rule.points, k, origin)
    C = basis.project(h, rule).T
    return SubspaceBasis(basis, 1, orthonormalize(C))


def gradient_of_homogeneous(basis, k, origin=None):
    """Gradients of polynomials homogeneous of degree k, as vectors of degree k-1.

    On a tetrahedron the result lives in P_{k-1}^3; on a face it is the
    surface gradient expressed in the face tangent frame.
    """
    rule = _rule_for(basis)
    g = basis.homogeneous_grads(rule.points, k, origin)
    if basis.kind == "tet":
        C = project_vector_samples(basis, g, rule)
        return SubspaceBasis(basis, 3, orthonormalize(C))
    C = project_vector_samples(basis, g, rule, ncomp=2, frame=basis.frame)
    return SubspaceBasis(basis, 2, orthonormalize(C), basis.frame)


def curl_range_subspace(basis, k):
    """Curl of P_k^3 as an orthonormal subspace of the ambient vector space."""
    if k < 1:
        raise ValueError("k >= 1 required")
    Pk = full_space(basis, k, 3)
    rule = _rule_for(basis)
    C = project_vector_samples(basis, Pk.curl(rule.points), rule)
    return SubspaceBasis(basis, 3, orthonormalize(C))


def orth_complement(sub, ambient, tol=1e-8):
    """Basis of ambient minus sub (orthogonal complement inside ``ambient``)."""
    A = ambient.coeffs
    Y = A.T @ sub.coeffs
    res = sub.coeffs - A @ Y
    if res.size and np.abs(res).max() > tol:
        raise ValueError("subspace is not contained in the ambient space")
    if Y.shape[1] == 0:
        return ambient.with_coeffs(A.copy())
    U, s, _ = np.linalg.svd(Y, full_matrices=True)
    r = int(np.sum(s > SVD_TOL * max(s[0], 1.0))) if s.size else 0
    return ambient.with_coeffs(A @ U[:, r:])


def nedelec_subspace(basis, m):
    """Nedelec space P_m^3 + {u homogeneous of degree m+1 with u . (x - centroid) = 0}."""
    if m < 0:
        return SubspaceBasis(basis, 3, np.zeros((3 * basis.size, 0)))
    rule = basis.rule(2 * basis.degree + 4)
    H = homogeneous_subspace(basis, m + 1)
    nH = H.dim
    n = basis.size
    Cvec = np.zeros((3 * n, 3 * nH))
    for c in range(3):
        Cvec[c * n:(c + 1) * n, c * nH:(c + 1) * nH] = H.coeffs
    Hv = SubspaceBasis(basis, 3, Cvec)
    vals = Hv.values(rule.points)
    xc = rule.points - basis.centroid[:, None]
    dot = np.einsum("maq,aq->mq", vals, xc)
    test = basis.homogeneous_values(rule.points, m + 2)
    M = np.einsum("mq,tq->tm", dot * rule.weights, test)
    Z = nullspace(M)
    constrained = Hv.with_coeffs(Cvec @ Z)
    return span(full_space(basis, m, 3), constrained)


def contained_residual(C, target):
    """Max column norm of C minus its orthogonal projection onto ``target`` coefficients."""
    if C.shape[1] == 0:
        return 0.0
    T = target
    res = C - T @ (T.T @ C)
    return float(np.linalg.norm(res, axis=0).max())


# ---------------------------------------------------------------------------
# Variant spaces

VARIANTS = ("STD", "B", "H", "Bplus", "Hplus")


def variant_degrees(variant, k):
    """Polynomial degrees of W, V, Q (element) and M (face) for a variant."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if variant == "STD":
        return {"W": k, "V": k, "Q": k, "M": k}
    q = k if variant in ("B", "Bplus") else k + 1
    return {"W": k, "V": k + 1, "Q": q, "M": k + 1}


def reduced_traces(variant):
    return variant in ("Bplus", "Hplus")


def face_trace_space(face_basis, variant, k):
    """N(F) (tangential, in the face frame) and M(F) (scalar) for a variant."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if k < 0:
        raise ValueError("k >= 0 required")
    deg = variant_degrees(variant, k)
    if reduced_traces(variant):
        N = span(full_space(face_basis, k, 2), gradient_of_homogeneous(face_basis, k + 2))
    else:
        N = full_space(face_basis, deg["M"] if variant != "STD" else k, 2)
    M = full_space(face_basis, deg["M"], 1)
    return N, M


def reduced_trace_space(face_basis, k, origin=None):
    """P_k^t + surface gradients of polynomials homogeneous of degree k+2 about ``origin``."""
    return span(full_space(face_basis, k, 2), gradient_of_homogeneous(face_basis, k + 2, origin))


class Element:
    """A tetrahedron with orthonormal bases on itself and its four faces.

    Local face f is opposite vertex f.  ``normals[f]`` is the outward unit
    normal of the element on face f.  Face bases are built from the face's
    sorted vertices and the supplied tangent frame, so elements sharing a
    face build bit-identical face bases.
    """

    def __init__(self, vertices, degree, faces=None):
        self.vertices = np.asarray(vertices, dtype=float)
        self.degree = degree
        self.basis = PolyBasis(self.vertices, degree)
        self.centroid = self.basis.centroid
        self.volume = self.basis.measure
        d = self.vertices[:, None, :] - self.vertices[None, :, :]
        self.diameter = float(np.linalg.norm(d, axis=2).max())
        if faces is None:
            faces = [standalone_face(self.vertices, f, degree) for f in range(4)]
        self.faces = faces
        self.normals = []
        for f, fb in enumerate(faces):
            n = np.cross(fb.frame[:, 0], fb.frame[:, 1])
            if n @ (fb.centroid - self.vertices[f]) < 0:
                n = -n
            self.normals.append(n)

    def rule(self, degree):
        return self.basis.rule(degree)

    def face_rule(self, f, degree):
        return self.faces[f].rule(degree)


def standalone_face(tet_vertices, f, degree):
    """Face basis for local face f of an isolated tet (outward normal, sorted vertices)."""
    from .mesh import sort_face_vertices

    pts = np.delete(np.asarray(tet_vertices, dtype=float), f, axis=0)
    order = sort_face_vertices(pts, np.arange(3))
    p = pts[list(order)]
    n = np.cross(p[1] - p[0], p[2] - p[0])
    n /= np.linalg.norm(n)
    if n @ (p.mean(axis=0) - tet_vertices[f]) < 0:
        n = -n
    return PolyBasis(p, degree, face_frame(p, n))


def mesh_face_basis(mesh, j, degree):
    p = mesh.vertices[mesh.face_vertices[j]]
    frame = np.column_stack([mesh.face_t1[j], mesh.face_t2[j]])
    return PolyBasis(p, degree, frame)


class VariantSpaces:
    """W, V, Q on an element and N, M on each of its faces."""

    def __init__(self, element, variant, k, face_spaces=None):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.element = element
        self.variant = variant
        self.k = k
        self.deg = variant_degrees(variant, k)
        b = element.basis
        self.W = full_space(b, self.deg["W"], 3)
        self.V = full_space(b, self.deg["V"], 3)
        self.Q = full_space(b, self.deg["Q"], 1)
        if face_spaces is None:
            face_spaces = [face_trace_space(fb, variant, k) for fb in element.faces]
        self.N = [fs[0] for fs in face_spaces]
        self.M = [fs[1] for fs in face_spaces]


def check_inclusions(spaces):
    """Residuals of curl V in W, div V in Q, curl W + grad Q in V, n x W in N, Q + V.n in M.

    Each entry is the largest L2 norm of the part of a basis column not
    captured by the target space, relative to the largest column norm.
    """
    el = spaces.element
    b = el.basis
    rule = b.rule(2 * b.degree + 2)
    x = rule.points

    def rel(vals, target, vector=True):
        return _residual(vals, target, rule)

    out = {}
    out["curl V in W"] = rel(spaces.V.curl(x), spaces.W)
    out["div V in Q"] = rel(spaces.V.div(x), spaces.Q, vector=False)
    out["curl W + grad Q in V"] = max(rel(spaces.W.curl(x), spaces.V),
                                      rel(spaces.Q.grads(x), spaces.V))
    r_n, r_m = 0.0, 0.0
    for f, fb in enumerate(el.faces):
        fr = fb.rule(2 * fb.degree + 2)
        n = el.normals[f]
        w = spaces.W.values(fr.points)
        nxw = np.cross(n[None, :, None], w, axis=1)
        r_n = max(r_n, _face_rel(nxw, spaces.N[f], fr))
        q = spaces.Q.values(fr.points)
        vn = np.einsum("maq,a->mq", spaces.V.values(fr.points), n)
        r_m = max(r_m, _face_rel(q, spaces.M[f], fr), _face_rel(vn, spaces.M[f], fr))
    out["n x W in N"] = r_n
    out["Q + V.n in M"] = r_m
    return out


def _residual(vals, space, rule):
    """Largest L2 residual after projection onto ``space``, relative to the largest sample norm.

    ``vals`` is (m, 3, npts) for vector samples or (m, npts) for scalars;
    the projection uses the orthonormal columns of ``space``.
    """
    S = space.values(rule.points)
    if vals.ndim == 3:
        mom = np.einsum("maq,jaq,q->mj", vals, S, rule.weights)
        res = vals - np.einsum("mj,jaq->maq", mom, S)
        r2 = np.einsum("maq,maq,q->m", res, res, rule.weights)
        n2 = np.einsum("maq,maq,q->m", vals, vals, rule.weights)
    else:
        mom = np.einsum("mq,jq,q->mj", vals, S, rule.weights)
        res = vals - mom @ S
        r2 = np.einsum("mq,mq,q->m", res, res, rule.weights)
        n2 = np.einsum("mq,mq,q->m", vals, vals, rule.weights)
    # relative to the largest sample: a near-zero trace would turn roundoff into O(1)
    top = n2.max(initial=0.0)
    if top <= 1e-300:
        return 0.0
    return float(np.sqrt(r2.max() / top))


_face_rel = _residual
