"""Hybridized discretization of the mixed curl-curl / grad-div system.

Unknowns per element are coefficients of (w, u, p) in W x V x Q; unknowns per
face are coefficients of the tangential trace in N(F) and the scalar trace in
M(F).  Element unknowns are eliminated locally (static condensation) and the
global system lives on interior faces only; boundary traces are fixed by the
Dirichlet data.
"""

import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import dissection_face_order
from .polyspace import (
    VARIANTS,
    Element,
    PolyBasis,
    VariantSpaces,
    _residual,
    dim_p,
    eval_monomials,
    face_trace_space,
    mesh_face_basis,
    nullspace,
    project_vector_samples,
    variant_degrees,
)
from .quadrature import (
    make_quadrature,
    map_tet_rule,
    map_triangle_rule,
    singular_tet_rule,
    singular_triangle_rule,
)


class ConfigError(ValueError):
    pass


class SolverBreakdown(RuntimeError):
    pass


def quad_bump():
    """Extra quadrature degree requested through MAXHDG_QUAD_BUMP."""
    try:
        return max(0, int(os.environ.get("MAXHDG_QUAD_BUMP", "0")))
    except ValueError:
        return 0


COARSE_SIZE = np.sqrt(3.0) / 4


def data_degree(k, extra=0, h=None):
    """Quadrature degree for terms involving exact data.

    Elements larger than COARSE_SIZE get 4 extra degrees per doubling of the
    diameter, so coarse meshes integrate smooth data to near round-off.
    """
    coarse = 0
    if h is not None and h > COARSE_SIZE:
        coarse = 4 * int(np.ceil(np.log2(h / COARSE_SIZE) - 1e-9))
    return 2 * (k + 2) + 2 + 4 + extra + coarse + quad_bump()


# ---------------------------------------------------------------------------
# Stabilization

LARGE = 1e5


@dataclass(frozen=True)
class TauRule:
    """Per-face stabilization rule.

    kind: "default" (tau_t = 1/h, tau_n = h), "test-A" .. "test-E", or "exp"
    (tau_n = h^alpha, tau_t = h^beta).  ``overrides`` maps a global face index
    to a tau_n value and takes precedence over the rule.
    """

    kind: str = "default"
    alpha: float = 1.0
    beta: float = -1.0
    overrides: tuple = ()

    @classmethod
    def parse(cls, text):
        text = text.strip()
        overrides = []
        parts = [p.strip() for p in text.split(";") if p.strip()]
        base = "default"
        alpha, beta = 1.0, -1.0
        for part in parts:
            if part.startswith("face:"):
                m = re.fullmatch(r"face:(\d+)=([-+0-9.eE]+)", part)
                if not m:
                    raise ConfigError(f"bad face override {part!r}; expected face:<idx>=<value>")
                overrides.append((int(m.group(1)), float(m.group(2))))
            elif part.startswith("exp:"):
                try:
                    vals = {key: float(v) for key, v in (kv.split("=") for kv in part[4:].split(","))}
                except ValueError:
                    vals = None
                if vals is None or set(vals) - {"a", "b"}:
                    raise ConfigError(f"bad exponent rule {part!r}; expected exp:a=<alpha>,b=<beta>")
                base = "exp"
                alpha = vals.get("a", 1.0)
                beta = vals.get("b", -1.0)
            elif part in ("default", "table2"):
                base = "default"
            elif re.fullmatch(r"test-[A-E]", part):
                base = part
            else:
                raise ConfigError(f"unknown tau rule {part!r}")
        return cls(base, alpha, beta, tuple(overrides))

    def __str__(self):
        s = f"exp:a={self.alpha:g},b={self.beta:g}" if self.kind == "exp" else self.kind
        for j, v in self.overrides:
            s += f";face:{j}={v:g}"
        return s

    def resolve(self, mesh):
        """Arrays tau_t, tau_n of shape (n_elements, 4)."""
        h = mesh.diameters[:, None] * np.ones((1, 4))
        tt = 1.0 / h
        if self.kind in ("default", "test-A", "test-D"):
            tn = h.copy()
        elif self.kind == "test-B":
            tn = np.zeros_like(h)
            first = np.argmin(mesh.tet_faces, axis=1)
            tn[np.arange(len(h)), first] = LARGE / h[:, 0] ** 2
        elif self.kind == "test-C":
            tn = LARGE / h**2
        elif self.kind == "test-E":
            tn = np.zeros_like(h)
        elif self.kind == "exp":
            tn = h**self.alpha
            tt = h**self.beta
        else:
            raise ConfigError(f"unknown tau rule {self.kind!r}")
        for j, v in self.overrides:
            if not 0 <= j < mesh.n_faces:
                raise ConfigError(f"face override index {j} out of range")
            tn[mesh.tet_faces == j] = v
        return tt, tn


@dataclass(frozen=True)
class VariantConfig:
    variant: str
    k: int
    tau: TauRule = field(default_factory=TauRule)
    allow_low_order: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.k < 0 or self.k > 3:
            raise ConfigError("polynomial degree k must be in 0..3")
        if self.variant in ("Bplus", "Hplus") and self.k < 1 and not self.allow_low_order:
            raise ConfigError(f"variant {self.variant} requires k >= 1 (the reduced trace space "
                              "analysis needs a nontrivial curl+ projection)")

    @property
    def degrees(self):
        return variant_degrees(self.variant, self.k)

    def check_tau(self, tau_t, tau_n):
        if np.any(tau_t <= 0):
            raise ConfigError("tau_t must be positive on every face")
        if np.any(tau_n < 0):
            raise ConfigError("tau_n must be nonnegative")
        if self.variant in ("STD", "H", "Hplus"):
            if np.any(np.all(tau_n == 0, axis=1)):
                raise ConfigError(f"variant {self.variant} needs tau_n not identically zero on each element")


# ---------------------------------------------------------------------------
# Quadrature for exact data

def _line_distance(points, line):
    p0, d = line
    d = d / np.linalg.norm(d)
    rel = points - p0
    return np.linalg.norm(rel - np.outer(rel @ d, d), axis=1)


def _on_line(points, line, tol=1e-12):
    if line is None:
        return np.zeros(len(points), dtype=bool)
    return _line_distance(points, line) < tol


class DataRules:
    """Quadrature for integrals of exact fields.

    Elements and faces touching the singular line of the exact solution get
    collapsed rules that integrate dist^(-1/3)-type behaviour exactly in the
    radial direction; all others get the mapped conical product rule.  Cells
    within one diameter of the line get ``near_extra`` more degrees, since the
    angular dependence there is far from polynomial.
    """

    def __init__(self, mesh, degree, singular_line=None, near_extra=12):
        self.mesh = mesh
        self.degree = degree
        self.line = singular_line
        vflag = _on_line(mesh.vertices, singular_line)
        self.elem_on = vflag[mesh.tets]
        self.face_on = vflag[mesh.face_vertices]
        self.elem_near = np.zeros(mesh.n_elements, dtype=bool)
        self.face_near = np.zeros(mesh.n_faces, dtype=bool)
        if singular_line is not None:
            dist = _line_distance(mesh.vertices, singular_line)
            self.elem_near = dist[mesh.tets].min(axis=1) < mesh.diameters
            P = mesh.vertices[mesh.face_vertices]
            fdiam = np.max(np.linalg.norm(P - np.roll(P, 1, axis=1), axis=2), axis=1)
            self.face_near = dist[mesh.face_vertices].min(axis=1) < fdiam
        self.near_extra = near_extra
        self._ref = {}

    def _reference(self, kind, degree):
        key = (kind, degree)
        if key not in self._ref:
            self._ref[key] = make_quadrature(kind, degree)
        return self._ref[key]

    def element_is_singular(self, e):
        return bool(self.elem_on[e].any())

    def volume(self, e):
        V = self.mesh.element_vertices(e)
        deg = self.degree + (self.near_extra if self.elem_near[e] else 0)
        if self.elem_on[e].any():
            return singular_tet_rule(V, self.elem_on[e], deg)
        return map_tet_rule(self._reference("tet", deg), V)

    def face(self, j):
        P = self.mesh.vertices[self.mesh.face_vertices[j]]
        deg = self.degree + (self.near_extra if self.face_near[j] else 0)
        if self.face_on[j].any():
            return singular_triangle_rule(P, self.face_on[j], deg)
        return map_triangle_rule(self._reference("triangle", deg), P)


# ---------------------------------------------------------------------------
# Discretization context

class FaceData:
    """Per-face bases, quadrature and trace-space tables (shared by both elements)."""

    def __init__(self, mesh, j, variant, k, degree, data_rules=None):
        self.index = j
        self.basis = mesh_face_basis(mesh, j, degree)
        self.N, self.M = face_trace_space(self.basis, variant, k)
        self.rule = self.basis.rule(2 * degree)
        self.Nv = self.N.values(self.rule.points)
        self.Mv = self.M.values(self.rule.points)
        self.normal = mesh.face_normals[j]
        self.data_rules = data_rules

    def data_rule(self):
        return self.data_rules.face(self.index)


class Discretization:
    """Mesh + variant: face tables, reference element tables and stabilization."""

    def __init__(self, mesh, config, data_rules=None):
        self.mesh = mesh
        self.config = config
        self.variant = config.variant
        self.k = config.k
        deg = config.degrees
        self.deg = deg
        self.D = max(deg["V"], deg["Q"], deg["W"])
        self.dW = dim_p(3, deg["W"])
        self.dV = dim_p(3, deg["V"])
        self.dQ = dim_p(3, deg["Q"])
        self.nW, self.nV, self.nQ = 3 * self.dW, 3 * self.dV, self.dQ
        self.nA = self.nW + self.nV + self.nQ
        self.tau_t, self.tau_n = config.tau.resolve(mesh)
        config.check_tau(self.tau_t, self.tau_n)
        self.data_rules = data_rules
        self.faces = [FaceData(mesh, j, self.variant, self.k, self.D, data_rules)
                      for j in range(mesh.n_faces)]
        self.nN = self.faces[0].N.dim
        self.nM = self.faces[0].M.dim
        self.nF = self.nN + self.nM
        interior = np.flatnonzero(~mesh.boundary)
        self.face_slot = -np.ones(mesh.n_faces, dtype=np.int64)
        self.face_slot[interior] = np.arange(len(interior))
        self.n_skeleton = len(interior) * self.nF
        # reference element tables
        ref = PolyBasis(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]]), self.D)
        r = make_quadrature("tet", 2 * self.D)
        phi = ref.values(r.points)
        grad = ref.grads(r.points)
        self._Khat = np.einsum("iaq,jq,q->ija", grad, phi, r.weights)  # (d, d, 3)
        self._ref_exps = ref.exps
        self._ref_coef = ref.coef

    def element(self, e, degree=None):
        """A full ``Element`` (with the mesh's shared face bases) for projections."""
        degree = self.D if degree is None else degree
        faces = [mesh_face_basis(self.mesh, j, degree) if degree != self.D else self.faces[j].basis
                 for j in self.mesh.tet_faces[e]]
        return Element(self.mesh.element_vertices(e), degree, faces)

    def spaces(self, e, element=None):
        el = self.element(e) if element is None else element
        fs = [(self.faces[j].N, self.faces[j].M) for j in self.mesh.tet_faces[e]]
        return VariantSpaces(el, self.variant, self.k, fs)

    def element_map(self, e):
        V = self.mesh.element_vertices(e)
        J = (V[1:] - V[0]).T
        Jinv = np.linalg.inv(J)
        return V[0], Jinv, 1.0 / np.sqrt(abs(np.linalg.det(J)))

    def element_values(self, e, x):
        """Element scalar basis (degree D) at physical points x."""
        v0, Jinv, scale = self.element_map(e)
        y = Jinv @ (x - v0[:, None]) - 0.25
        return scale * (self._ref_coef.T @ eval_monomials(self._ref_exps, y))

    def local_dofs(self, e):
        """Global skeleton DOF index for each local trace DOF (-1 on boundary faces)."""
        out = -np.ones(4 * self.nF, dtype=np.int64)
        for f, j in enumerate(self.mesh.tet_faces[e]):
            s = self.face_slot[j]
            if s >= 0:
                out[f * self.nF:(f + 1) * self.nF] = s * self.nF + np.arange(self.nF)
        return out


# ---------------------------------------------------------------------------
# Local operators

_EPS = np.zeros((3, 3, 3))
_EPS[0, 1, 2] = _EPS[1, 2, 0] = _EPS[2, 0, 1] = 1.0
_EPS[0, 2, 1] = _EPS[2, 1, 0] = _EPS[1, 0, 2] = -1.0


@dataclass
class LocalOperator:
    """Condensed element operator.

    A, B, C, D and F are kept only when requested (monolithic checks); the
    solve needs only A^-1 B, A^-1 F, S = D - C A^-1 B and g = -C A^-1 F.
    """

    AinvB: np.ndarray
    AinvF: np.ndarray
    S: np.ndarray
    g: np.ndarray
    A: np.ndarray = None
    B: np.ndarray = None
    C: np.ndarray = None
    D: np.ndarray = None
    F: np.ndarray = None


def local_blocks(disc, e, load=None):
    """Dense blocks A (nA x nA), B (nA x nT), C (nT x nA), D (nT,) and load F (nA,)."""
    mesh = disc.mesh
    dW, dV, dQ = disc.dW, disc.dV, disc.dQ
    nW, nV, nQ, nA = disc.nW, disc.nV, disc.nQ, disc.nA
    nN, nM, nF = disc.nN, disc.nM, disc.nF
    _, Jinv, _ = disc.element_map(e)
    Kt = np.einsum("ija,ab->ijb", disc._Khat, Jinv)  # (d, d, 3): int d_b phi_i phi_j
    A = np.zeros((nA, nA))
    iW, iV, iQ = slice(0, nW), slice(nW, nW + nV), slice(nW + nV, nA)
    # -(u, curl r) with r = phi_i e_a, u = phi_j e_c: -sum_b eps_cba K[i, j, b]
    Kwv = Kt[:dW, :dV]
    Aru = -np.einsum("cba,ijb->aicj", _EPS, Kwv).reshape(nW, nV)
    A[iW, iW] = np.eye(nW)
    A[iW, iV] = Aru
    A[iV, iW] = -Aru.T
    # -(p, div v): v = phi_j e_c, p = psi_l -> -int d_c phi_j psi_l
    L = Kt[:dV, :dQ]  # (j, l, c)
    Avp = -np.transpose(L, (2, 0, 1)).reshape(nV, nQ)
    A[iV, iQ] = Avp
    A[iQ, iV] = -Avp.T
    nT = 4 * nF
    B = np.zeros((nA, nT))
    C = np.zeros((nT, nA))
    D = np.zeros(nT)
    for f in range(4):
        j = mesh.tet_faces[e, f]
        fd = disc.faces[j]
        n = fd.normal * mesh.tet_face_sign[e, f]
        tt = disc.tau_t[e, f]
        tn = disc.tau_n[e, f]
        w = fd.rule.weights
        phi = disc.element_values(e, fd.rule.points)  # (d, q)
        Nv, Mv = fd.Nv, fd.Mv
        pw, pv, pq = phi[:dW], phi[:dV], phi[:dQ]
        T = np.einsum("mcq,jq,q->mcj", Nv, pv, w).reshape(nN, nV)
        nxN = np.cross(n[None, :, None], Nv, axis=1)
        Brn = -np.einsum("iq,maq,q->aim", pw, nxN, w).reshape(nW, nN)
        Gvm = np.einsum("jq,mq,q->jm", pv, Mv, w)  # (dV, nM)
        Bvm = np.einsum("c,jm->cjm", n, Gvm).reshape(nV, nM)
        Gqm = np.einsum("lq,mq,q->lm", pq, Mv, w)  # (dQ, nM)
        A[iV, iV] += tt * T.T @ T
        A[iQ, iQ] += tn * np.einsum("lq,mq,q->lm", pq, pq, w)
        cN = slice(f * nF, f * nF + nN)
        cM = slice(f * nF + nN, (f + 1) * nF)
        B[iW, cN] = Brn
        B[iV, cN] = -tt * T.T
        B[iV, cM] = Bvm
        B[iQ, cM] = -tn * Gqm
        C[cN, iW] = -Brn.T
        C[cN, iV] = -tt * T
        C[cM, iV] = -Bvm.T
        C[cM, iQ] = -tn * Gqm.T
        D[cN] = tt
        D[cM] = tn
    F = np.zeros(nA)
    if load is not None:
        rule = disc.data_rules.volume(e)
        fv = load(rule.points)
        phi = disc.element_values(e, rule.points)[:dV]
        F[iV] = np.einsum("cq,jq,q->cj", fv, phi, rule.weights).ravel()
    return A, B, C, D, F


def assemble_local(disc, e, load=None, keep_blocks=False):
    A, B, C, D, F = local_blocks(disc, e, load)
    try:
        lu = scipy.linalg.lu_factor(A, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SolverBreakdown(f"local block of element {e} is singular") from exc
    if np.min(np.abs(np.diag(lu[0]))) < 1e-14 * np.abs(np.diag(lu[0])).max():
        raise SolverBreakdown(f"local block of element {e} is singular "
                              f"({disc.variant}, k={disc.k}, tau={disc.config.tau})")
    X = scipy.linalg.lu_solve(lu, np.column_stack([B, F]))
    AinvB, AinvF = X[:, :-1], X[:, -1]
    S = np.diag(D) - C @ AinvB
    g = -C @ AinvF
    op = LocalOperator(AinvB, AinvF, S, g)
    if keep_blocks:
        op.A, op.B, op.C, op.D, op.F = A, B, C, D, F
    return op


# ---------------------------------------------------------------------------
# Global system

@dataclass
class SkeletonSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    boundary_traces: dict  # face index -> (uhat coeffs, phat coeffs)
    operators: list
    disc: Discretization


def boundary_traces(disc, exact):
    """Dirichlet traces: uhat = P_N of the tangential part of u, phat = 0."""
    out = {}
    for j in np.flatnonzero(disc.mesh.boundary):
        fd = disc.faces[j]
        if exact is None:
            out[j] = (np.zeros(disc.nN), np.zeros(disc.nM))
            continue
        r = fd.data_rule()
        n = fd.normal
        ut = exact.tangential_u(r.points, n)
        uh = np.einsum("maq,aq,q->m", fd.N.values(r.points), ut, r.weights)
        out[j] = (uh, np.zeros(disc.nM))
    return out


def _local_boundary_vector(disc, e, bnd):
    lam = np.zeros(4 * disc.nF)
    for f, j in enumerate(disc.mesh.tet_faces[e]):
        if j in bnd:
            uh, ph = bnd[j]
            lam[f * disc.nF:f * disc.nF + disc.nN] = uh
            lam[f * disc.nF + disc.nN:(f + 1) * disc.nF] = ph
    return lam


def assemble_global(disc, exact=None, keep_blocks=False, threads=1):
    """Condensed skeleton system; boundary traces are eliminated into the right-hand side."""
    load = exact.f if exact is not None else None
    ne = disc.mesh.n_elements

    def work(es):
        return [assemble_local(disc, e, load, keep_blocks) for e in es]

    chunks = np.array_split(np.arange(ne), max(1, threads * 4)) if threads > 1 else [np.arange(ne)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            ops = [op for part in pool.map(work, chunks) for op in part]
    else:
        ops = work(np.arange(ne))
    bnd = boundary_traces(disc, exact)
    rows, cols, vals = [], [], []
    rhs = np.zeros(disc.n_skeleton)
    for e, op in enumerate(ops):
        dofs = disc.local_dofs(e)
        inner = dofs >= 0
        lam_b = _local_boundary_vector(disc, e, bnd)
        g = op.g - op.S @ lam_b
        np.add.at(rhs, dofs[inner], g[inner])
        Si = op.S[np.ix_(inner, inner)]
        di = dofs[inner]
        rows.append(np.repeat(di, len(di)))
        cols.append(np.tile(di, len(di)))
        vals.append(Si.ravel())
    n = disc.n_skeleton
    if rows:
        M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n)).tocsr()
    else:
        M = sp.csr_matrix((n, n))
    return SkeletonSystem(M, rhs, bnd, ops, disc)


def skeleton_dissection_order(disc):
    """Skeleton DOF permutation that follows the nested-dissection face order."""
    faces = dissection_face_order(disc.mesh)
    return (disc.face_slot[faces][:, None] * disc.nF + np.arange(disc.nF)).ravel()


def _accurate(A, x, b, tol=1e-10):
    return np.all(np.isfinite(x)) and np.linalg.norm(A @ x - b) <= tol * (np.linalg.norm(b) + 1e-300)


def _direct_solve(A, b, order=None):
    """Sparse LU of the skeleton matrix.

    With a dissection order the matrix is factored in that order without pivoting,
    plus one refinement step; the diagonal blocks are nonsingular and pivoting for
    large tau only destroys the fill pattern.  Pivoted orderings are the fallback.
    """
    A = A.tocsc()
    if order is not None:
        Ap = A[order][:, order].tocsc()
        bp = b[order]
        try:
            lu = spla.splu(Ap, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                           options=dict(SymmetricMode=True))
            y = lu.solve(bp)
            y += lu.solve(bp - Ap @ y)
            del lu
            if _accurate(Ap, y, bp):
                x = np.empty_like(y)
                x[order] = y
                return x
        except RuntimeError:
            pass
        del Ap
    attempts = [dict(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1,
                     options=dict(SymmetricMode=True)),
                dict(permc_spec="COLAMD")]
    x = None
    for opts in attempts:
        try:
            x = spla.splu(A, **opts).solve(b)
        except RuntimeError as exc:
            if "singular" in str(exc).lower():
                raise SolverBreakdown(f"skeleton matrix is singular: {exc}") from exc
            continue
        if _accurate(A, x, b):
            return x
    if x is None:
        raise SolverBreakdown("sparse LU failed")
    return x


def solve(system, method="direct", tol=1e-12):
    """Solve the skeleton system; raise SolverBreakdown on singular or inaccurate solves."""
    A, b = system.matrix, system.rhs
    n = A.shape[0]
    if n == 0:
        return np.zeros(0)
    if method == "direct":
        x = _direct_solve(A, b, skeleton_dissection_order(system.disc))
    elif method == "iterative":
        ilu = spla.spilu(A.tocsc(), drop_tol=1e-6, fill_factor=20)
        Mop = spla.LinearOperator(A.shape, ilu.solve)
        x, info = spla.gmres(A, b, M=Mop, rtol=tol, atol=0.0, restart=200, maxiter=2000)
        if info != 0:
            raise SolverBreakdown(f"GMRES did not converge (info={info})")
    else:
        raise ConfigError(f"unknown solver {method!r}")
    if not np.all(np.isfinite(x)):
        raise SolverBreakdown("skeleton solve produced non-finite values")
    res = np.linalg.norm(A @ x - b)
    scale = np.linalg.norm(b) + 1e-300
    if np.linalg.norm(b) > 0 and res > 1e-8 * scale:
        raise SolverBreakdown(f"skeleton solve inaccurate: relative residual {res / scale:.2e}")
    return x


@dataclass
class HdgSolution:
    w: np.ndarray  # (n_elements, nW)
    u: np.ndarray  # (n_elements, nV)
    p: np.ndarray  # (n_elements, nQ)
    uhat: np.ndarray  # (n_faces, nN)
    phat: np.ndarray  # (n_faces, nM)
    disc: Discretization = None
    skeleton_dofs: int = 0


def recover(system, x):
    disc = system.disc
    mesh = disc.mesh
    ne, nf = mesh.n_elements, mesh.n_faces
    W = np.zeros((ne, disc.nW))
    U = np.zeros((ne, disc.nV))
    P = np.zeros((ne, disc.nQ))
    uhat = np.zeros((nf, disc.nN))
    phat = np.zeros((nf, disc.nM))
    for j, (uh, ph) in system.boundary_traces.items():
        uhat[j], phat[j] = uh, ph
    for j in np.flatnonzero(~mesh.boundary):
        s = disc.face_slot[j] * disc.nF
        uhat[j] = x[s:s + disc.nN]
        phat[j] = x[s + disc.nN:s + disc.nF]
    for e, op in enumerate(system.operators):
        lam = np.concatenate([np.concatenate([uhat[j], phat[j]]) for j in mesh.tet_faces[e]])
        xe = op.AinvF - op.AinvB @ lam
        W[e] = xe[:disc.nW]
        U[e] = xe[disc.nW:disc.nW + disc.nV]
        P[e] = xe[disc.nW + disc.nV:]
    return HdgSolution(W, U, P, uhat, phat, disc, disc.n_skeleton)


def solve_problem(mesh, config, exact, method="direct", threads=1, keep_blocks=False,
                  data_rules=None):
    """Assemble, solve and recover for a given exact solution (None: zero data)."""
    if data_rules is None:
        line = getattr(exact, "singular_line", None) if exact is not None else None
        data_rules = DataRules(mesh, data_degree(config.k, h=mesh.h), line)
    disc = Discretization(mesh, config, data_rules)
    system = assemble_global(disc, exact, keep_blocks=keep_blocks, threads=threads)
    x = solve(system, method)
    return recover(system, x), system


def solve_monolithic(system):
    """Solve the uncondensed system with all element and face unknowns (small meshes).

    Rows: element equations A x + B lam = F, interior-face flux equations
    sum_K (C x + D lam) = 0, boundary-face equations lam = boundary data.
    Independent of the Schur-complement and recovery path.
    """
    disc = system.disc
    mesh = disc.mesh
    ne, nf = mesh.n_elements, mesh.n_faces
    nA, nF = disc.nA, disc.nF
    n = ne * nA + nf * nF
    M = np.zeros((n, n))
    b = np.zeros(n)
    face0 = ne * nA
    for e, op in enumerate(system.operators):
        if op.A is None:
            raise ValueError("monolithic solve needs operators assembled with keep_blocks=True")
        r = slice(e * nA, (e + 1) * nA)
        M[r, r] = op.A
        b[r] = op.F
        tdofs = np.concatenate([face0 + j * nF + np.arange(nF) for j in mesh.tet_faces[e]])
        M[r, tdofs] = op.B
        for f, j in enumerate(mesh.tet_faces[e]):
            if mesh.boundary[j]:
                continue
            rows = face0 + j * nF + np.arange(nF)
            loc = slice(f * nF, (f + 1) * nF)
            M[rows, r] += op.C[loc]
            M[rows, rows] += op.D[loc]
    for j, (uh, ph) in system.boundary_traces.items():
        rows = face0 + j * nF + np.arange(nF)
        M[rows, :] = 0.0
        M[rows, rows] = 1.0
        b[rows] = np.concatenate([uh, ph])
    x = scipy.linalg.solve(M, b)
    W = x[:face0].reshape(ne, nA)
    tr = x[face0:].reshape(nf, nF)
    return HdgSolution(W[:, :disc.nW], W[:, disc.nW:disc.nW + disc.nV], W[:, disc.nW + disc.nV:],
                       tr[:, :disc.nN], tr[:, disc.nN:], disc, disc.n_skeleton)


def local_residual(system, sol):
    """Max residual of the element equations A x + B lam - F after recovery."""
    disc = system.disc
    out = 0.0
    for e, op in enumerate(system.operators):
        if op.A is None:
            raise ValueError("needs operators assembled with keep_blocks=True")
        lam = np.concatenate([np.concatenate([sol.uhat[j], sol.phat[j]])
                              for j in disc.mesh.tet_faces[e]])
        x = np.concatenate([sol.w[e], sol.u[e], sol.p[e]])
        out = max(out, float(np.abs(op.A @ x + op.B @ lam - op.F).max()))
    return out


# ---------------------------------------------------------------------------
# Unique-solvability condition

def kernel_trace_condition(spaces, tol=1e-9):
    """Do tangential traces of curl-free fields in V(K) lie in N(dK)?  Returns (holds, residual)."""
    el = spaces.element
    b = el.basis
    V = spaces.V
    rule = b.rule(2 * b.degree + 2)
    Cc = project_vector_samples(b, V.curl(rule.points), rule)
    Z = nullspace(Cc, scale=max(np.linalg.norm(Cc, 2), 1.0))
    if Z.shape[1] == 0:
        return True, 0.0
    K = V.with_coeffs(V.coeffs @ Z)
    res = 0.0
    for f, fb in enumerate(el.faces):
        r = fb.rule(2 * b.degree + 2)
        n = el.normals[f]
        vals = K.values(r.points)
        tang = vals - np.einsum("maq,a->mq", vals, n)[:, None, :] * n[None, :, None]
        res = max(res, _residual(tang, spaces.N[f], r))
    return res < tol, res


def skeleton_dof_count(mesh, variant, k):
    """Independent count: interior faces times (dim N(F) + dim M(F))."""
    deg = variant_degrees(variant, k)
    dF = lambda j: (j + 1) * (j + 2) // 2  # noqa: E731
    if variant in ("Bplus", "Hplus"):
        nN = 2 * dF(k) + (k + 3)
    elif variant == "STD":
        nN = 2 * dF(k)
    else:
        nN = 2 * dF(k + 1)
    nM = dF(deg["M"])
    interior = int(np.sum(~mesh.boundary))
    return interior * (nN + nM)


def uniqueness_probe(mesh, config):
    """Solve with f = 0, g = 0 and measure how far the skeleton matrix is from singular.

    Returns (max coefficient magnitude of the solution, smallest singular value
    of the skeleton matrix relative to its largest, full numerical rank).  Rank
    uses the usual cutoff max(shape) * eps on the relative singular value.  The
    SVD is dense, so use small meshes.
    """
    sol, system = solve_problem(mesh, config, None)
    size = max(float(np.abs(a).max(initial=0.0)) for a in (sol.w, sol.u, sol.p, sol.uhat, sol.phat))
    if system.matrix.shape[0] == 0:
        return size, 1.0, True
    s = np.linalg.svd(system.matrix.toarray(), compute_uv=False)
    rel = float(s[-1] / s[0])
    return size, rel, rel > max(system.matrix.shape) * np.finfo(float).eps


# ---------------------------------------------------------------------------
# Output

def _vertex_samples(disc, sol):
    mesh = disc.mesh
    out = []
    for e in range(mesh.n_elements):
        x = mesh.element_vertices(e).T
        phi = disc.element_values(e, x)
        w = np.einsum("cj,jq->qc", sol.w[e].reshape(3, disc.dW), phi[:disc.dW])
        u = np.einsum("cj,jq->qc", sol.u[e].reshape(3, disc.dV), phi[:disc.dV])
        p = sol.p[e] @ phi[:disc.dQ]
        out.append((w, u, p))
    return out


def write_vtk(path, disc, sol):
    """Legacy ASCII VTK: every tetrahedron gets its own four points so fields stay discontinuous."""
    mesh = disc.mesh
    ne = mesh.n_elements
    samples = _vertex_samples(disc, sol)
    lines = ["# vtk DataFile Version 3.0", f"{disc.variant} k={disc.k} {mesh.name}", "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {4 * ne} double"]
    for e in range(ne):
        for v in mesh.element_vertices(e):
            lines.append(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
    lines.append(f"CELLS {ne} {5 * ne}")
    lines += [f"4 {4 * e} {4 * e + 1} {4 * e + 2} {4 * e + 3}" for e in range(ne)]
    lines.append(f"CELL_TYPES {ne}")
    lines += ["10"] * ne
    lines.append(f"POINT_DATA {4 * ne}")
    for name, idx in (("w", 0), ("u", 1)):
        lines.append(f"VECTORS {name} double")
        for s in samples:
            lines += [f"{a:.17g} {b:.17g} {c:.17g}" for a, b, c in s[idx]]
    lines += ["SCALARS p double 1", "LOOKUP_TABLE default"]
    for s in samples:
        lines += [f"{a:.17g}" for a in s[2]]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


CHECKPOINT_MAGIC = b"MXHDGCK1"


def write_checkpoint(path, disc, sol):
    """Binary coefficient dump.

    Layout: 8-byte magic, 8-byte variant name (ASCII, space padded), k and
    element count as little-endian int64, 64-byte ASCII mesh SHA-256, then for
    each element in order its w, u, p coefficients as little-endian float64.
    """
    mesh = disc.mesh
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(disc.variant.encode("ascii").ljust(8))
        fh.write(np.array([disc.k, mesh.n_elements], dtype="<i8").tobytes())
        fh.write(mesh.digest().encode("ascii"))
        blocks = np.hstack([sol.w, sol.u, sol.p]).astype("<f8")
        fh.write(blocks.tobytes())


def read_checkpoint(path, mesh=None):
    """Returns (variant, k, mesh digest, coefficient blocks of shape (n_elements, nW + nV + nQ))."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file")
    variant = data[8:16].decode("ascii").strip()
    k, ne = np.frombuffer(data[16:32], dtype="<i8")
    digest = data[32:96].decode("ascii")
    if mesh is not None and mesh.digest() != digest:
        raise ValueError("checkpoint was written for a different mesh")
    blocks = np.frombuffer(data[96:], dtype="<f8").reshape(int(ne), -1)
    return variant, int(k), digest, blocks
