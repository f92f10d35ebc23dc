"""Elementwise projections of (w, u, p) triples and the associated identity checks.

Exact fields enter only through samples at quadrature points (a
``FieldData``); every projection is the solution of a small square moment
system in the orthonormal element basis.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .polyspace import (
    curl_range_subspace,
    full_space,
    gradient_of_homogeneous,
    nedelec_subspace,
    orth_complement,
    project_vector_samples,
    reduced_trace_space,
    span,
)


class SingularSystemError(RuntimeError):
    pass


@dataclass
class FieldData:
    """Samples of an exact triple on an element's volume rule and its four face rules."""

    vol_rule: object
    face_rules: list
    w: np.ndarray
    curl_w: np.ndarray
    u: np.ndarray
    div_u: np.ndarray
    p: np.ndarray
    face_w: list
    face_u: list
    face_p: list

    @classmethod
    def sample(cls, element, exact, vol_rule=None, face_rules=None, degree=None):
        if degree is None:
            degree = 2 * element.degree + 4
        if vol_rule is None:
            vol_rule = element.rule(degree)
        if face_rules is None:
            face_rules = [element.face_rule(f, degree) for f in range(4)]
        x = vol_rule.points
        fx = [r.points for r in face_rules]
        return cls(vol_rule, face_rules, exact.w(x), exact.curl_w(x), exact.u(x),
                   exact.div_u(x), exact.p(x), [exact.w(y) for y in fx],
                   [exact.u(y) for y in fx], [exact.p(y) for y in fx])


@dataclass
class ProjectedTriple:
    """Coefficients of the projected (w, u, p) in the full spaces W, V, Q."""

    w: np.ndarray
    u: np.ndarray
    p: np.ndarray
    W: object
    V: object
    Q: object


@dataclass
class BoundaryRemainder:
    delta_t: list  # per face, coefficients in N(F)
    delta_n: list  # per face, coefficients in M(F)
    sign: int


def _solve(A, b, what):
    if A.shape[0] != A.shape[1]:
        raise SingularSystemError(f"{what}: system is {A.shape[0]}x{A.shape[1]}, not square")
    if A.shape[0] == 0:
        return np.zeros((0,) + b.shape[1:])
    # row equilibration keeps large stabilization values from masking the conditioning
    s = np.abs(A).max(axis=1)
    if np.any(s == 0):
        raise SingularSystemError(f"{what}: zero row in moment system")
    As = A / s[:, None]
    cond = np.linalg.cond(As)
    if not np.isfinite(cond) or cond > 1e13:
        raise SingularSystemError(f"{what}: singular moment system (condition {cond:.2e})")
    return scipy.linalg.solve(As, b / s if b.ndim == 1 else b / s[:, None])


def _vdot(a, b, w):
    """Integrals sum_q w_q a_m(q) . b_n(q); a (m,3,q) or (m,q), b likewise."""
    if a.ndim == 3:
        return np.einsum("maq,naq,q->mn", a, b, w)
    return np.einsum("mq,nq,q->mn", a, b, w)


def l2_project(space, samples, rule):
    """Coefficients of the L2 projection of samples onto an orthonormal ``space``."""
    S = space.values(rule.points)
    if S.ndim == 3:
        return np.einsum("maq,aq,q->m", S, samples, rule.weights)
    return np.einsum("mq,q,q->m", S, samples, rule.weights)


def face_project_PN(space, samples, rule):
    return l2_project(space, samples, rule)


def face_project_PM(space, samples, rule):
    return l2_project(space, samples, rule)


def _cross_n(n, vals):
    """n x vals for vals (..., 3, q)."""
    return np.cross(n[:, None], vals, axisa=0, axisb=-2, axisc=-2)


def curlplus_test_spaces(basis, k):
    """Test spaces of the curl+ projection on P_k^3.

    Returns (R, V2): R = curl P_k^3 + (curl P_{k+1}^3)^perp in P_k^3 and
    V2 = (P_k^3 + grad P~_{k+2})^perp in P_{k+1}^3.
    """
    Pk = full_space(basis, k, 3)
    Pk1 = full_space(basis, k + 1, 3)
    parts = [orth_complement(curl_range_subspace(basis, k + 1), Pk)]
    if k >= 1:
        parts.insert(0, curl_range_subspace(basis, k))
    R = span(*parts) if len(parts) > 1 else parts[0]
    V2 = orth_complement(span(Pk, gradient_of_homogeneous(basis, k + 2)), Pk1)
    return R, V2


def curlplus_project(element, data, k, trace_spaces=None, return_blocks=False):
    """Curl+ projection of w onto P_k^3; coefficients in full_space(basis, k, 3)."""
    b = element.basis
    if b.degree < k + 1:
        raise ValueError("element basis degree must be at least k+1")
    Pk = full_space(b, k, 3)
    R, V2 = curlplus_test_spaces(b, k)
    if trace_spaces is None:
        trace_spaces = [reduced_trace_space(fb, k) for fb in element.faces]
    rule = data.vol_rule
    x = rule.points
    rows1 = R.coeffs.T @ Pk.coeffs
    rhs1 = l2_project(R, data.w, rule)
    curl_v = V2.curl(x)
    pr = b.rule(2 * b.degree + 2)
    Ccv = project_vector_samples(b, V2.curl(pr.points), pr)
    rows2 = Ccv.T @ Pk.coeffs
    rhs2 = np.einsum("maq,aq,q->m", curl_v, data.w, rule.weights)
    rhs2 = rhs2 + _trace_defect_moments(element, data, trace_spaces, V2)
    A = np.vstack([rows1, rows2])
    rhs = np.concatenate([rhs1, rhs2])
    coef = _solve(A, rhs, "curl+ projection")
    if return_blocks:
        return coef, (R.dim, V2.dim)
    return coef


def _trace_defect_moments(element, data, trace_spaces, V):
    """<n x w - P_N(n x w), v>_{dK} for the columns v of V."""
    out = np.zeros(V.dim)
    for f, r in enumerate(data.face_rules):
        n = element.normals[f]
        nxw = _cross_n(n, data.face_w[f])
        S = trace_spaces[f].values(r.points)
        c = np.einsum("jaq,aq,q->j", S, nxw, r.weights)
        defect = nxw - np.einsum("j,jaq->aq", c, S)
        vv = V.values(r.points)
        out += np.einsum("maq,aq,q->m", vv, defect, r.weights)
    return out


def _check_sign(tau, allow_zero):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau > 0) and np.any(tau < 0):
        raise ValueError("stabilization must have a single sign on the element boundary")
    if not allow_zero and np.all(tau == 0):
        raise ValueError("stabilization must not vanish identically on the element boundary")
    return tau


def hdg_project(element, data, kp, tau):
    """HDG projection into P_kp^3 x P_kp.  Returns (u coefficients, p coefficients)."""
    tau = _check_sign(tau, allow_zero=False)
    b = element.basis
    Pu = full_space(b, kp, 3)
    Pp = full_space(b, kp, 1)
    Tu = full_space(b, kp - 1, 3)
    Tp = full_space(b, kp - 1, 1)
    nu, npp = Pu.dim, Pp.dim
    rows = []
    rhs = []
    rows.append(np.hstack([Tu.coeffs.T @ Pu.coeffs, np.zeros((Tu.dim, npp))]))
    rhs.append(l2_project(Tu, data.u, data.vol_rule))
    rows.append(np.hstack([np.zeros((Tp.dim, nu)), Tp.coeffs.T @ Pp.coeffs]))
    rhs.append(l2_project(Tp, data.p, data.vol_rule))
    for f, fb in enumerate(element.faces):
        r = data.face_rules[f]
        n = element.normals[f]
        mu = full_space(fb, kp, 1).values(r.points)
        un = np.einsum("maq,a->mq", Pu.values(r.points), n)
        pv = Pp.values(r.points)
        rows.append(np.hstack([_vdot(mu, un, r.weights), tau[f] * _vdot(mu, pv, r.weights)]))
        g = np.einsum("aq,a->q", data.face_u[f], n) + tau[f] * data.face_p[f]
        rhs.append(mu @ (g * r.weights))
    coef = _solve(np.vstack(rows), np.concatenate(rhs), "HDG projection")
    return coef[:nu], coef[nu:]


def bdmh_project(element, data, kp, tau):
    """BDM-H projection into P_kp^3 (kp >= 1).  Returns u coefficients."""
    if kp < 1:
        raise ValueError("BDM-H projection needs degree >= 1")
    tau = _check_sign(tau, allow_zero=True)
    b = element.basis
    Pu = full_space(b, kp, 3)
    Nd = nedelec_subspace(b, kp - 2)
    Pl = full_space(b, kp - 1, 1)
    pl = l2_project(Pl, data.p, data.vol_rule)
    rows = [Nd.coeffs.T @ Pu.coeffs]
    rhs = [l2_project(Nd, data.u, data.vol_rule)]
    for f, fb in enumerate(element.faces):
        r = data.face_rules[f]
        n = element.normals[f]
        mu = full_space(fb, kp, 1).values(r.points)
        un = np.einsum("maq,a->mq", Pu.values(r.points), n)
        rows.append(_vdot(mu, un, r.weights))
        pl_f = pl @ Pl.values(r.points)
        g = np.einsum("aq,a->q", data.face_u[f], n) - tau[f] * (pl_f - data.face_p[f])
        rhs.append(mu @ (g * r.weights))
    return _solve(np.vstack(rows), np.concatenate(rhs), "BDM-H projection")


def designated_projection(element, spaces, data, tau_n, branch="simplex"):
    """The variant's designated projection of the exact triple.

    Simplex branch: B (L2, BDM-H, L2), H (L2, HDG, HDG), B+ (curl+, BDM-H, L2),
    H+ (curl+, HDG, HDG); STD uses L2 throughout.  The "l2" branch replaces the
    HDG / BDM-H parts by L2 projections.
    """
    var, k = spaces.variant, spaces.k
    W, V, Q = spaces.W, spaces.V, spaces.Q
    rule = data.vol_rule
    if var in ("Bplus", "Hplus"):
        wc = curlplus_project(element, data, k, spaces.N)
    else:
        wc = l2_project(W, data.w, rule)
    kv = spaces.deg["V"]
    if var == "STD" or branch == "l2":
        uc = l2_project(V, data.u, rule)
        pc = l2_project(Q, data.p, rule)
    elif var in ("B", "Bplus"):
        uc = bdmh_project(element, data, kv, tau_n)
        pc = l2_project(Q, data.p, rule)
    else:
        uc, pc = hdg_project(element, data, kv, tau_n)
    return ProjectedTriple(wc, uc, pc, W, V, Q)


def _face_moments(element, spaces, tri, data, f):
    """Moments on face f used by remainders and identities."""
    r = data.face_rules[f]
    n = element.normals[f]
    Nv = spaces.N[f].values(r.points)
    Mv = spaces.M[f].values(r.points)
    w_h = np.einsum("m,maq->aq", tri.w, tri.W.values(r.points))
    u_h = np.einsum("m,maq->aq", tri.u, tri.V.values(r.points))
    p_h = tri.p @ tri.Q.values(r.points)
    wt = r.weights
    return {
        "nxPw": np.einsum("jaq,aq,q->j", Nv, _cross_n(n, w_h), wt),
        "nxw": np.einsum("jaq,aq,q->j", Nv, _cross_n(n, data.face_w[f]), wt),
        "Pu_t": np.einsum("jaq,aq,q->j", Nv, u_h, wt),
        "u_t": np.einsum("jaq,aq,q->j", Nv, data.face_u[f], wt),
        "Pu_n": Mv @ (np.einsum("aq,a->q", u_h, n) * wt),
        "u_n": Mv @ (np.einsum("aq,a->q", data.face_u[f], n) * wt),
        "Pp": Mv @ (p_h * wt),
        "p": Mv @ (data.face_p[f] * wt),
    }


def boundary_remainders(element, spaces, tri, data, tau_t, tau_n, sign=1):
    dt, dn = [], []
    for f in range(4):
        m = _face_moments(element, spaces, tri, data, f)
        dt.append(m["nxPw"] - m["nxw"] + sign * tau_t[f] * (m["Pu_t"] - m["u_t"]))
        dn.append(m["Pu_n"] - m["u_n"] + sign * tau_n[f] * (m["Pp"] - m["p"]))
    return BoundaryRemainder(dt, dn, sign)


def _rel(res, *terms, ref=0.0):
    """max|res| relative to the largest term, floored by a data-size reference."""
    scale = max([np.abs(t).max(initial=0.0) for t in terms] + [ref, 1e-300])
    return float(np.abs(res).max(initial=0.0) / scale)


def _norm(samples, rule):
    s2 = samples**2 if samples.ndim == 1 else np.sum(samples**2, axis=0)
    return float(np.sqrt(s2 @ rule.weights))


def _curl_scale(data, rule, h):
    """Reference size for curl-side residuals: w, or u / h when w vanishes."""
    return max(_norm(data.w, rule), _norm(data.u, rule) / h) / h


def assumption_residual(element, spaces, tri, data):
    """Relative residuals of the three projection conditions (curl, L2 on curl W + grad Q, div)."""
    rule = data.vol_rule
    x = rule.points
    W, V, Q = spaces.W, spaces.V, spaces.Q
    b = element.basis
    # (Pw - w, curl v) = <n x w - P_N(n x w), v>
    curl_v = V.curl(x)
    Pw = np.einsum("m,maq->aq", tri.w, W.values(x))
    t_pw = np.einsum("maq,aq,q->m", curl_v, Pw, rule.weights)
    t_w = np.einsum("maq,aq,q->m", curl_v, data.w, rule.weights)
    t_f = _trace_defect_moments(element, data, spaces.N, V)
    h = element.diameter
    r1 = _rel(t_pw - t_w - t_f, t_pw, t_w, t_f, ref=_curl_scale(data, rule, h))
    # (Pu - u, v) for v in curl W + grad Q
    rr = b.rule(2 * b.degree + 2)
    C = np.hstack([project_vector_samples(b, W.curl(rr.points), rr),
                   project_vector_samples(b, Q.grads(rr.points), rr)])
    from .polyspace import orthonormalize

    T = V.with_coeffs(orthonormalize(C))
    Pu = V.coeffs @ tri.u
    t_pu = T.coeffs.T @ Pu
    t_u = l2_project(T, data.u, rule)
    r2 = _rel(t_pu - t_u, t_pu, t_u, ref=_norm(data.u, rule))
    # (Pp - p, div v)
    div_v = V.div(x)
    Pp = tri.p @ Q.values(x)
    t_pp = div_v @ (Pp * rule.weights)
    t_p = div_v @ (data.p * rule.weights)
    r3 = _rel(t_pp - t_p, t_pp, t_p, ref=_norm(data.p, rule) / h)
    return r1, r2, r3


def weak_commutativity_residual(element, spaces, tri, data, rem, tau_t, tau_n):
    """Relative residuals of the two weak-commutativity identities tested on V and Q."""
    sign = rem.sign
    rule = data.vol_rule
    x = rule.points
    V, Q = spaces.V, spaces.Q
    vv = V.values(x)
    curl_Pw = np.einsum("m,maq->aq", tri.w, tri.W.curl(x))
    t1 = np.einsum("maq,aq,q->m", vv, curl_Pw - data.curl_w, rule.weights)
    qv = Q.values(x)
    div_Pu = tri.u @ tri.V.div(x)
    t2 = qv @ ((div_Pu - data.div_u) * rule.weights)
    s1 = np.zeros(V.dim)
    s2 = np.zeros(Q.dim)
    d1 = np.zeros(V.dim)
    d2 = np.zeros(Q.dim)
    for f in range(4):
        r = data.face_rules[f]
        m = _face_moments(element, spaces, tri, data, f)
        Nv = spaces.N[f].values(r.points)
        Mv = spaces.M[f].values(r.points)
        G = np.einsum("jaq,maq,q->jm", Nv, V.values(r.points), r.weights)
        H = np.einsum("jq,mq,q->jm", Mv, Q.values(r.points), r.weights)
        s1 += tau_t[f] * ((m["Pu_t"] - m["u_t"]) @ G)
        d1 += rem.delta_t[f] @ G
        # <Pp - P_M p, q>: Pp's trace lies in M
        s2 += tau_n[f] * ((m["Pp"] - m["p"]) @ H)
        d2 += rem.delta_n[f] @ H
    h = element.diameter
    r1 = _rel(t1 + sign * s1 - d1, t1, s1, d1, ref=_curl_scale(data, rule, h))
    r2 = _rel(t2 + sign * s2 - d2, t2, s2, d2, ref=_norm(data.u, rule) / h)
    return r1, r2


# ---------------------------------------------------------------------------
# Defining-equation residuals, evaluated from sampled fields

def _moment_rel(res, ref):
    return float(np.abs(res).max(initial=0.0) / max(np.abs(ref).max(initial=0.0), 1e-300))


def l2_residual(space, coef, samples, rule):
    """max |(P f - f, s)| over the columns s of ``space``, relative to max |(f, s)|."""
    S = space.values(rule.points)
    Pf = np.einsum("m,m...->...", coef, S)
    if S.ndim == 3:
        res = np.einsum("maq,aq,q->m", S, Pf - samples, rule.weights)
        ref = np.einsum("maq,aq,q->m", S, samples, rule.weights)
    else:
        res = S @ ((Pf - samples) * rule.weights)
        ref = S @ (samples * rule.weights)
    return _moment_rel(res, ref)


def curlplus_residual(element, data, k, coef, trace_spaces=None):
    """Residuals of the curl+ conditions: (test-space moments, corollary on P_{k+1}^3, zeroth moments)."""
    b = element.basis
    if trace_spaces is None:
        trace_spaces = [reduced_trace_space(fb, k) for fb in element.faces]
    rule = data.vol_rule
    x = rule.points
    Pk = full_space(b, k, 3)
    diff = np.einsum("m,maq->aq", coef, Pk.values(x)) - data.w
    R, V2 = curlplus_test_spaces(b, k)
    scale = np.sqrt(np.sum(data.w**2 * rule.weights)) + 1e-300
    r_R = np.einsum("maq,aq,q->m", R.values(x), diff, rule.weights)
    out = [float(np.abs(r_R).max(initial=0.0) / scale)]
    for V in (V2, full_space(b, k + 1, 3)):
        lhs = np.einsum("maq,aq,q->m", V.curl(x), diff, rule.weights)
        rhs = _trace_defect_moments(element, data, trace_spaces, V)
        ref = max(np.abs(lhs).max(initial=0.0), np.abs(rhs).max(initial=0.0), scale / element.diameter)
        out.append(float(np.abs(lhs - rhs).max(initial=0.0) / ref))
    zeroth = np.einsum("aq,q->a", diff, rule.weights) / np.sqrt(element.volume)
    out.append(float(np.abs(zeroth).max() / scale) if k >= 1 else 0.0)
    return {"test_moments": out[0], "curl_moments": out[1], "corollary": out[2], "zeroth": out[3]}


def _face_normal_moments(element, data, kp, tau, un_proj, p_term):
    res, ref = [], []
    for f, fb in enumerate(element.faces):
        r = data.face_rules[f]
        n = element.normals[f]
        mu = full_space(fb, kp, 1).values(r.points)
        un = np.einsum("aq,a->q", data.face_u[f], n)
        g = un_proj[f] - un + tau[f] * p_term[f]
        res.append(mu @ (g * r.weights))
        ref.append(mu @ (un * r.weights))
    return np.concatenate(res), np.concatenate(ref)


def hdg_residual(element, data, kp, tau, uc, pc):
    """Residuals of the HDG projection conditions (volume u, volume p, face) with degree kp."""
    b = element.basis
    rule = data.vol_rule
    x = rule.points
    Pu = full_space(b, kp, 3)
    Pp = full_space(b, kp, 1)
    du = np.einsum("m,maq->aq", uc, Pu.values(x)) - data.u
    dp = pc @ Pp.values(x) - data.p
    Tu = full_space(b, kp - 1, 3).values(x)
    Tp = full_space(b, kp - 1, 1).values(x)
    r_u = _moment_rel(np.einsum("maq,aq,q->m", Tu, du, rule.weights),
                      np.einsum("maq,aq,q->m", Tu, data.u, rule.weights))
    r_p = _moment_rel(Tp @ (dp * rule.weights), Tp @ (data.p * rule.weights) + 1e-300)
    un_proj, p_term = [], []
    for f, r in enumerate(data.face_rules):
        n = element.normals[f]
        un_proj.append(np.einsum("m,maq,a->q", uc, Pu.values(r.points), n))
        p_term.append(pc @ Pp.values(r.points) - data.face_p[f])
    res, ref = _face_normal_moments(element, data, kp, tau, un_proj, p_term)
    return {"volume_u": r_u, "volume_p": r_p, "face": _moment_rel(res, ref)}


def bdmh_residual(element, data, kp, tau, uc):
    """Residuals of the BDM-H conditions (Nedelec moments, face moments) with degree kp."""
    b = element.basis
    rule = data.vol_rule
    x = rule.points
    Pu = full_space(b, kp, 3)
    du = np.einsum("m,maq->aq", uc, Pu.values(x)) - data.u
    Nd = nedelec_subspace(b, kp - 2).values(x)
    if Nd.shape[0]:
        r_v = _moment_rel(np.einsum("maq,aq,q->m", Nd, du, rule.weights),
                          np.einsum("maq,aq,q->m", Nd, data.u, rule.weights))
    else:
        r_v = 0.0
    Pl = full_space(b, kp - 1, 1)
    pl = l2_project(Pl, data.p, rule)
    un_proj, p_term = [], []
    for f, r in enumerate(data.face_rules):
        n = element.normals[f]
        un_proj.append(np.einsum("m,maq,a->q", uc, Pu.values(r.points), n))
        p_term.append(pl @ Pl.values(r.points) - data.face_p[f])
    res, ref = _face_normal_moments(element, data, kp, tau, un_proj, p_term)
    return {"volume": r_v, "face": _moment_rel(res, ref)}
