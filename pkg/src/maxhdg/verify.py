"""Error norms, identity diagnostics and convergence studies."""

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .exact import lshape_solution, smooth_solution
from .mesh import build_cube_mesh, build_lshape_mesh
from .projections import (
    FieldData,
    assumption_residual,
    boundary_remainders,
    designated_projection,
    weak_commutativity_residual,
)
from .scheme import (
    DataRules,
    Discretization,
    SolverBreakdown,
    TauRule,
    VariantConfig,
    assemble_global,
    data_degree,
    recover,
    solve,
)

SATURATION = 1e-13
CSV_COLUMNS = ["variant", "k", "domain", "level", "h", "dofs_skeleton", "err_w", "ord_w",
               "err_u", "ord_u", "err_p", "ord_p", "err_trace", "ord_trace", "wall_s"]


def observed_rate(e_coarse, e_fine, h_coarse, h_fine):
    """log(e_c / e_f) / log(h_c / h_f); None when either error is below the saturation floor."""
    if not h_coarse > h_fine > 0:
        raise ValueError("need h_coarse > h_fine > 0")
    if e_coarse < 0 or e_fine < 0:
        raise ValueError("errors must be nonnegative")
    if e_coarse < SATURATION or e_fine < SATURATION:
        return None
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)


def _field_on(disc, sol, e, x):
    phi = disc.element_values(e, x)
    w = np.einsum("cj,jq->cq", sol.w[e].reshape(3, disc.dW), phi[:disc.dW])
    u = np.einsum("cj,jq->cq", sol.u[e].reshape(3, disc.dV), phi[:disc.dV])
    p = sol.p[e] @ phi[:disc.dQ]
    return w, u, p


def trace_projection(disc, exact, data_rules, j):
    """Coefficients of P_N u (tangential part of u) on face j."""
    fd = disc.faces[j]
    r = data_rules.face(j)
    return np.einsum("maq,aq,q->m", fd.N.values(r.points), exact.u(r.points), r.weights)


def compute_errors(disc, sol, exact, extra=2):
    """L2 errors of w, u, p and the h_K^(1/2)-weighted trace error of P_N u - uhat.

    The quadrature degree is the assembly data degree plus ``extra``.
    """
    mesh = disc.mesh
    rules = DataRules(mesh, data_degree(disc.k, extra, mesh.h), getattr(exact, "singular_line", None))
    ew = eu = ep = 0.0
    for e in range(mesh.n_elements):
        r = rules.volume(e)
        w, u, p = _field_on(disc, sol, e, r.points)
        ew += np.sum((exact.w(r.points) - w) ** 2 @ r.weights)
        eu += np.sum((exact.u(r.points) - u) ** 2 @ r.weights)
        ep += ((exact.p(r.points) - p) ** 2) @ r.weights
    et = 0.0
    pn = {}
    for e in range(mesh.n_elements):
        for j in mesh.tet_faces[e]:
            if j not in pn:
                pn[j] = trace_projection(disc, exact, rules, j)
            et += mesh.diameters[e] * np.sum((pn[j] - sol.uhat[j]) ** 2)
    return {"err_w": math.sqrt(ew), "err_u": math.sqrt(eu), "err_p": math.sqrt(ep),
            "err_trace": math.sqrt(et)}


def _element_field_data(disc, e, exact, element):
    dr = disc.data_rules
    return FieldData.sample(element, exact, vol_rule=dr.volume(e),
                            face_rules=[dr.face(j) for j in disc.mesh.tet_faces[e]])


@dataclass
class IdentityReport:
    energy_lhs: float
    energy_rhs: float
    energy_residual: float
    weak_commutativity: float
    assumption: float
    delta_n: float  # max relative size of the grad-div remainder
    per_element: list = field(default_factory=list)


def identity_diagnostics(disc, sol, exact, branch="simplex"):
    """Energy identity, weak commutativity, projection assumption and grad-div remainder.

    The designated projection of the exact solution is formed on every
    element; all face quantities are coefficients in the orthonormal trace
    bases, so inner products are dot products.
    """
    mesh = disc.mesh
    lhs = rhs = 0.0
    wc = asm = dn = 0.0
    for e in range(mesh.n_elements):
        el = disc.element(e)
        spaces = disc.spaces(e, el)
        data = _element_field_data(disc, e, exact, el)
        tt, tn = disc.tau_t[e], disc.tau_n[e]
        tri = designated_projection(el, spaces, data, tn, branch=branch)
        rem = boundary_remainders(el, spaces, tri, data, tt, tn, 1)
        wc = max(wc, *weak_commutativity_residual(el, spaces, tri, data, rem, tt, tn))
        asm = max(asm, *assumption_residual(el, spaces, tri, data))
        eps_w = tri.w - sol.w[e]
        eps_u = tri.u - sol.u[e]
        eps_p = tri.p - sol.p[e]
        r = data.vol_rule
        w_vals = spaces.W.values(r.points)
        proj_w = np.einsum("m,maq->aq", tri.w, w_vals)
        eps_w_vals = np.einsum("m,maq->aq", eps_w, w_vals)
        lhs += eps_w @ eps_w
        rhs += np.sum((proj_w - data.w) * eps_w_vals * r.weights)
        scale_n = 0.0
        for f, j in enumerate(mesh.tet_faces[e]):
            fr = data.face_rules[f]
            Nv = spaces.N[f].values(fr.points)
            Mv = spaces.M[f].values(fr.points)
            eu_f = np.einsum("m,maq->aq", eps_u, spaces.V.values(fr.points))
            ep_f = eps_p @ spaces.Q.values(fr.points)
            pn_eps = np.einsum("jaq,aq,q->j", Nv, eu_f, fr.weights)
            pm_eps = Mv @ (ep_f * fr.weights)
            pn_u = np.einsum("jaq,aq,q->j", Nv, data.face_u[f], fr.weights)
            pm_p = Mv @ (data.face_p[f] * fr.weights)
            a = pn_eps - (pn_u - sol.uhat[j])
            b = pm_eps - (pm_p - sol.phat[j])
            lhs += tt[f] * (a @ a) + tn[f] * (b @ b)
            rhs += rem.delta_t[f] @ a + rem.delta_n[f] @ b
            un = np.einsum("aq,a->q", data.face_u[f], el.normals[f])
            scale_n = max(scale_n, math.sqrt(np.sum(un**2 * fr.weights) / fr.weights.sum()),
                          tn[f] * math.sqrt(np.sum(data.face_p[f] ** 2 * fr.weights)
                                            / fr.weights.sum()))
        if disc.variant != "STD":
            size = max(np.linalg.norm(d) for d in rem.delta_n)
            dn = max(dn, size / max(scale_n, 1.0))
    res = abs(lhs - rhs) / (abs(lhs) + abs(rhs) + 1e-300)
    if abs(lhs) + abs(rhs) < 1e-24:
        res = 0.0
    return IdentityReport(lhs, rhs, res, wc, asm, dn)


def energy_identity_residual(disc, sol, exact):
    return identity_diagnostics(disc, sol, exact).energy_residual


def error_drift(disc, sol, exact, base=2, bumped=4):
    """Relative change of each error when the error quadrature degree is raised."""
    a = compute_errors(disc, sol, exact, base)
    b = compute_errors(disc, sol, exact, bumped)
    return {key: abs(a[key] - b[key]) / max(b[key], 1e-300) for key in a}


# ---------------------------------------------------------------------------
# Convergence studies

DOMAINS = {
    "cube": (build_cube_mesh, smooth_solution),
    "lshape": (build_lshape_mesh, lshape_solution),
}


@dataclass
class LevelResult:
    level: int
    h: float
    dofs_skeleton: int
    errors: dict
    wall_s: float
    identities: IdentityReport = None
    drift: dict = None
    state: tuple = None  # (disc, solution, exact) when kept


@dataclass
class ErrorReport:
    variant: str
    k: int
    domain: str
    tau: str
    levels: list = field(default_factory=list)

    def rates(self, key):
        out = [None]
        for a, b in zip(self.levels, self.levels[1:]):
            out.append(observed_rate(a.errors[key], b.errors[key], a.h, b.h))
        return out

    def final_rate(self, key):
        return self.rates(key)[-1]

    def rows(self, timing=True):
        cols = {key: self.rates(key) for key in ("err_w", "err_u", "err_p", "err_trace")}
        out = []
        for i, lv in enumerate(self.levels):
            row = [self.variant, str(self.k), self.domain, str(lv.level), _fmt(lv.h),
                   str(lv.dofs_skeleton)]
            for key in ("err_w", "err_u", "err_p", "err_trace"):
                row += [_fmt(lv.errors[key]), _fmt_rate(cols[key][i], i)]
            row.append(f"{lv.wall_s:.3f}" if timing else "-")
            out.append(row)
        return out

    def to_csv(self, timing=True):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        wr.writerows(self.rows(timing))
        return buf.getvalue()

    def table(self):
        head = f"{'n':>3} {'h':>9} {'dofs':>8}  {'err_w':>9} {'ord':>5}  {'err_u':>9} {'ord':>5}" \
               f"  {'err_p':>9} {'ord':>5}  {'err_tr':>9} {'ord':>5}"
        lines = [f"{self.variant} k={self.k} {self.domain} tau={self.tau}", head]
        for row in self.rows():
            _, _, _, lev, h, dofs, ew, ow, eu, ou, ep, op, et, ot, _ = row
            lines.append(f"{lev:>3} {float(h):9.3e} {dofs:>8}  {float(ew):9.2e} {ow:>5}"
                         f"  {float(eu):9.2e} {ou:>5}  {float(ep):9.2e} {op:>5}  {float(et):9.2e} {ot:>5}")
        return "\n".join(lines)


def _fmt(x):
    return f"{x:.6e}"


def _fmt_rate(r, i):
    if i == 0:
        return "-"
    return "sat" if r is None else f"{r:.3f}"


def plt_stub(csv_name, title):
    """gnuplot script plotting the error columns of a study CSV on log-log axes."""
    return (f"set datafile separator ','\nset logscale xy\nset key left top\n"
            f"set title '{title}'\nset xlabel 'h'\nset ylabel 'error'\n"
            f"plot '{csv_name}' every ::1 using 5:7 with linespoints title 'w', \\\n"
            f"     '' every ::1 using 5:9 with linespoints title 'u', \\\n"
            f"     '' every ::1 using 5:11 with linespoints title 'p', \\\n"
            f"     '' every ::1 using 5:13 with linespoints title 'trace'\n")


def solve_level(domain, n, config, method="direct", threads=1):
    """Mesh level n, solve, return (disc, solution, exact, wall seconds)."""
    build, make_exact = DOMAINS[domain]
    mesh = build(n)
    exact = make_exact()
    t0 = time.perf_counter()
    rules = DataRules(mesh, data_degree(config.k, h=mesh.h), exact.singular_line)
    disc = Discretization(mesh, config, rules)
    system = assemble_global(disc, exact, threads=threads)
    try:
        x = solve(system, method)
    except SolverBreakdown as exc:
        raise SolverBreakdown(f"level n={n}, {config.variant} k={config.k} "
                              f"tau={config.tau}: {exc}") from exc
    sol = recover(system, x)
    return disc, sol, exact, time.perf_counter() - t0


def convergence_study(domain, variant, k, levels, tau="default", method="direct", threads=1,
                      identities=False, drift=False, allow_low_order=None, keep=False):
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain {domain!r}")
    tau_rule = tau if isinstance(tau, TauRule) else TauRule.parse(tau)
    if allow_low_order is None:
        allow_low_order = domain == "lshape"
    config = VariantConfig(variant, k, tau_rule, allow_low_order=allow_low_order)
    levels = sorted(levels)
    report = ErrorReport(variant, k, domain, str(tau_rule))
    for n in levels:
        disc, sol, exact, wall = solve_level(domain, n, config, method, threads)
        errs = compute_errors(disc, sol, exact)
        lv = LevelResult(n, disc.mesh.h, disc.n_skeleton, errs, wall)
        if identities:
            lv.identities = identity_diagnostics(disc, sol, exact)
        if drift:
            lv.drift = error_drift(disc, sol, exact)
        if keep:
            lv.state = (disc, sol, exact)
        report.levels.append(lv)
    return report
