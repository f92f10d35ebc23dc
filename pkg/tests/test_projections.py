import numpy as np
import pytest

from maxhdg.exact import LinearSolution, TrigTriple
from maxhdg.polyspace import Element, full_space, monomial_exponents
from maxhdg.projections import (
    FieldData,
    bdmh_project,
    bdmh_residual,
    curlplus_project,
    curlplus_residual,
    hdg_project,
    hdg_residual,
    l2_project,
    l2_residual,
)

TET = np.array([[0.0, 0.0, 0.0], [1.0, 0.1, 0.0], [0.2, 0.9, 0.1], [0.1, 0.2, 1.1]])


def sample(k, exact, tet=TET):
    el = Element(tet, k + 2)
    return el, FieldData.sample(el, exact, degree=2 * (k + 2) + 8)


def field_values(el, k, coef, x):
    return np.einsum("m,maq->aq", coef, full_space(el.basis, k, 3).values(x))


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_defining_equations_random_tets(k):
    rng = np.random.default_rng(100 + k)
    for _ in range(3):
        el, data = sample(k, TrigTriple(rng, 1.5), rng.uniform(size=(4, 3)))
        S = full_space(el.basis, k, 3)
        assert l2_residual(S, l2_project(S, data.u, data.vol_rule), data.u, data.vol_rule) < 1e-9
        if k >= 1:
            res = curlplus_residual(el, data, k, curlplus_project(el, data, k))
            assert max(res.values()) < 1e-9, res
        tau = rng.uniform(0.1, 2.0, 4)
        uc, pc = hdg_project(el, data, k + 1, tau)
        assert max(hdg_residual(el, data, k + 1, tau, uc, pc).values()) < 1e-9
        uc = bdmh_project(el, data, k + 1, tau)
        assert max(bdmh_residual(el, data, k + 1, tau, uc).values()) < 1e-9


def test_projections_reproduce_polynomials():
    ex = LinearSolution(np.array([[1.0, 2, 0], [0, -1, 3], [2, 0, 0]]), np.array([0.5, -1, 2]))
    ex.p = lambda x: 1.0 + x[0] - 2 * x[2]
    ex.grad_p = lambda x: np.array([1.0, 0, -2])[:, None] + 0 * x
    el, data = sample(1, ex)
    x = data.vol_rule.points
    w = field_values(el, 1, curlplus_project(el, data, 1), x)
    assert np.allclose(w, data.w, atol=1e-12)
    tau = np.array([1.0, 0.3, 2.0, 0.7])
    uc, pc = hdg_project(el, data, 1, tau)
    assert np.allclose(field_values(el, 1, uc, x), data.u, atol=1e-12)
    assert np.allclose(pc @ full_space(el.basis, 1, 1).values(x), data.p, atol=1e-12)
    # the BDM-H face condition also sees p - P_{kp-1} p, so reproduce at kp = 2
    uc = bdmh_project(el, data, 2, tau)
    assert np.allclose(field_values(el, 2, uc, x), data.u, atol=1e-12)


def test_hdg_accepts_negative_stabilization():
    el, data = sample(1, TrigTriple(np.random.default_rng(4)))
    tau = -np.array([1.0, 0.5, 0.2, 0.9])
    uc, pc = hdg_project(el, data, 2, tau)
    assert max(hdg_residual(el, data, 2, tau, uc, pc).values()) < 1e-9
    with pytest.raises(ValueError):
        hdg_project(el, data, 2, np.array([1.0, -1.0, 1.0, 1.0]))
    with pytest.raises(ValueError):
        hdg_project(el, data, 2, np.zeros(4))


def classical_bdm(el, data, kp):
    """Independent BDM interpolant in monomials of y = (x - c) / h.

    Interior moments against P_{kp-2}^3 + y x P~_{kp-2}^3, face normal moments
    against P_kp restricted to each face.  The test set is redundant, so the
    system is solved by least squares and its rank is checked.
    """
    c = el.vertices.mean(axis=0)
    h = el.diameter
    exps = monomial_exponents(3, kp)

    def mono(x, es):
        y = (x - c[:, None]) / h
        return np.array([np.prod(y ** np.array(e)[:, None], axis=0) for e in es])

    def trial(x):
        m = mono(x, exps)
        out = np.zeros((3 * len(exps), 3, x.shape[1]))
        for a in range(3):
            out[a * len(exps):(a + 1) * len(exps), a] = m
        return out

    rule = data.vol_rule
    x = rule.points
    tests = []
    if kp >= 2:
        low = [e for e in monomial_exponents(3, kp - 2)]
        ml = mono(x, low)
        for a in range(3):
            t = np.zeros((len(low), 3, x.shape[1]))
            t[:, a] = ml
            tests.append(t)
        top = [e for e in low if sum(e) == kp - 2]
        y = (x - c[:, None]) / h
        mt = mono(x, top)
        for a in range(3):
            q = np.zeros((len(top), 3, x.shape[1]))
            q[:, a] = mt
            tests.append(np.cross(y[None], q, axisa=1, axisb=1, axisc=1))
    rows, rhs = [], []
    if tests:
        T = np.concatenate(tests)
        rows.append(np.einsum("taq,maq,q->tm", T, trial(x), rule.weights))
        rhs.append(np.einsum("taq,aq,q->t", T, data.u, rule.weights))
    for f, r in enumerate(data.face_rules):
        n = el.normals[f]
        mu = mono(r.points, exps)
        un = np.einsum("maq,a->mq", trial(r.points), n)
        rows.append(np.einsum("tq,mq,q->tm", mu, un, r.weights))
        rhs.append(mu @ (np.einsum("aq,a->q", data.face_u[f], n) * r.weights))
    A, b = np.vstack(rows), np.concatenate(rhs)
    sol, _, rank, _ = np.linalg.lstsq(A, b, rcond=1e-12)
    assert rank == A.shape[1]
    return lambda pts: np.einsum("m,maq->aq", sol, trial(pts))


@pytest.mark.parametrize("kp", [1, 2, 3])
def test_bdmh_with_zero_stabilization_matches_classical_bdm(kp):
    el, data = sample(kp - 1, TrigTriple(np.random.default_rng(kp), 1.2))
    uc = bdmh_project(el, data, kp, np.zeros(4))
    oracle = classical_bdm(el, data, kp)
    x = data.vol_rule.points
    assert np.allclose(field_values(el, kp, uc, x), oracle(x), atol=1e-9)
