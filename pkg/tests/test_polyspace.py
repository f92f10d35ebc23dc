import numpy as np
import pytest

from maxhdg.polyspace import (
    VARIANTS,
    Element,
    PolyBasis,
    VariantSpaces,
    check_inclusions,
    dim_p,
    full_space,
    nedelec_subspace,
    reduced_trace_space,
    standalone_face,
)

TET = np.array([[0.0, 0.0, 0.0], [1.0, 0.1, 0.0], [0.2, 0.9, 0.1], [0.1, 0.2, 1.1]])


def gram(space, rule):
    v = space.values(rule.points)
    if v.ndim == 3:
        return np.einsum("maq,naq,q->mn", v, v, rule.weights)
    return np.einsum("mq,nq,q->mn", v, v, rule.weights)


@pytest.mark.parametrize("k", [0, 1, 3])
def test_orthonormal_bases(k):
    b = PolyBasis(TET, k)
    assert b.size == dim_p(3, k)
    r = b.rule(2 * k + 2)
    assert np.allclose(gram(full_space(b, k, 1), r), np.eye(b.size), atol=1e-12)
    fb = standalone_face(TET, 0, k)
    assert fb.size == dim_p(2, k)
    assert np.allclose(gram(full_space(fb, k, 2), fb.rule(2 * k + 2)), np.eye(2 * fb.size),
                       atol=1e-12)


def test_dimensions():
    assert [dim_p(3, k) for k in range(4)] == [1, 4, 10, 20]
    assert [dim_p(2, k) for k in range(4)] == [1, 3, 6, 10]
    for k in range(3):
        fb = standalone_face(TET, 1, k + 1)
        assert reduced_trace_space(fb, k).dim == 2 * dim_p(2, k) + (k + 3)
        b = PolyBasis(TET, k + 1)
        # Nedelec dimension (m+1)(m+3)(m+4)/2
        assert nedelec_subspace(b, k).dim == (k + 1) * (k + 3) * (k + 4) // 2


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("k", [0, 1, 2])
def test_inclusions(variant, k):
    if variant in ("Bplus", "Hplus") and k == 0:
        pytest.skip("reduced trace variants start at k = 1")
    sp = VariantSpaces(Element(TET, k + 2), variant, k)
    for name, res in check_inclusions(sp).items():
        assert res < 1e-10, name


def test_inclusion_check_detects_violation():
    # a trace space too small for n x W must be reported
    el = Element(TET, 3)
    sp = VariantSpaces(el, "H", 1)
    sp.N = [full_space(fb, 0, 2) for fb in el.faces]
    assert check_inclusions(sp)["n x W in N"] > 1e-3


def test_curl_range_and_complement_dimensions():
    from maxhdg.polyspace import curl_range_subspace, orth_complement
    from maxhdg.projections import curlplus_test_spaces

    b = PolyBasis(TET, 3)
    assert curl_range_subspace(b, 1).dim == 3
    C2 = curl_range_subspace(b, 2)
    assert C2.dim == 11
    r = b.rule(8)
    assert np.abs(C2.div(r.points)).max() < 1e-10
    R, V2 = curlplus_test_spaces(b, 1)
    assert orth_complement(curl_range_subspace(b, 2), full_space(b, 1, 3)).dim == 1
    assert R.dim == 3 + 1 and V2.dim == 8
    assert orth_complement(full_space(b, 2, 3), full_space(b, 2, 3)).dim == 0


def test_nedelec_constraint():
    from maxhdg.polyspace import homogeneous_subspace

    b = PolyBasis(TET, 3)
    assert nedelec_subspace(b, 0).dim == 6 and nedelec_subspace(b, 1).dim == 20
    # along the ray c + t y a field of N_1 is quadratic in t; its t^2 part q(y) must satisfy q(y) . y = 0
    N1 = nedelec_subspace(b, 1)
    c = b.centroid[:, None]
    y = np.random.default_rng(2).uniform(-0.3, 0.3, size=(3, 15))
    q = (N1.values(c + 2 * y) - 2 * N1.values(c + y) + N1.values(c + 0 * y)) / 2
    assert np.abs(np.einsum("maq,aq->mq", q, y)).max() < 1e-10
    H = homogeneous_subspace(b, 2)
    assert np.allclose(H.values(c + 2 * y), 4 * H.values(c + y), atol=1e-10)


def test_reduced_trace_space_origin_independent():
    from maxhdg.polyspace import _residual

    fb = standalone_face(TET, 2, 3)
    a = reduced_trace_space(fb, 1)
    p = 0.2 * TET[0] + 0.5 * TET[1] + 0.3 * TET[3]  # a point on face 2
    b = reduced_trace_space(fb, 1, origin=p)
    r = fb.rule(8)
    assert a.dim == b.dim == 10
    assert _residual(b.values(r.points), a, r) < 1e-9


def test_projection_reproduces_quadratic():
    b = PolyBasis(TET, 2)
    S = full_space(b, 2, 1)
    r = b.rule(6)
    f = lambda x: x[0] ** 2 - x[1] * x[2]  # noqa: E731
    coef = S.values(r.points) @ (f(r.points) * r.weights)
    x = np.random.default_rng(0).uniform(size=(3, 20))
    assert np.allclose(coef @ S.values(x), f(x), atol=1e-11)
