import numpy as np
import pytest

from maxhdg.exact import LinearSolution, TrigTriple, lshape_solution, smooth_solution

STEP = 1e-5


def fd_jacobian(field, x):
    """Central differences: J[c, a, q] = d field_c / d x_a."""
    cols = []
    for a in range(3):
        e = np.zeros((3, 1))
        e[a] = STEP
        cols.append((field(x + e) - field(x - e)) / (2 * STEP))
    return np.stack(cols, axis=1)


def curl_of(J):
    return np.array([J[2, 1] - J[1, 2], J[0, 2] - J[2, 0], J[1, 0] - J[0, 1]])


def sample_points(domain, rng, n=40):
    if domain == "cube":
        return rng.uniform(0.05, 0.95, size=(3, n))
    x = rng.uniform(0.05, 0.95, size=(3, n))
    x[0] *= rng.choice([-1, 1], n)
    return x


@pytest.mark.parametrize("name", ["smooth", "lshape", "trig"])
def test_derivatives_match_finite_differences(name):
    rng = np.random.default_rng(3)
    ex = {"smooth": smooth_solution(), "lshape": lshape_solution(),
          "trig": TrigTriple(np.random.default_rng(1))}[name]
    x = sample_points("lshape" if name == "lshape" else "cube", rng)
    Ju = fd_jacobian(ex.u, x)
    assert np.allclose(Ju, ex.grad_u(x), atol=1e-6)
    assert np.allclose(np.trace(Ju), ex.div_u(x), atol=1e-6)
    Jw = fd_jacobian(ex.w, x)
    assert np.allclose(curl_of(Jw), ex.curl_w(x), atol=1e-5)
    gp = fd_jacobian(lambda y: ex.p(y)[None], x)[0]
    assert np.allclose(gp, ex.grad_p(x), atol=1e-6)


@pytest.mark.parametrize("ex", [smooth_solution(), lshape_solution()])
def test_pde_fields_consistent(ex):
    x = sample_points("lshape" if ex.singular_line is not None else "cube",
                      np.random.default_rng(5))
    assert np.allclose(ex.w(x), curl_of(ex.grad_u(x)), atol=1e-12)
    assert np.allclose(ex.div_u(x), 0, atol=1e-12)
    assert np.allclose(ex.f(x), ex.curl_w(x) + ex.grad_p(x))


def test_lshape_is_curl_free_and_singular():
    ex = lshape_solution()
    x = sample_points("lshape", np.random.default_rng(7))
    assert np.allclose(ex.w(x), 0, atol=1e-12)
    # |u| grows like r^(-1/3) toward the re-entrant edge
    r = np.array([1e-2, 1e-4])
    pts = np.vstack([r / np.sqrt(2), r / np.sqrt(2), [0.5, 0.5]])
    mag = np.linalg.norm(ex.u(pts), axis=0)
    assert np.isclose(np.log(mag[1] / mag[0]) / np.log(r[1] / r[0]), -1.0 / 3.0, atol=1e-6)


def test_tangential_trace():
    ex = LinearSolution(np.arange(9.0).reshape(3, 3) - 4, np.array([1.0, 2, 3]))
    x = np.random.default_rng(0).uniform(size=(3, 5))
    n = np.array([0.0, 0.0, 1.0])
    t = ex.tangential_u(x, n)
    assert np.allclose(t[2], 0) and np.allclose(t[:2], ex.u(x)[:2])
