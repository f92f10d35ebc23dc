"""Closed-form exact fields for the mixed system w = curl u, curl w + grad p = f, div u = 0.

All evaluators take points of shape (3, npts) and return (3, npts) for
vector fields and (npts,) for scalars.
"""

import numpy as np

PI = np.pi


class ExactSolution:
    """Base class: subclasses provide u, p, w, curl_w, grad_p, div_u, grad_u."""

    regularity = "smooth"
    singular_line = None  # (point, direction) of a line singularity, if any

    def f(self, x):
        return self.curl_w(x) + self.grad_p(x)

    def g(self, x, n):
        """n x u for a unit normal n (3,) or (3, npts)."""
        n = np.broadcast_to(np.asarray(n, dtype=float).reshape(3, -1), x.shape)
        return np.cross(n, self.u(x), axis=0)

    def tangential_u(self, x, n):
        """Tangential trace (n x u) x n."""
        n = np.broadcast_to(np.asarray(n, dtype=float).reshape(3, -1), x.shape)
        return np.cross(self.g(x, n), n, axis=0)


class SmoothSolution(ExactSolution):
    """u = (sin sin sin, cos cos sin, x^5 + y^5), p = sin sin sin on the unit cube."""

    def u(self, x):
        X, Y, Z = x
        sx, sy, sz = np.sin(PI * X), np.sin(PI * Y), np.sin(PI * Z)
        cx, cy = np.cos(PI * X), np.cos(PI * Y)
        return np.array([sx * sy * sz, cx * cy * sz, X**5 + Y**5])

    def grad_u(self, x):
        """Jacobian (3, 3, npts), [c, a] = d u_c / d x_a."""
        X, Y, Z = x
        sx, sy, sz = np.sin(PI * X), np.sin(PI * Y), np.sin(PI * Z)
        cx, cy, cz = np.cos(PI * X), np.cos(PI * Y), np.cos(PI * Z)
        z = np.zeros_like(X)
        return np.array([
            [PI * cx * sy * sz, PI * sx * cy * sz, PI * sx * sy * cz],
            [-PI * sx * cy * sz, -PI * cx * sy * sz, PI * cx * cy * cz],
            [5 * X**4, 5 * Y**4, z],
        ])

    def div_u(self, x):
        J = self.grad_u(x)
        return J[0, 0] + J[1, 1] + J[2, 2]

    def p(self, x):
        X, Y, Z = x
        return np.sin(PI * X) * np.sin(PI * Y) * np.sin(PI * Z)

    def grad_p(self, x):
        X, Y, Z = x
        sx, sy, sz = np.sin(PI * X), np.sin(PI * Y), np.sin(PI * Z)
        cx, cy, cz = np.cos(PI * X), np.cos(PI * Y), np.cos(PI * Z)
        return PI * np.array([cx * sy * sz, sx * cy * sz, sx * sy * cz])

    def w(self, x):
        X, Y, Z = x
        sx, sy, sz = np.sin(PI * X), np.sin(PI * Y), np.sin(PI * Z)
        cx, cy, cz = np.cos(PI * X), np.cos(PI * Y), np.cos(PI * Z)
        return np.array([
            5 * Y**4 - PI * cx * cy * cz,
            PI * sx * sy * cz - 5 * X**4,
            -2 * PI * sx * cy * sz,
        ])

    def curl_w(self, x):
        X, Y, Z = x
        sx, sy, sz = np.sin(PI * X), np.sin(PI * Y), np.sin(PI * Z)
        cx, cy = np.cos(PI * X), np.cos(PI * Y)
        return np.array([
            3 * PI**2 * sx * sy * sz,
            3 * PI**2 * cx * cy * sz,
            -20 * X**3 - 20 * Y**3,
        ])


class LShapeSolution(ExactSolution):
    """u = grad(r^(2/3) sin(2 theta / 3)) in the xy-plane, p = 0, w = 0.

    theta runs over [0, 3pi/2] across the L-shaped cross-section, starting on
    the face {x = 0, y < 0} of the re-entrant corner and ending on {y = 0, x < 0}.
    """

    regularity = "singular"
    singular_line = (np.zeros(3), np.array([0.0, 0.0, 1.0]))

    @staticmethod
    def _polar(x):
        X, Y = x[0], x[1]
        r = np.hypot(X, Y)
        if np.any(r == 0):
            raise ValueError("L-shape solution evaluated on the singular edge")
        theta = np.mod(np.arctan2(Y, X) + PI / 2, 2 * PI)
        return r, theta

    def potential(self, x):
        r, t = self._polar(x)
        return r ** (2 / 3) * np.sin(2 * t / 3)

    def u(self, x):
        r, t = self._polar(x)
        a = (2 / 3) * r ** (-1 / 3)
        return np.array([a * np.cos(t / 3), a * np.sin(t / 3), np.zeros_like(r)])

    def grad_u(self, x):
        r, t = self._polar(x)
        X, Y = x[0], x[1]
        a = (2 / 3) * r ** (-1 / 3)
        da_dr = -(2 / 9) * r ** (-4 / 3)
        dr = np.array([X / r, Y / r])
        dt = np.array([-Y / r**2, X / r**2])
        c3, s3 = np.cos(t / 3), np.sin(t / 3)
        ux = [da_dr * c3 * dr[i] - a * s3 / 3 * dt[i] for i in range(2)]
        uy = [da_dr * s3 * dr[i] + a * c3 / 3 * dt[i] for i in range(2)]
        z = np.zeros_like(r)
        return np.array([[ux[0], ux[1], z], [uy[0], uy[1], z], [z, z, z]])

    def div_u(self, x):
        return np.zeros(x.shape[1])

    def p(self, x):
        return np.zeros(x.shape[1])

    def grad_p(self, x):
        return np.zeros_like(x)

    def w(self, x):
        return np.zeros_like(x)

    def curl_w(self, x):
        return np.zeros_like(x)


class LinearSolution(ExactSolution):
    """u = A x + b with trace-free A (so div u = 0), p = 0; w = curl u is constant."""

    def __init__(self, A, b):
        A = np.asarray(A, dtype=float)
        self.A = A - np.trace(A) / 3 * np.eye(3)
        self.b = np.asarray(b, dtype=float)

    def u(self, x):
        return self.A @ x + self.b[:, None]

    def grad_u(self, x):
        return np.broadcast_to(self.A[:, :, None], (3, 3, x.shape[1])).copy()

    def div_u(self, x):
        return np.zeros(x.shape[1])

    def p(self, x):
        return np.zeros(x.shape[1])

    def grad_p(self, x):
        return np.zeros_like(x)

    def w(self, x):
        A = self.A
        c = np.array([A[2, 1] - A[1, 2], A[0, 2] - A[2, 0], A[1, 0] - A[0, 1]])
        return np.broadcast_to(c[:, None], x.shape).copy()

    def curl_w(self, x):
        return np.zeros_like(x)


class ZeroSolution(ExactSolution):
    def u(self, x):
        return np.zeros_like(x)

    def grad_u(self, x):
        return np.zeros((3, 3, x.shape[1]))

    def div_u(self, x):
        return np.zeros(x.shape[1])

    def p(self, x):
        return np.zeros(x.shape[1])

    def grad_p(self, x):
        return np.zeros_like(x)

    def w(self, x):
        return np.zeros_like(x)

    def curl_w(self, x):
        return np.zeros_like(x)


class TrigTriple(ExactSolution):
    """Independent smooth (w, u, p) with random trigonometric coefficients.

    The fields are not tied by the PDE; they serve projection tests, which only
    need w, curl w, u, div u and p.
    """

    def __init__(self, rng, scale=1.0):
        self.kw = rng.normal(size=(3, 3)) * scale
        self.ku = rng.normal(size=(3, 3)) * scale
        self.kp = rng.normal(size=3) * scale
        self.phw = rng.uniform(0, 2 * PI, 3)
        self.phu = rng.uniform(0, 2 * PI, 3)
        self.php = rng.uniform(0, 2 * PI)

    def w(self, x):
        return np.sin(self.kw @ x + self.phw[:, None])

    def curl_w(self, x):
        c = np.cos(self.kw @ x + self.phw[:, None])
        J = self.kw[:, :, None] * c[:, None, :]  # d w_c / d x_a
        return np.array([J[2, 1] - J[1, 2], J[0, 2] - J[2, 0], J[1, 0] - J[0, 1]])

    def u(self, x):
        return np.cos(self.ku @ x + self.phu[:, None])

    def grad_u(self, x):
        s = -np.sin(self.ku @ x + self.phu[:, None])
        return self.ku[:, :, None] * s[:, None, :]

    def div_u(self, x):
        J = self.grad_u(x)
        return J[0, 0] + J[1, 1] + J[2, 2]

    def p(self, x):
        return np.sin(self.kp @ x + self.php)

    def grad_p(self, x):
        return self.kp[:, None] * np.cos(self.kp @ x + self.php)[None, :]


def smooth_solution():
    return SmoothSolution()


def lshape_solution():
    return LShapeSolution()
