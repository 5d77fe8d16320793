"""Lagrange bases and quadrature on triangles, segments and parameter intervals.

The reference triangle is {(x, y): x >= 0, y >= 0, x + y <= 1} and the
reference segment is [-1, 1].  High-order nodes sit on the uniform
simplex lattice, so the trace of a triangle basis on an edge coincides
with the uniform 1D Lagrange basis of the same degree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import eval_jacobi, roots_jacobi

MAX_DEGREE = 8


def _jacobi(x, alpha, n):
    return eval_jacobi(n, alpha, 0.0, x)


def _jacobi_deriv(x, alpha, n):
    if n == 0:
        return np.zeros_like(x)
    return 0.5 * (alpha + n + 1) * eval_jacobi(n - 1, alpha + 1.0, 1.0, x)


def _collapsed_coords(r, s):
    """Map biunit-triangle coordinates to the collapsed square."""
    a = np.full_like(r, -1.0)
    ok = np.abs(1.0 - s) > 1e-12
    a[ok] = 2.0 * (1.0 + r[ok]) / (1.0 - s[ok]) - 1.0
    return a, s


def _modal_basis(k, points):
    """Orthogonal (Dubiner) basis values and (x, y) gradients on the unit triangle.

    Returns arrays of shape (npts, nmodes) ordered by total degree.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    r = 2.0 * pts[:, 0] - 1.0
    s = 2.0 * pts[:, 1] - 1.0
    a, b = _collapsed_coords(r, s)
    modes = [(i, j) for t in range(k + 1) for i in range(t + 1) for j in [t - i]]
    vals = np.empty((len(pts), len(modes)))
    dr = np.empty_like(vals)
    ds = np.empty_like(vals)
    half1mb = 0.5 * (1.0 - b)
    for col, (i, j) in enumerate(modes):
        fa = _jacobi(a, 0.0, i)
        dfa = _jacobi_deriv(a, 0.0, i)
        gb = _jacobi(b, 2.0 * i + 1.0, j)
        dgb = _jacobi_deriv(b, 2.0 * i + 1.0, j)
        pow_i = half1mb**i
        pow_im1 = half1mb ** (i - 1) if i > 0 else np.zeros_like(b)
        vals[:, col] = fa * gb * pow_i
        dmodedr = dfa * gb * (pow_im1 if i > 0 else np.ones_like(b) * 0.0)
        if i == 0:
            dmodedr = np.zeros_like(b)
        dmodeds = dfa * gb * 0.5 * (1.0 + a) * (pow_im1 if i > 0 else np.zeros_like(b))
        tmp = dgb * pow_i
        if i > 0:
            tmp = tmp - 0.5 * i * gb * pow_im1
        dmodeds = dmodeds + fa * tmp
        dr[:, col] = dmodedr
        ds[:, col] = dmodeds
    # chain rule: r = 2x - 1, s = 2y - 1
    return vals, 2.0 * dr, 2.0 * ds


def lattice_nodes(k):
    """Uniform simplex-lattice nodes of degree k, ordered row by row.

    Index layout: all (i, j) with i + j <= k sorted by (j, i); the
    vertices are indices 0, k and -1.
    """
    return np.array(
        [(i / k, j / k) for j in range(k + 1) for i in range(k + 1 - j)], dtype=float
    )


def lattice_multi_index(k):
    return [(i, j) for j in range(k + 1) for i in range(k + 1 - j)]


def face_trace_indices(k):
    """Node indices of the three edges, each traversed counter-clockwise."""
    idx = {mi: n for n, mi in enumerate(lattice_multi_index(k))}
    f0 = [idx[(i, 0)] for i in range(k + 1)]
    f1 = [idx[(k - j, j)] for j in range(k + 1)]
    f2 = [idx[(0, k - j)] for j in range(k + 1)]
    return [np.array(f, dtype=int) for f in (f0, f1, f2)]


@dataclass(frozen=True)
class BasisTabulation:
    points: np.ndarray
    weights: np.ndarray
    values: np.ndarray  # (npts, nbasis)
    gradients: np.ndarray  # (npts, nbasis, 2)


def simplex_basis(k, points, weights=None):
    """Degree-k triangle Lagrange basis tabulated at the given points."""
    if not 1 <= k <= MAX_DEGREE:
        raise ValueError(f"degree k={k} outside supported range 1..{MAX_DEGREE}")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    nodes = lattice_nodes(k)
    vander, _, _ = _modal_basis(k, nodes)
    vals_m, dx_m, dy_m = _modal_basis(k, pts)
    # Lagrange values: solve V^T c = phi(point) for every point at once.
    coeff = np.linalg.solve(vander.T, np.vstack([vals_m, dx_m, dy_m]).T).T
    npts = len(pts)
    values = coeff[:npts]
    grads = np.stack([coeff[npts : 2 * npts], coeff[2 * npts :]], axis=-1)
    w = np.zeros(npts) if weights is None else np.asarray(weights, dtype=float)
    return BasisTabulation(points=pts, weights=w, values=values, gradients=grads)


def lagrange_1d(k, points):
    """Values and derivatives of the uniform 1D Lagrange basis on [0, 1]."""
    pts = np.asarray(points, dtype=float).ravel()
    nodes = np.linspace(0.0, 1.0, k + 1)
    # Legendre Vandermonde for conditioning.
    deg = np.arange(k + 1)
    vander = np.polynomial.legendre.legvander(2 * nodes - 1, k)
    vals_m = np.polynomial.legendre.legvander(2 * pts - 1, k)
    der_m = np.empty_like(vals_m)
    for d in deg:
        c = np.zeros(k + 1)
        c[d] = 1.0
        der_m[:, d] = 2.0 * np.polynomial.legendre.legval(
            2 * pts - 1, np.polynomial.legendre.legder(c)
        )
    coeff = np.linalg.solve(vander.T, np.vstack([vals_m, der_m]).T).T
    return coeff[: len(pts)], coeff[len(pts) :]


_TRI_TABLE = {
    1: (np.array([[1 / 3, 1 / 3]]), np.array([0.5])),
    2: (
        np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]]),
        np.array([1 / 6, 1 / 6, 1 / 6]),
    ),
}


def _collapsed_triangle_rule(order):
    n = order // 2 + 1
    xu, wu = np.polynomial.legendre.leggauss(n)
    xv, wv = roots_jacobi(n, 1.0, 0.0)
    u = 0.5 * (xu + 1.0)
    v = 0.5 * (xv + 1.0)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = np.column_stack([(uu * (1.0 - vv)).ravel(), vv.ravel()])
    # du contributes 1/2 per Gauss weight; the Jacobi rule carries the
    # (1 - v) area factor and a 1/4 mapping constant.
    w = np.outer(0.5 * wu, 0.25 * wv).ravel()
    return pts, w


def quad_rule(domain, order):
    """Quadrature rule exact for polynomials of total degree <= order."""
    if order < 0:
        raise ValueError("quadrature order must be nonnegative")
    order = max(order, 1)
    if domain == "segment":
        n = order // 2 + 1
        x, w = np.polynomial.legendre.leggauss(n)
        return x, w
    if domain == "triangle":
        if order in _TRI_TABLE:
            return _TRI_TABLE[order]
        return _collapsed_triangle_rule(order)
    raise ValueError(f"unknown quadrature domain {domain!r}")


def segment_rule01(order):
    """Gauss rule on [0, 1]."""
    x, w = quad_rule("segment", order)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass
class ParametricMesh:
    """Uniform 1D finite-element mesh of one parameter interval.

    A degenerate (point) interval is represented by a single node with
    unit quadrature weight, so Galerkin matrices collapse to point
    evaluation of their weights.
    """

    a: float
    b: float
    n_el: int
    k: int
    nodes: np.ndarray = field(init=False)
    quad_x: np.ndarray = field(init=False)
    quad_w: np.ndarray = field(init=False)
    basis_v: np.ndarray = field(init=False)  # (nq_el, k+1)
    basis_d: np.ndarray = field(init=False)
    _layout: tuple = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.b < self.a:
            raise ValueError("empty parameter interval")
        if self.n_el < 1 or self.k < 1:
            raise ValueError("need n_el >= 1 and k >= 1")
        if self.degenerate:
            self.nodes = np.array([self.a])
            self.quad_x = np.array([self.a])
            self.quad_w = np.array([1.0])
            self.basis_v = np.ones((1, 1))
            self.basis_d = np.zeros((1, 1))
            return
        self.nodes = np.linspace(self.a, self.b, self.n_el * self.k + 1)
        xq, wq = segment_rule01(2 * self.k + 2)
        self.quad_x = xq
        self.quad_w = wq
        self.basis_v, self.basis_d = lagrange_1d(self.k, xq)

    @property
    def degenerate(self):
        return self.b == self.a

    @property
    def ndof(self):
        return 1 if self.degenerate else self.n_el * self.k + 1

    def element_dofs(self, e):
        if self.degenerate:
            return np.array([0])
        return np.arange(e * self.k, (e + 1) * self.k + 1)

    @property
    def h(self):
        return 0.0 if self.degenerate else (self.b - self.a) / self.n_el

    def quad_points_weights(self):
        """Global quadrature points/weights over the whole interval."""
        if self.degenerate:
            return self.quad_x.copy(), self.quad_w.copy()
        pts, wts = [], []
        for e in range(self.n_el):
            x0 = self.a + e * self.h
            pts.append(x0 + self.h * self.quad_x)
            wts.append(self.h * self.quad_w)
        return np.concatenate(pts), np.concatenate(wts)

    def _quad_layout(self):
        """Cached global quad points/weights and per-element dof map."""
        if self._layout is None:
            pts, qw = self.quad_points_weights()
            if self.degenerate:
                dofs = np.zeros((1, 1), dtype=int)
            else:
                dofs = (
                    np.arange(self.n_el)[:, None] * self.k
                    + np.arange(self.k + 1)[None, :]
                )
            self._layout = (pts, qw, dofs)
        return self._layout

    def _weight_values(self, weight, pts):
        if weight is None:
            return np.ones_like(pts)
        return np.asarray(weight(pts), dtype=float) * np.ones_like(pts)

    def _func_values(self, f, pts, dofs):
        """Values of a callable or a nodal vector at the global quad points."""
        if callable(f):
            return np.asarray(f(pts), dtype=float) * np.ones_like(pts)
        f = np.asarray(f, dtype=float)
        if self.degenerate:
            return f[[0]].astype(float)
        return np.einsum("qi,ei->eq", self.basis_v, f[dofs]).ravel()

    def matrix(self, weight=None):
        """Galerkin matrix of the weighted mass form (dense; 1D sizes are small)."""
        pts, qw, dofs = self._quad_layout()
        out = np.zeros((self.ndof, self.ndof))
        wq = self._weight_values(weight, pts) * qw
        if self.degenerate:
            out[0, 0] = wq[0]
            return out
        blk = np.einsum(
            "eq,qi,qj->eij", wq.reshape(self.n_el, -1), self.basis_v, self.basis_v
        )
        np.add.at(out, (dofs[:, :, None], dofs[:, None, :]), blk)
        return out

    def vector(self, weight, f):
        """Assemble the vector of the form psi -> integral(psi * weight * f)."""
        pts, qw, dofs = self._quad_layout()
        out = np.zeros(self.ndof)
        wq = self._weight_values(weight, pts) * self._func_values(f, pts, dofs) * qw
        if self.degenerate:
            out[0] = wq[0]
            return out
        np.add.at(
            out, dofs, np.einsum("eq,qi->ei", wq.reshape(self.n_el, -1), self.basis_v)
        )
        return out

    def coupling(self, weight, f, g):
        """integral over the interval of weight * f * g."""
        pts, qw, dofs = self._quad_layout()
        wv = (
            self._weight_values(weight, pts)
            * self._func_values(f, pts, dofs)
            * self._func_values(g, pts, dofs)
        )
        if self.degenerate:
            return float(wv[0])
        return float((wv * qw).sum())

    def eval_at(self, nodal, mu):
        """Evaluate the interpolant of nodal values at points mu."""
        nodal = np.asarray(nodal, dtype=float)
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        if self.degenerate:
            return np.full(mu.shape, nodal[0])
        t = np.clip((mu - self.a) / self.h, 0.0, self.n_el)
        e = np.minimum(t.astype(int), self.n_el - 1)
        loc = t - e
        vals, _ = lagrange_1d(self.k, loc)
        out = np.empty_like(mu)
        for i in range(len(mu)):
            out[i] = vals[i] @ nodal[self.element_dofs(e[i])]
        return out


def interval_mesh(bounds, n_el, k):
    """Uniform ParametricMesh over bounds = (a, b)."""
    a, b = float(bounds[0]), float(bounds[1])
    return ParametricMesh(a=a, b=b, n_el=int(n_el), k=int(k))
