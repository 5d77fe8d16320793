"""Oracle tests for the separated-representation algebra.

The dense oracles are plain numpy det/adj/finite differences applied to
pointwise evaluations of the separated fields.
"""

import numpy as np
import pytest

from stokesrom.sepalg import (
    SepTerm,
    sep_adj,
    sep_build,
    sep_det,
    sep_eval,
    sep_jacobian,
    sep_prune,
)

R_OUT = 5.0
BOX = ((1.0, 3.0),)


def couette_mapping():
    """Two-term radial mapping of an annulus 1 <= r <= R_OUT."""

    def m1(x):
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        return x / r

    def g1(x):
        r = np.linalg.norm(x, axis=-1)
        out = np.empty(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = x[..., 1] ** 2
        out[..., 0, 1] = -x[..., 0] * x[..., 1]
        out[..., 1, 0] = -x[..., 0] * x[..., 1]
        out[..., 1, 1] = x[..., 0] ** 2
        return out / r[..., None, None] ** 3

    def m2(x):
        return x.copy()

    def g2(x):
        return np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy()

    t1 = SepTerm(spatial=m1, gradient=g1, parametric=(lambda m: R_OUT * (m - 1) / (R_OUT - 1),))
    t2 = SepTerm(spatial=m2, gradient=g2, parametric=(lambda m: (R_OUT - m) / (R_OUT - 1),))
    return sep_build([t1, t2], (2,), param_box=BOX)


def annulus_points(rng, n):
    r = 1 + 4 * rng.random(n)
    phi = 2 * np.pi * rng.random(n)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi)])


def random_poly_mapping(rng, rank, n_params=1):
    terms = []
    for _ in range(rank):
        c = rng.standard_normal((2, 3))
        q = rng.standard_normal((2, 2, 2)) * 0.3

        def spatial(x, _c=c, _q=q):
            out = np.empty(x.shape[:-1] + (2,))
            for a in range(2):
                out[..., a] = (
                    _c[a, 0]
                    + _c[a, 1] * x[..., 0]
                    + _c[a, 2] * x[..., 1]
                    + _q[a, 0, 0] * x[..., 0] ** 2
                    + (_q[a, 0, 1] + _q[a, 1, 0]) * x[..., 0] * x[..., 1]
                    + _q[a, 1, 1] * x[..., 1] ** 2
                )
            return out

        def gradient(x, _c=c, _q=q):
            out = np.empty(x.shape[:-1] + (2, 2))
            for a in range(2):
                out[..., a, 0] = (
                    _c[a, 1] + 2 * _q[a, 0, 0] * x[..., 0] + (_q[a, 0, 1] + _q[a, 1, 0]) * x[..., 1]
                )
                out[..., a, 1] = (
                    _c[a, 2] + (_q[a, 0, 1] + _q[a, 1, 0]) * x[..., 0] + 2 * _q[a, 1, 1] * x[..., 1]
                )
            return out

        coef = rng.standard_normal(3)
        par = tuple(
            (lambda m, _p=coef: _p[0] + _p[1] * m + _p[2] * m * m) for _ in range(n_params)
        )
        terms.append(SepTerm(spatial=spatial, gradient=gradient, parametric=par))
    return sep_build(terms, (2,), param_box=((0.0, 1.0),) * n_params)


def test_identity_mapping_roundtrip():
    f = sep_build(
        [SepTerm(spatial=lambda x: x.copy(), parametric=(lambda m: 1.0,),
                 gradient=lambda x: np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy())],
        (2,),
        param_box=BOX,
    )
    x = np.array([[0.3, 0.8], [2.0, -1.0]])
    assert np.allclose(sep_eval(f, x, [2.0]), x)
    J = sep_jacobian(f)
    assert np.allclose(sep_eval(J, x, [1.5]), np.eye(2))


def test_zero_field():
    f = sep_build([], (2,), param_box=BOX)
    assert np.allclose(sep_eval(f, np.array([[1.0, 0.0]]), [2.0]), 0.0)


def test_couette_mapping_values():
    f = couette_mapping()
    x = np.array([[1.0, 0.0], [0.0, -1.0]])
    # mu = 1 is the identity
    assert np.allclose(sep_eval(f, x, [1.0]), x, atol=1e-14)
    # the inner circle r=1 maps to radius mu
    assert np.allclose(sep_eval(f, x, [3.0]), 3.0 * x, atol=1e-12)


def test_mu_outside_box_rejected():
    f = couette_mapping()
    with pytest.raises(ValueError):
        sep_eval(f, np.array([[1.0, 0.0]]), [4.0])


def test_couette_jacobian_closed_form():
    f = couette_mapping()
    J = sep_jacobian(f)
    x = np.array([[1.3, -0.4]])
    r3 = np.linalg.norm(x) ** 3
    expect = np.array(
        [[x[0, 1] ** 2, -x[0, 0] * x[0, 1]], [-x[0, 0] * x[0, 1], x[0, 0] ** 2]]
    ) / r3
    # the first term's parametric factor at mu=3 is R(mu-1)/(R-1)=2.5
    got = sep_eval(J, x, [3.0])[0]
    lam1 = R_OUT * 2 / (R_OUT - 1)
    lam2 = (R_OUT - 3) / (R_OUT - 1)
    assert np.allclose(got, lam1 * expect + lam2 * np.eye(2), atol=1e-13)


def test_jacobian_finite_difference_oracle():
    rng = np.random.default_rng(42)
    f = random_poly_mapping(rng, 3)
    J = sep_jacobian(f)
    pts = rng.standard_normal((20, 2))
    mu = [0.37]
    h = 1e-6
    jv = sep_eval(J, pts, mu)
    for b in range(2):
        dp, dm = pts.copy(), pts.copy()
        dp[:, b] += h
        dm[:, b] -= h
        fd = (sep_eval(f, dp, mu) - sep_eval(f, dm, mu)) / (2 * h)
        assert np.max(np.abs(jv[:, :, b] - fd)) < 1e-6


def test_det_adj_pointwise_oracles():
    rng = np.random.default_rng(2024)
    fields = [couette_mapping(), random_poly_mapping(rng, 3)]
    for fi, f in enumerate(fields):
        J = sep_jacobian(f)
        D = sep_det(J)
        A = sep_adj(J)
        for _ in range(100):
            if fi == 0:
                x = annulus_points(rng, 1)
                mu = np.array([1 + 2 * rng.random()])
            else:
                x = rng.standard_normal((1, 2))
                mu = rng.random(1)
            Jv = sep_eval(J, x, mu)[0]
            Dv = sep_eval(D, x, mu)[0]
            Av = sep_eval(A, x, mu)[0]
            scale = max(1.0, np.abs(Jv).max() ** 2)
            assert abs(Dv - np.linalg.det(Jv)) < 1e-12 * scale
            assert np.max(np.abs(Av @ Jv - Dv * np.eye(2))) < 1e-12 * scale


def test_det_identity_single_term():
    f = sep_build(
        [SepTerm(spatial=lambda x: np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy(),
                 parametric=(lambda m: 1.0,))],
        (2, 2),
        param_box=BOX,
    )
    d = sep_det(f)
    assert d.rank == 1
    assert np.allclose(sep_eval(d, np.array([[0.2, 0.1]]), [2.0]), 1.0)


def test_adj_constant_diag():
    f = sep_build(
        [SepTerm(spatial=lambda x: np.broadcast_to(np.diag([2.0, 3.0]), x.shape[:-1] + (2, 2)).copy(),
                 parametric=(lambda m: 1.0,))],
        (2, 2),
        param_box=BOX,
    )
    a = sep_adj(f)
    assert np.allclose(sep_eval(a, np.array([[0.0, 0.0]]), [1.0])[0], np.diag([3.0, 2.0]))


def test_rank_bounds():
    rng = np.random.default_rng(5)
    for n_m in (2, 3, 4):
        f = random_poly_mapping(rng, n_m)
        J = sep_jacobian(f)
        assert sep_det(J).rank <= n_m * (n_m + 1) // 2
        assert sep_adj(J).rank <= n_m


def test_prune_merges_identical_terms():
    s = lambda x: x[..., 0] * 0 + 1.0
    t1 = SepTerm(spatial=s, parametric=(lambda m: m,))
    t2 = SepTerm(spatial=s, parametric=(lambda m: m,))
    f = sep_build([t1, t2], (), param_box=BOX)
    g = sep_prune(f, 0.0)
    assert g.rank == 1
    x = np.array([[1.0, 1.0]])
    assert np.allclose(sep_eval(g, x, [2.0]), sep_eval(f, x, [2.0]))


def test_prune_drops_zero_spatial():
    t1 = SepTerm(spatial=lambda x: np.ones(x.shape[:-1]), parametric=(lambda m: 1.0,))
    t0 = SepTerm(spatial=lambda x: np.zeros(x.shape[:-1]), parametric=(lambda m: m,))
    f = sep_build([t1, t0], (), param_box=BOX)
    g = sep_prune(f, 1e-13, samples=np.array([[1.0, 0.2], [2.0, 0.5]]))
    assert g.rank == 1


def test_prune_preserves_couette_det():
    rng = np.random.default_rng(11)
    J = sep_jacobian(couette_mapping())
    D = sep_det(J)
    Dp = sep_prune(D, 0.0, samples=annulus_points(rng, 30))
    for _ in range(20):
        x = annulus_points(rng, 1)
        mu = np.array([1 + 2 * rng.random()])
        assert abs(sep_eval(D, x, mu)[0] - sep_eval(Dp, x, mu)[0]) < 1e-14


def test_linearity_of_eval():
    rng = np.random.default_rng(9)
    f = random_poly_mapping(rng, 2)
    g = random_poly_mapping(rng, 3)
    combo = sep_build(
        tuple(f.terms) + tuple(g.terms), (2,), param_box=f.param_box
    )
    pts = rng.standard_normal((10, 2))
    mu = rng.random(1)
    assert np.allclose(
        sep_eval(combo, pts, mu), sep_eval(f, pts, mu) + sep_eval(g, pts, mu), atol=1e-12
    )


def test_shape_mismatch_rejected():
    t_vec = SepTerm(spatial=lambda x: x.copy(), parametric=(lambda m: 1.0,))
    with pytest.raises(ValueError):
        sep_build([t_vec], (), param_box=BOX)


def test_jacobian_without_gradient_errors():
    f = sep_build(
        [SepTerm(spatial=lambda x: x.copy(), parametric=(lambda m: 1.0,))],
        (2,),
        param_box=BOX,
    )
    with pytest.raises(ValueError):
        sep_jacobian(f)
