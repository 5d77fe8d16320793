"""Algebra of separated (low-rank) representations.

A separated field is a sum of terms, each the product of one spatial
coefficient factor and one scalar parametric factor per parameter axis.
Mappings, their Jacobians, determinants and adjugates, boundary data and
PGD modes all live in this format, which is what makes every parametric
integral in the solver affine in precomputed spatial matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import permutations

import numpy as np


def _as_callable(spatial):
    if callable(spatial):
        return spatial
    arr = np.asarray(spatial, dtype=float)
    return lambda x, _a=arr: np.broadcast_to(_a, np.shape(x)[:-1] + _a.shape).copy()


@dataclass(frozen=True)
class SepTerm:
    """One summand: spatial(x) * prod_j parametric_j(mu_j)."""

    spatial: object  # callable(x) -> (..., *shape)
    parametric: tuple  # one callable per parameter axis
    gradient: object = None  # callable(x) -> (..., *shape, nsd), optional

    def param_value(self, mu):
        out = 1.0
        for f, m in zip(self.parametric, np.atleast_1d(mu)):
            out = out * float(np.asarray(f(m)))
        return out


@dataclass(frozen=True)
class SeparatedField:
    terms: tuple
    value_shape: tuple  # () scalar, (2,) vector, (2, 2) matrix
    n_params: int
    param_box: tuple = None  # ((a1,b1), ...) optional, enables mu validation
    samples: np.ndarray = None  # optional spatial sample points for pruning

    @property
    def rank(self):
        return len(self.terms)


def sep_build(terms, value_shape, n_params=None, param_box=None, samples=None):
    """Build a SeparatedField, checking term shape consistency."""
    terms = tuple(terms)
    value_shape = tuple(value_shape)
    if n_params is None:
        if not terms and param_box is None:
            raise ValueError("zero-term field needs an explicit n_params or param_box")
        n_params = len(terms[0].parametric) if terms else len(param_box)
    for t in terms:
        if len(t.parametric) != n_params:
            raise ValueError("terms disagree on the number of parametric axes")
        # probe point off the axes so radial factors with 1/r stay finite
        probe = np.asarray(_as_callable(t.spatial)(np.full((1, 2), 0.7390851)))
        if probe.shape[1:] != value_shape:
            raise ValueError(
                f"spatial factor shape {probe.shape[1:]} != value shape {value_shape}"
            )
    if param_box is not None:
        param_box = tuple((float(a), float(b)) for a, b in param_box)
    return SeparatedField(
        terms=terms,
        value_shape=value_shape,
        n_params=n_params,
        param_box=param_box,
        samples=None if samples is None else np.asarray(samples, dtype=float),
    )


def _check_mu(f, mu):
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if len(mu) != f.n_params:
        raise ValueError(f"expected {f.n_params} parameter values, got {len(mu)}")
    if f.param_box is not None:
        for v, (a, b) in zip(mu, f.param_box):
            tol = 1e-12 * max(1.0, abs(a), abs(b))
            if v < a - tol or v > b + tol:
                raise ValueError(f"parameter value {v} outside interval [{a}, {b}]")
    return mu


def sep_eval(f, x, mu):
    """Pointwise value sum_k spatial_k(x) * prod_j parametric_kj(mu_j)."""
    mu = _check_mu(f, mu)
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1] + f.value_shape)
    for t in f.terms:
        out += np.asarray(_as_callable(t.spatial)(x)) * t.param_value(mu)
    return out


def sep_eval_gradient(f, x, mu):
    """Pointwise spatial gradient, index layout (..., *shape, d/dx_b)."""
    mu = _check_mu(f, mu)
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1] + f.value_shape + (2,))
    for t in f.terms:
        if t.gradient is None:
            raise ValueError("term has no gradient; supply one for analytic factors")
        out += np.asarray(t.gradient(x)) * t.param_value(mu)
    return out


def sep_jacobian(mapping):
    """Term-by-term Jacobian of a vector field; J_ab = d(M_a)/d(x_b)."""
    if mapping.value_shape != (2,):
        raise ValueError("sep_jacobian expects a vector (nsd=2) field")
    terms = []
    for t in mapping.terms:
        if t.gradient is None:
            raise ValueError(
                "spatial factor without gradient; analytic terms must supply one"
            )
        terms.append(SepTerm(spatial=t.gradient, parametric=t.parametric))
    return replace(mapping, terms=tuple(terms), value_shape=(2, 2))


def _param_product(fa, fb):
    return lambda m, _a=fa, _b=fb: np.asarray(_a(m)) * np.asarray(_b(m))


def _pair_parametric(ta, tb):
    return tuple(_param_product(fa, fb) for fa, fb in zip(ta.parametric, tb.parametric))


def sep_det(J, prune_tol=1e-13):
    """Separated determinant via the Leibniz formula over term pairs/tuples."""
    if len(J.value_shape) != 2 or J.value_shape[0] != J.value_shape[1]:
        raise ValueError("sep_det expects a square matrix field")
    nsd = J.value_shape[0]
    terms = []
    if nsd == 2:
        n = len(J.terms)
        for a in range(n):
            for b in range(a, n):
                ta, tb = J.terms[a], J.terms[b]
                sa, sb = _as_callable(ta.spatial), _as_callable(tb.spatial)
                if a == b:

                    def spatial(x, _s=sa):
                        v = _s(x)
                        return v[..., 0, 0] * v[..., 1, 1] - v[..., 0, 1] * v[..., 1, 0]

                else:

                    def spatial(x, _sa=sa, _sb=sb):
                        va, vb = _sa(x), _sb(x)
                        return (
                            va[..., 0, 0] * vb[..., 1, 1]
                            + vb[..., 0, 0] * va[..., 1, 1]
                            - va[..., 0, 1] * vb[..., 1, 0]
                            - vb[..., 0, 1] * va[..., 1, 0]
                        )

                terms.append(SepTerm(spatial=spatial, parametric=_pair_parametric(ta, tb)))
    else:
        idx = range(len(J.terms))
        from itertools import product

        for combo in product(idx, repeat=nsd):
            for perm in permutations(range(nsd)):
                sign = _perm_sign(perm)
                factors = [
                    ( _as_callable(J.terms[combo[i]].spatial), i, perm[i]) for i in range(nsd)
                ]

                def spatial(x, _fs=factors, _sign=sign):
                    v = _sign
                    for s, i, j in _fs:
                        v = v * s(x)[..., i, j]
                    return v

                par = J.terms[combo[0]].parametric
                for i in range(1, nsd):
                    par = tuple(
                        _param_product(p, q)
                        for p, q in zip(par, J.terms[combo[i]].parametric)
                    )
                terms.append(SepTerm(spatial=spatial, parametric=par))
    out = replace(J, terms=tuple(terms), value_shape=())
    return sep_prune(out, prune_tol)


def _perm_sign(perm):
    sign = 1
    perm = list(perm)
    for i in range(len(perm)):
        for j in range(i + 1, len(perm)):
            if perm[i] > perm[j]:
                sign = -sign
    return sign


def sep_adj(J, prune_tol=1e-13):
    """Separated adjugate via the Faddeev-LeVerrier recursion.

    Written dimension-generically: adj(A) = (-1)^(n-1) (B_{n-1} - c_{n-1} I)
    with B_1 = A, c_k = tr(B_k)/k, B_{k+1} = A (B_k - c_k I).  For nsd=2
    this is tr(J) I - J and the rank stays at the rank of J.
    """
    if len(J.value_shape) != 2 or J.value_shape[0] != J.value_shape[1]:
        raise ValueError("sep_adj expects a square matrix field")
    nsd = J.value_shape[0]
    B = J
    c = _sep_trace(J)
    for k in range(2, nsd):
        B = _sep_matmul(J, _sep_shift(B, c))
        c = _sep_scale_field(_sep_trace(B), 1.0 / k)
    out = _sep_scale_field(_sep_shift(B, c), float((-1) ** (nsd - 1)))
    return sep_prune(out, prune_tol)


def _sep_trace(M):
    terms = []
    for t in M.terms:
        s = _as_callable(t.spatial)

        def spatial(x, _s=s):
            return np.trace(_s(x), axis1=-2, axis2=-1)

        terms.append(SepTerm(spatial=spatial, parametric=t.parametric))
    return replace(M, terms=tuple(terms), value_shape=())


def _sep_shift(B, c):
    """B - c*I as a separated matrix field (c scalar separated field)."""
    nsd = B.value_shape[0]
    eye = np.eye(nsd)
    terms = list(B.terms)
    for t in c.terms:
        s = _as_callable(t.spatial)

        def spatial(x, _s=s):
            return -np.asarray(_s(x))[..., None, None] * eye

        terms.append(SepTerm(spatial=spatial, parametric=t.parametric))
    return replace(B, terms=tuple(terms))


def _sep_matmul(A, B):
    terms = []
    for ta in A.terms:
        for tb in B.terms:
            sa, sb = _as_callable(ta.spatial), _as_callable(tb.spatial)

            def spatial(x, _a=sa, _b=sb):
                return np.einsum("...ij,...jk->...ik", _a(x), _b(x))

            terms.append(SepTerm(spatial=spatial, parametric=_pair_parametric(ta, tb)))
    return replace(A, terms=tuple(terms))


def _sep_scale_field(f, factor):
    terms = []
    for t in f.terms:
        s = _as_callable(t.spatial)
        terms.append(
            SepTerm(
                spatial=lambda x, _s=s, _f=factor: _f * np.asarray(_s(x)),
                parametric=t.parametric,
                gradient=None
                if t.gradient is None
                else (lambda x, _g=t.gradient, _f=factor: _f * np.asarray(_g(x))),
            )
        )
    return replace(f, terms=tuple(terms))


def _axis_samples(box):
    out = []
    for a, b in box:
        if b == a:
            out.append(np.array([a]))
        else:
            out.append(np.linspace(a, b, 17))
    return out


def _param_signature(term, axis_samples):
    sig = [np.asarray([float(f(m)) for m in s]) for f, s in zip(term.parametric, axis_samples)]
    return sig


def sep_prune(f, tol, samples=None):
    """Merge proportional-parametric terms and drop negligible ones.

    Proportionality of the parametric tuples is decided numerically on a
    fixed per-axis sample grid; term amplitudes combine the max spatial
    magnitude at the sample points with the max parametric magnitudes.
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    if samples is None:
        samples = f.samples
    if f.param_box is not None:
        axis_samples = _axis_samples(f.param_box)
    else:
        axis_samples = [np.linspace(0.0, 1.0, 17)] * f.n_params

    groups = []  # (representative signatures, spatial scale factors, terms)
    for t in f.terms:
        sig = _param_signature(t, axis_samples)
        merged = False
        for g in groups:
            ratio = 1.0
            match = True
            for sa, sb in zip(g["sig"], sig):
                na, nb = np.max(np.abs(sa)), np.max(np.abs(sb))
                if na == 0.0 or nb == 0.0:
                    match = na == nb == 0.0
                    if not match:
                        break
                    continue
                # proportional along this axis?
                k = sb[np.argmax(np.abs(sb))] / sa[np.argmax(np.abs(sb))] if sa[np.argmax(np.abs(sb))] != 0 else None
                if k is None or not np.allclose(sb, k * sa, rtol=1e-13, atol=1e-13 * nb):
                    match = False
                    break
                ratio *= k
            if match:
                g["members"].append((t, ratio))
                merged = True
                break
        if not merged:
            groups.append({"sig": sig, "members": [(t, 1.0)]})

    def combine(members):
        if len(members) == 1 and members[0][1] == 1.0:
            return members[0][0]
        parts = [(_as_callable(t.spatial), r) for t, r in members]
        grads = [(t.gradient, r) for t, r in members]

        def spatial(x, _p=parts):
            return sum(r * np.asarray(s(x)) for s, r in _p)

        gradient = None
        if all(g is not None for g, _ in grads):

            def gradient(x, _g=grads):
                return sum(r * np.asarray(g(x)) for g, r in _g)

        return SepTerm(spatial=spatial, parametric=members[0][0].parametric, gradient=gradient)

    combined = []
    for g in groups:
        term = combine(g["members"])
        pmax = np.prod([np.max(np.abs(np.asarray([float(p(m)) for m in s])))
                        for p, s in zip(term.parametric, axis_samples)]) if term.parametric else 1.0
        if samples is not None:
            smax = float(np.max(np.abs(np.asarray(_as_callable(term.spatial)(samples)))))
        else:
            smax = None
        combined.append((term, pmax, smax))

    if any(s is not None for _, _, s in combined):
        amps = [(p * s if s is not None else np.inf) for _, p, s in combined]
        amax = max(amps) if amps else 0.0
        if amax > 0 and np.isfinite(amax):
            combined = [c for c, a in zip(combined, amps) if a > tol * amax]
        else:
            combined = [c for c, a in zip(combined, amps) if a > 0]
    return replace(f, terms=tuple(t for t, _, _ in combined))
