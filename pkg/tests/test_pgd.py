"""Oracle tests for the greedy separated-representation solver.

Key oracles: a degenerate (point) parameter interval must reproduce the
full-order solve exactly in one mode; problems whose data is a low-rank
sum of separable terms must be captured within that many modes; the 1D
parametric couplings must match independent dense quadrature.
"""

import dataclasses

import numpy as np
import pytest

from stokesrom import hdg, pgd
from stokesrom.cases import couette_case
from stokesrom.hdg import DataTerm, ProblemDefinition, StokesBCs
from stokesrom.mesh import square_mesh
from stokesrom.shape import interval_mesh

from test_hdg import NU, dirichlet_problem, poly_solution

MU_ID = (lambda m: np.asarray(m, dtype=float),)


def rhs_norm(rhs):
    return float(np.sqrt(np.sum(rhs.loc**2) + np.sum(rhs.glu**2) + np.sum(rhs.grho**2)))


def fields_close(a, b, rtol):
    for var in pgd.VARS:
        x, y = pgd.get_var(a, var), pgd.get_var(b, var)
        scale = max(np.abs(y).max(), 1e-14)
        assert np.abs(x - y).max() <= rtol * scale, var


# ---------------------------------------------------------------------------
# 1D parametric building blocks


def test_parametric_matrices_oracle():
    pm = interval_mesh((0.0, 2.0), 4, 2)
    ath, avt, a = pgd.parametric_matrices(pm, [lambda m: m], [lambda m: m**2], )
    ones = np.ones(pm.ndof)
    assert ones @ (a @ ones) == pytest.approx(2.0, abs=1e-13)  # |I|
    assert ones @ (ath[0] @ ones) == pytest.approx(2.0, abs=1e-13)  # int mu
    assert ones @ (avt[0] @ ones) == pytest.approx(8.0 / 3.0, abs=1e-13)
    # vector of f(mu) = mu against the constant test function
    assert pm.vector(None, lambda m: m).sum() == pytest.approx(2.0, abs=1e-13)


def test_beta_constants_match_dense_quadrature():
    prob = couette_case(n_r=1, n_phi=6, k=2)
    pre = hdg.Precompute(prob)
    pm = interval_mesh(prob.param_box[0], 5, 2)
    rng = np.random.default_rng(3)
    psi = rng.standard_normal(pm.ndof)
    c = pgd.beta_constants(pre, [pm], [psi])

    # independent per-element Gauss quadrature of int w(mu) psi(mu)^2
    xg, wg = np.polynomial.legendre.leggauss(12)

    def dense(w):
        total = 0.0
        for e in range(pm.n_el):
            x0 = pm.a + e * pm.h
            pts = x0 + 0.5 * pm.h * (xg + 1.0)
            vals = pm.eval_at(psi, pts) ** 2
            wv = np.ones_like(pts) if w is None else np.asarray(w(pts), dtype=float)
            total += 0.5 * pm.h * np.sum(wg * wv * vals)
        return total

    for kd in range(pre.nkd):
        want = dense(pre.theta_factor(kd)[0])
        assert c.theta[kd] == pytest.approx(want, rel=1e-12, abs=1e-13)
    for ka in range(pre.nka):
        want = dense(pre.vartheta_factor(ka)[0])
        assert c.vartheta[ka] == pytest.approx(want, rel=1e-12, abs=1e-13)
    assert c.plain == pytest.approx(dense(None), rel=1e-12)


def test_mode_cache_sums_to_full_application():
    prob = couette_case(n_r=1, n_phi=6, k=2)
    pre = hdg.Precompute(prob)
    pm = interval_mesh(prob.param_box[0], 3, 1)
    rng = np.random.default_rng(7)
    fields = hdg.FieldSet(
        FL=rng.standard_normal((pre.ne, 2, 2, pre.n)),
        fu=rng.standard_normal((pre.ne, 2, pre.n)),
        fp=rng.standard_normal((pre.ne, pre.n)),
        fhat=rng.standard_normal(pre.nh),
        frho=rng.standard_normal(pre.ne),
    )
    mode = pgd.make_mode(pre, fields, [rng.standard_normal(pm.ndof)])
    full = hdg.apply_components(pre, mode.scaled_fields(pre))
    for comp, want in full.items():
        got_loc = np.zeros_like(want.loc)
        got_glu = np.zeros_like(want.glu)
        got_grho = np.zeros_like(want.grho)
        for var in pgd.VARS:
            piece = mode.applied[var].get(comp)
            if piece is not None:
                got_loc += piece.loc
                got_glu += piece.glu
                got_grho += piece.grho
        assert np.allclose(got_loc, want.loc, atol=1e-12)
        assert np.allclose(got_glu, want.glu, atol=1e-12)
        assert np.allclose(got_grho, want.grho, atol=1e-12)


# ---------------------------------------------------------------------------
# exact-capture oracles


def test_degenerate_interval_reproduces_full_order():
    mu0 = 2.0
    prob = dataclasses.replace(couette_case(n_r=2, n_phi=8, k=2),
                               param_box=((mu0, mu0),))
    pre, sol = pgd.solve_pgd(prob, (1, 1), pgd.PGDConfig(max_modes=3))
    assert len(sol.modes) == 1
    full = hdg.solve_full_order(pre, [mu0])
    ev = pgd.evaluate_solution(pre, sol, [mu0])
    fields_close(ev, full, 1e-10)


def parametric_square_problem(rank):
    """Square-domain problem whose exact solution is a rank-`rank` sum of
    polynomial fields with factors 1 and mu."""
    box = ((1.0, 3.0),)
    s1 = poly_solution("dirichlet")
    s2 = poly_solution("slip")
    tags = {s: "DIRICHLET:wall" for s in ("u0", "u1", "v0", "v1")}
    mesh = square_mesh(3, 3, tags=tags)
    one = (lambda m: np.ones_like(np.asarray(m, dtype=float)),)
    dterms = [DataTerm(spatial=s1["u"], parametric=MU_ID)]
    sterms = [DataTerm(spatial=s1["source"], parametric=MU_ID)]
    if rank == 2:
        dterms.append(DataTerm(spatial=s2["u"], parametric=one))
        sterms.append(DataTerm(spatial=s2["source"], parametric=one))
    bcs = StokesBCs(dirichlet={"wall": dterms}, source=sterms)
    return ProblemDefinition(
        mesh=mesh, bcs=bcs, param_box=box, axis_names=("mu1",), nu=NU
    )


def test_rank_one_data_captured_in_one_mode():
    prob = parametric_square_problem(rank=1)
    pre, sol = pgd.solve_pgd(prob, (4, 2), pgd.PGDConfig(max_modes=4))
    assert len(sol.modes) <= 2
    mu = [1.7]
    full = hdg.solve_full_order(pre, mu)
    ev = pgd.evaluate_solution(pre, sol, mu, n_modes=1)
    fields_close(ev, full, 1e-8)


def test_rank_two_data_captured_in_two_modes():
    prob = parametric_square_problem(rank=2)
    pre, sol = pgd.solve_pgd(prob, (4, 2), pgd.PGDConfig(max_modes=6, eta_star=1e-8))
    mu = [2.3]
    full = hdg.solve_full_order(pre, mu)
    ev = pgd.evaluate_solution(pre, sol, mu, n_modes=min(3, len(sol.modes)))
    fields_close(ev, full, 1e-5)
    amps = pgd.mode_amplitudes(sol)["uhat"]
    assert amps[0] == 1.0
    if len(amps) > 2:
        assert amps[2] < 1e-5


def test_spatial_residual_vanishes_for_converged_modes():
    # for the rank-1 problem the residual rhs after mode 1 must be zero
    prob = parametric_square_problem(rank=1)
    pre, sol = pgd.solve_pgd(prob, (4, 2), pgd.PGDConfig(max_modes=2))
    pm = sol.pmeshes
    psi = [np.ones(p.ndof) for p in pm]
    r0 = rhs_norm(pgd.spatial_residual_rhs(pre, pm, psi, []))
    r1 = rhs_norm(pgd.spatial_residual_rhs(pre, pm, psi, sol.modes[:1]))
    assert r1 <= 1e-8 * r0


# ---------------------------------------------------------------------------
# compression


def random_modes(pre, pm, rng, count, duplicate=False):
    modes = []
    for i in range(count):
        if duplicate and i > 0:
            src = modes[0]
            mode = pgd.Mode(
                fields=src.fields.copy(),
                sigma=dict(src.sigma),
                psi={v: [a.copy() for a in src.psi[v]] for v in pgd.VARS},
            )
            mode.build_cache(pre)
        else:
            fields = hdg.FieldSet(
                FL=rng.standard_normal((pre.ne, 2, 2, pre.n)),
                fu=rng.standard_normal((pre.ne, 2, pre.n)),
                fp=rng.standard_normal((pre.ne, pre.n)),
                fhat=rng.standard_normal(pre.nh),
                frho=rng.standard_normal(pre.ne),
            )
            mode = pgd.make_mode(pre, fields, [rng.standard_normal(pm.ndof)])
        modes.append(mode)
    return modes


def compression_setup():
    prob, _ = dirichlet_problem(n=2, k=1)
    pre = hdg.Precompute(prob)
    pm = interval_mesh((0.0, 1.0), 3, 2)
    return pre, pm


def test_compression_collapses_duplicate_modes():
    pre, pm = compression_setup()
    rng = np.random.default_rng(11)
    modes = random_modes(pre, pm, rng, 3, duplicate=True)
    new = pgd.pgd_compress(pre, [pm], modes, 1e-9)
    assert len(new) == 1
    sol_a = pgd.PGDSolution(modes=modes, pmeshes=[pm])
    sol_b = pgd.PGDSolution(modes=new, pmeshes=[pm])
    for mu in ([0.13], [0.5], [0.97]):
        fields_close(
            pgd.evaluate_solution(pre, sol_b, mu),
            pgd.evaluate_solution(pre, sol_a, mu),
            1e-8,
        )


def test_compression_preserves_generic_rank():
    pre, pm = compression_setup()
    rng = np.random.default_rng(13)
    modes = random_modes(pre, pm, rng, 3)
    new = pgd.pgd_compress(pre, [pm], modes, 1e-10)
    assert len(new) <= 3
    sol_a = pgd.PGDSolution(modes=modes, pmeshes=[pm])
    sol_b = pgd.PGDSolution(modes=new, pmeshes=[pm])
    for mu in ([0.2], [0.77]):
        fields_close(
            pgd.evaluate_solution(pre, sol_b, mu),
            pgd.evaluate_solution(pre, sol_a, mu),
            1e-6,
        )


# ---------------------------------------------------------------------------
# geometry-parametrised benchmark


def test_couette_enrichment_converges():
    prob = couette_case(n_r=2, n_phi=8, k=2)
    pre, sol = pgd.solve_pgd(
        prob, (8, 2), pgd.PGDConfig(eta_star=1e-3, max_modes=8)
    )
    assert 2 <= len(sol.modes) <= 8
    err1 = pgd.pgd_l2_error(pre, sol, n_modes=1)
    errm = pgd.pgd_l2_error(pre, sol)
    assert errm["u"] < err1["u"]
    assert errm["u"] < 0.02
    # the separated solution approaches the full-order accuracy
    ref = pgd.full_order_l2_error(pre)
    assert errm["u"] < max(5.0 * ref["u"], 0.02)
    amps = pgd.mode_amplitudes(sol)["uhat"]
    assert amps[0] == 1.0 and amps[-1] < 0.05
