"""Tests of the built-in cases: Couette (analytic oracle) and the
channel-with-obstacle demo (geometry and physics sanity oracles)."""

import numpy as np
import pytest

from stokesrom import hdg, sepalg
from stokesrom.cases import (
    CHANNEL_A,
    CHANNEL_BOX,
    CHANNEL_DR,
    CHANNEL_R_INT,
    CHANNEL_R_REF,
    channel_cylinder_case,
    channel_cylinder_mesh,
    couette_case,
    couette_dirichlet_separated,
)
from stokesrom.mesh import build_skeleton


# ---------------------------------------------------------------------------
# Couette


def test_couette_mapping_moves_inner_circle_to_radius_mu():
    prob = couette_case(n_r=1, n_phi=4, k=1)
    phi = np.linspace(0.0, 2 * np.pi, 17)
    pts = np.column_stack([np.cos(phi), np.sin(phi)])  # reference r = 1
    for mu in (1.0, 1.7, 3.0):
        mapped = sepalg.sep_eval(prob.mapping, pts, [mu])
        assert np.allclose(np.linalg.norm(mapped, axis=-1), mu, atol=1e-12)
    # outer circle is fixed
    mapped = sepalg.sep_eval(prob.mapping, 5.0 * pts, [2.2])
    assert np.allclose(np.linalg.norm(mapped, axis=-1), 5.0, atol=1e-12)


def test_couette_separated_dirichlet_factor():
    data = couette_dirichlet_separated()
    lam = data["inner"][0].parametric[0]
    assert float(lam(1.0)) == pytest.approx(1.0)
    assert float(lam(3.0)) / float(lam(1.0)) == pytest.approx(3.0)
    # spatial part is the unit tangential field
    x = np.array([[0.0, 1.0], [1.0, 0.0]])
    g = data["inner"][0].spatial(x)
    assert np.allclose(g, [[-1.0, 0.0], [0.0, 1.0]], atol=1e-14)


def test_couette_invalid_radii_rejected():
    with pytest.raises(ValueError):
        couette_case(interval=(1.0, 6.0))
    with pytest.raises(ValueError):
        couette_case(interval=(0.5, 2.0))


def test_couette_full_order_accuracy_and_rate():
    mu = [2.0]
    errs = []
    for n_r, n_phi in ((2, 8), (4, 16)):
        prob = couette_case(n_r=n_r, n_phi=n_phi, k=2)
        pre = hdg.Precompute(prob)
        fields = hdg.solve_full_order(pre, mu)
        errs.append(hdg.l2_errors(pre, fields, mu)["u"])
    assert errs[0] < 2e-2
    rate = np.log2(errs[0] / errs[1])
    assert rate > 2.7  # k + 1 expected for k = 2


def test_couette_exact_boundary_values():
    from stokesrom.cases import couette_exact

    exact = couette_exact()
    mu = 2.0
    x = np.array([[mu, 0.0]])  # deformed inner wall
    u = exact(x, [mu])["u"][0]
    assert np.allclose(u, [0.0, mu], atol=1e-12)  # v_phi = Omega_in * mu
    x = np.array([[5.0, 0.0]])
    assert np.allclose(exact(x, [mu])["u"][0], 0.0, atol=1e-12)


# ---------------------------------------------------------------------------
# channel with obstacle


def channel_problem():
    if not hasattr(channel_problem, "_cache"):
        prob = channel_cylinder_case()
        channel_problem._cache = (prob, hdg.Precompute(prob))
    return channel_problem._cache


def test_channel_mesh_conforming():
    mesh = channel_cylinder_mesh()
    sk = build_skeleton(mesh)  # raises on dangling/duplicated faces
    assert set(mesh.tag_names()) == {
        "obstacle", "wall", "inflow", "outflow", "symmetry"
    }
    # obstacle edge nodes sit on the reference circle
    from stokesrom.shape import face_trace_indices

    tr = face_trace_indices(mesh.degree)
    for e, lf, tag in mesh.boundary_faces:
        if tag == "DIRICHLET:obstacle":
            r = np.linalg.norm(mesh.element_nodes[e][tr[lf]], axis=1)
            assert np.allclose(r, CHANNEL_R_REF, atol=1e-12)
        if tag == "SLIP:symmetry":
            y = mesh.element_nodes[e][tr[lf]][:, 1]
            assert np.allclose(y, 0.0, atol=1e-12)


def test_channel_identity_at_reference_parameters():
    prob, pre = channel_problem()
    pts = pre.xg.reshape(-1, 2)
    mapped = sepalg.sep_eval(prob.mapping, pts, [0.0, 0.0])
    assert np.allclose(mapped, pts, atol=1e-13)


def test_channel_jacobian_positive_on_parameter_grid():
    prob, pre = channel_problem()
    (a1, b1), (a2, b2) = CHANNEL_BOX
    worst = np.inf
    for m1 in np.linspace(a1, b1, 21):
        for m2 in np.linspace(a2, b2, 21):
            detv = sum(
                pre.Dvals[kd]
                * np.prod([float(f(m)) for f, m in zip(pre.theta_factor(kd), (m1, m2))])
                for kd in range(pre.nkd)
            )
            worst = min(worst, float(np.min(detv)))
    assert worst > 0.0


def test_channel_obstacle_radius_scales_with_mu1():
    prob, _ = channel_problem()
    phi = np.linspace(0.0, np.pi, 9)
    pts = CHANNEL_R_REF * np.column_stack([np.cos(phi), np.sin(phi)])
    for m1 in (-1.0, 0.4, 1.0):
        mapped = sepalg.sep_eval(prob.mapping, pts, [m1, 0.0])
        want = CHANNEL_R_REF + CHANNEL_DR * m1
        assert np.allclose(np.linalg.norm(mapped, axis=-1), want, atol=1e-12)
    # the morph vanishes on and beyond the interface circle
    outer = CHANNEL_R_INT * np.column_stack([np.cos(phi), np.sin(phi)])
    mapped = sepalg.sep_eval(prob.mapping, outer, [1.0, 0.0])
    assert np.allclose(mapped, outer, atol=1e-13)


def test_channel_slip_frame_preserved():
    # the symmetry wall stays on y = 0 and its mapped normal stays
    # vertical for all parameters
    prob, pre = channel_problem()
    rng = np.random.default_rng(5)
    for _ in range(5):
        mu = [rng.uniform(*CHANNEL_BOX[0]), rng.uniform(*CHANNEL_BOX[1])]
        vt = [
            np.prod([float(fp(m)) for fp, m in zip(t.parametric, mu)])
            for t in pre.adj_terms
        ]
        for e, f in np.argwhere(pre.slip_mask):
            mapped = hdg.deformed_points(pre, pre.face_x[f][e], mu)
            assert np.abs(mapped[:, 1]).max() < 1e-12
            w = sum(v * pre.face_w_adj[ka][f][e] for ka, v in enumerate(vt))
            assert np.abs(w[:, 0]).max() < 1e-12 * np.abs(w[:, 1]).max()


def test_channel_reference_flow_conserves_mass():
    prob, pre = channel_problem()
    fields = hdg.solve_full_order(pre, [0.0, 0.0])
    # inflow volume flux of the parabolic profile over [0, 1] is 2/3;
    # integrate u.n over the outflow using the element traces
    flux = 0.0
    for tag, faces in pre.neu_faces.items():
        for e, f, _fid in faces:
            # outflow boundary is x = L with outward normal (1, 0)
            uq = np.einsum("qI,jI->qj", pre.Nf[f], fields.fu[e])
            flux += np.sum(pre.wface[f][e] * uq[:, 0])
    assert flux == pytest.approx(2.0 / 3.0, rel=1e-3)


def test_channel_force_drag_positive_lift_sane():
    prob, pre = channel_problem()
    fields = hdg.solve_full_order(pre, [0.0, 0.0])
    force = hdg.boundary_force(pre, fields, "obstacle", [0.0, 0.0])
    # the integral is the traction on the fluid side, so a flow pushing
    # the obstacle downstream gives a negative streamwise component
    assert force[0] < 0.0
    assert abs(force[1]) < 100.0 * abs(force[0])
