"""Built-in benchmark and demo problem definitions.

Each case couples a reference mesh, a separated geometric mapping and
separated boundary/source data into a ProblemDefinition.
"""

from __future__ import annotations

import numpy as np

from .hdg import DataTerm, ProblemDefinition, StokesBCs
from .mesh import _structured_region, annulus_mesh, merge_mesh_parts
from .sepalg import SepTerm, sep_build

# ---------------------------------------------------------------------------
# Couette flow between concentric cylinders; the inner radius is the
# parameter.

COUETTE_R_OUT = 5.0
COUETTE_BOX = ((1.0, 3.0),)


def _radial_blend_mapping(r_out, box):
    """x -> psi1(mu) x/r + psi2(mu) x, mapping the reference annulus
    [1, r_out] onto [mu, r_out]: affine in r, identity at the outer
    circle, radius mu at the inner circle."""

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

    return sep_build(
        [
            SepTerm(spatial=m1, gradient=g1,
                    parametric=(lambda m: r_out * (np.asarray(m, dtype=float) - 1.0) / (r_out - 1.0),)),
            SepTerm(spatial=m2, gradient=g2,
                    parametric=(lambda m: (r_out - np.asarray(m, dtype=float)) / (r_out - 1.0),)),
        ],
        (2,),
        param_box=box,
    )


def couette_exact(nu=1.0, r_out=COUETTE_R_OUT, omega_in=1.0, omega_out=0.0):
    """Analytic Couette solution: v_phi = a r + b / r, p = 0."""

    def exact(x, mu):
        mu1 = float(np.atleast_1d(mu)[0])
        r_in = mu1
        den = r_out**2 - r_in**2
        a = (r_out**2 * omega_out - r_in**2 * omega_in) / den
        b = (omega_in - omega_out) * r_out**2 * r_in**2 / den
        r2 = x[..., 0] ** 2 + x[..., 1] ** 2
        h = a + b / r2
        hp_r = -2.0 * b / r2**2  # h'(r) / r
        u = np.stack([-x[..., 1] * h, x[..., 0] * h], axis=-1)
        g = np.empty(x.shape[:-1] + (2, 2))
        g[..., 0, 0] = -x[..., 0] * x[..., 1] * hp_r
        g[..., 0, 1] = h + x[..., 0] ** 2 * hp_r
        g[..., 1, 0] = -h - x[..., 1] ** 2 * hp_r
        g[..., 1, 1] = x[..., 0] * x[..., 1] * hp_r
        return {"u": u, "p": np.zeros(x.shape[:-1]), "L": -nu * g}

    return exact


def couette_dirichlet_separated(omega_in=1.0):
    """Separated Dirichlet data of the Couette case: tangential unit
    field on the inner circle times lambda(mu) = omega_in * mu (the
    deformed inner wall has radius mu and speed omega_in * mu); the
    outer wall is homogeneous."""

    def g_inner(x):
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        return np.stack([-x[..., 1], x[..., 0]], axis=-1) / r

    return {
        "inner": [DataTerm(
            spatial=g_inner,
            parametric=(lambda m: omega_in * np.asarray(m, dtype=float),),
        )],
        "outer": [],
    }


def couette_case(n_r=4, n_phi=16, k=2, nu=1.0, r_out=COUETTE_R_OUT,
                 interval=COUETTE_BOX[0]):
    """Stokes flow in an annulus 1 <= r <= r_out whose inner wall
    rotates at unit angular velocity; the parameter mu1 in `interval` is
    the inner radius of the deformed annulus."""
    if not (1.0 <= interval[0] <= interval[1] < r_out):
        raise ValueError(f"need 1 <= {interval[0]} <= {interval[1]} < {r_out}")
    box = (tuple(float(v) for v in interval),)
    mesh = annulus_mesh(n_r, n_phi, k, r_in=1.0, r_out=r_out)
    mapping = _radial_blend_mapping(r_out, box)
    bcs = StokesBCs(dirichlet=couette_dirichlet_separated())
    return ProblemDefinition(
        mesh=mesh, bcs=bcs, mapping=mapping,
        param_box=box, axis_names=("mu1",), nu=nu,
        exact=couette_exact(nu=nu, r_out=r_out), name="couette",
        case_params={"n_r": n_r, "n_phi": n_phi, "k": k, "nu": nu,
                     "r_out": r_out, "interval": list(box[0])},
    )


# ---------------------------------------------------------------------------
# channel flow over a wall-mounted half-cylinder of parametric radius,
# with a parametric horizontal shift of the obstacle region


CHANNEL_L = 3.0  # channel is [-L, L] x [0, 1]
CHANNEL_A = 1.0  # inner box half-width around the obstacle
CHANNEL_R_REF = 0.2
CHANNEL_R_INT = 0.4  # radius beyond which the radial morph vanishes
CHANNEL_DR = 0.1  # radius change per unit mu1
CHANNEL_SHIFT = 0.5  # max horizontal shift at mu2 = 1
CHANNEL_BOX = ((-1.0, 1.0), (0.0, 1.0))


def _channel_tent(x):
    """Shift profile: 1 on |x| <= a, linear ramp to 0 at |x| = L."""
    ax = np.abs(x)
    out = (CHANNEL_L - ax) / (CHANNEL_L - CHANNEL_A)
    return np.clip(out, 0.0, 1.0)


def _channel_tent_dx(x):
    ax = np.abs(x)
    ramp = (ax > CHANNEL_A) & (ax < CHANNEL_L)
    return np.where(ramp, -np.sign(x) / (CHANNEL_L - CHANNEL_A), 0.0)


def channel_mapping():
    """Two-term morph: a radial stretch supported on r <= R_INT around
    the obstacle (radius R_REF + DR*mu1) plus a horizontal shift field
    d(x) * SHIFT * mu2; the identity carries no parametric factor."""

    def ident(x):
        return x.copy()

    def g_ident(x):
        return np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy()

    rr, ri = CHANNEL_R_REF, CHANNEL_R_INT

    def blend(r):
        # radial displacement amplitude: DR at r = R_REF, 0 at r >= R_INT
        return np.clip((ri - r) / (ri - rr), 0.0, 1.0) * CHANNEL_DR

    def blend_dr(r):
        inside = (r > 1e-14) & (r < ri)
        return np.where(inside, -CHANNEL_DR / (ri - rr), 0.0)

    def m_rad(x):
        r = np.linalg.norm(x, axis=-1)
        amp = blend(r)
        safe = np.where(r > 1e-14, r, 1.0)
        return x * (amp / safe)[..., None]

    def g_rad(x):
        r = np.linalg.norm(x, axis=-1)
        safe = np.where(r > 1e-14, r, 1.0)
        amp = blend(r)
        damp = blend_dr(r)
        xh = x / safe[..., None]
        out = np.empty(x.shape[:-1] + (2, 2))
        # grad of (amp(r)/r) x: J_ab = d m_a / d x_b (transposed below)
        f = amp / safe
        fp = (damp - amp / safe) / safe
        for a in range(2):
            for b in range(2):
                out[..., a, b] = f * (a == b) + fp * xh[..., a] * x[..., b]
        # mapping Jacobian convention here is J_ab = d M_a / d x_b; the
        # separated algebra expects gradient[..., a, b] = d M_a / d x_b
        return out

    def m_shift(x):
        out = np.zeros_like(x)
        out[..., 0] = _channel_tent(x[..., 0]) * CHANNEL_SHIFT
        return out

    def g_shift(x):
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = _channel_tent_dx(x[..., 0]) * CHANNEL_SHIFT
        return out

    one2 = (lambda m: np.ones_like(np.asarray(m, dtype=float)),) * 2
    terms = [
        SepTerm(spatial=ident, gradient=g_ident, parametric=one2),
        SepTerm(
            spatial=m_rad, gradient=g_rad,
            parametric=(lambda m: np.asarray(m, dtype=float),
                        lambda m: np.ones_like(np.asarray(m, dtype=float))),
        ),
        SepTerm(
            spatial=m_shift, gradient=g_shift,
            parametric=(lambda m: np.ones_like(np.asarray(m, dtype=float)),
                        lambda m: np.asarray(m, dtype=float)),
        ),
    ]
    return sep_build(terms, (2,), param_box=CHANNEL_BOX)


def _half_box_path(v):
    """Boundary of the half-box [-a, a] x [0, 1] at equal-speed
    parameter v in [0, 1]: right side (v <= 1/4), top, then left side,
    traversed counter-clockwise from (a, 0) to (-a, 0)."""
    v = np.asarray(v, dtype=float)
    a = CHANNEL_A
    x = np.where(v <= 0.25, a, np.where(v < 0.75, a - 4.0 * (v - 0.25), -a))
    y = np.where(v <= 0.25, 4.0 * v, np.where(v < 0.75, 1.0, 1.0 - 4.0 * (v - 0.75)))
    return np.column_stack([x, y])


def channel_cylinder_mesh(n_phi=16, n_r=2, n_blend=2, n_x=4, k=2):
    """Conforming mesh of the half channel [-L, L] x [0, 1] minus the
    half-disc r <= R_REF, built from four structured regions: a half
    annulus R_REF <= r <= R_INT around the obstacle, a blend region from
    the circle r = R_INT to the inner box |x| <= a, and two side
    rectangles.  Region interfaces (the circle r = R_INT and the lines
    |x| = a) are exactly the interfaces of the separated mapping."""
    if n_phi % 4:
        raise ValueError("n_phi must be a multiple of 4")
    q = n_phi // 4
    slip = "SLIP:symmetry"
    wall = "DIRICHLET:wall"

    def chart_annulus(uv):
        r = CHANNEL_R_REF + (CHANNEL_R_INT - CHANNEL_R_REF) * uv[:, 0]
        phi = np.pi * uv[:, 1]
        return np.column_stack([r * np.cos(phi), r * np.sin(phi)])

    def chart_blend(uv):
        phi = np.pi * uv[:, 1]
        circ = CHANNEL_R_INT * np.column_stack([np.cos(phi), np.sin(phi)])
        box = _half_box_path(uv[:, 1])
        return (1.0 - uv[:, :1]) * circ + uv[:, :1] * box

    def chart_right(uv):
        return np.column_stack(
            [CHANNEL_A + (CHANNEL_L - CHANNEL_A) * uv[:, 0], uv[:, 1]]
        )

    def chart_left(uv):
        return np.column_stack(
            [-CHANNEL_L + (CHANNEL_L - CHANNEL_A) * uv[:, 0], uv[:, 1]]
        )

    parts = []
    va, ea, na, sa = _structured_region(n_r, n_phi, k, chart_annulus)
    faces = [(e, lf, "DIRICHLET:obstacle") for e, lf, _ in sa["u0"]]
    faces += [(e, lf, slip) for side in ("v0", "v1") for e, lf, _ in sa[side]]
    parts.append((va, ea, na, faces))

    vb, eb, nb, sb = _structured_region(n_blend, n_phi, k, chart_blend)
    faces = [(e, lf, slip) for side in ("v0", "v1") for e, lf, _ in sb[side]]
    faces += [(e, lf, wall) for e, lf, j in sb["u1"] if q <= j < 3 * q]
    parts.append((vb, eb, nb, faces))

    vr, er, nr, sr = _structured_region(n_x, q, k, chart_right)
    faces = [(e, lf, slip) for e, lf, _ in sr["v0"]]
    faces += [(e, lf, wall) for e, lf, _ in sr["v1"]]
    faces += [(e, lf, "NEUMANN:outflow") for e, lf, _ in sr["u1"]]
    parts.append((vr, er, nr, faces))

    vl, el, nl, sl = _structured_region(n_x, q, k, chart_left)
    faces = [(e, lf, slip) for e, lf, _ in sl["v0"]]
    faces += [(e, lf, wall) for e, lf, _ in sl["v1"]]
    faces += [(e, lf, "DIRICHLET:inflow") for e, lf, _ in sl["u0"]]
    parts.append((vl, el, nl, faces))

    return merge_mesh_parts(parts, k)


def channel_cylinder_case(n_phi=16, n_r=2, n_blend=2, n_x=4, k=2, nu=1.0):
    """Channel flow past a wall-mounted half-cylinder on the symmetry
    line: parabolic inflow, free outflow, slip on the symmetry wall,
    no-slip on the channel wall and the obstacle.  mu1 in [-1, 1] scales
    the obstacle radius (R_REF + DR*mu1), mu2 in [0, 1] shifts the
    obstacle region horizontally by SHIFT*mu2."""
    mesh = channel_cylinder_mesh(n_phi=n_phi, n_r=n_r, n_blend=n_blend,
                                 n_x=n_x, k=k)

    def g_in(x):
        prof = 1.0 - x[..., 1] ** 2
        return np.stack([prof, np.zeros_like(prof)], axis=-1)

    one2 = (lambda m: np.ones_like(np.asarray(m, dtype=float)),) * 2
    bcs = StokesBCs(
        dirichlet={
            "inflow": [DataTerm(spatial=g_in, parametric=one2)],
            "wall": [],
            "obstacle": [],
        },
        neumann={"outflow": []},
        slip=("symmetry",),
    )
    return ProblemDefinition(
        mesh=mesh, bcs=bcs, mapping=channel_mapping(),
        param_box=CHANNEL_BOX, axis_names=("mu1", "mu2"), nu=nu,
        name="channel_cylinder",
        case_params={"n_phi": n_phi, "n_r": n_r, "n_blend": n_blend,
                     "n_x": n_x, "k": k, "nu": nu},
    )
