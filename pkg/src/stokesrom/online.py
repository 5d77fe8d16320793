"""Online-phase helpers over a loaded modes archive: quantity-of-
interest evaluation and rasterised field sampling for viewers.

Sampling never inverts the geometric mapping: each curved element is
subtriangulated over its reference lattice, the subtriangles are
deformed at the requested parameters, and raster points are located in
the deformed linear subtriangles; the barycentric coordinates then give
a reference point at which the high-order basis is evaluated exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import archive as archive_mod
from . import hdg, pgd
from .export import sublattice_triangles
from .shape import face_trace_indices, lattice_nodes, simplex_basis

FIELD_VARS = ("u_mag", "u_x", "u_y", "p")


@dataclass
class OnlineState:
    archive: archive_mod.ModesArchive
    problem: hdg.ProblemDefinition
    pre: hdg.Precompute
    solution: pgd.PGDSolution
    sub_ref: np.ndarray  # (ns, 2) reference sub-lattice points
    sub_tris: np.ndarray  # (nt, 3) sub-lattice connectivity
    sub_basis: np.ndarray  # (ns, n) degree-k basis at the sub-lattice

    @property
    def axes(self):
        return [
            {"name": name, "bounds": list(b)}
            for name, b in zip(self.problem.axis_names, self.problem.param_box)
        ]

    def check_mu(self, mu):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        if len(mu) != len(self.problem.param_box):
            raise ValueError(
                f"expected {len(self.problem.param_box)} parameters, got {len(mu)}"
            )
        for v, (a, b) in zip(mu, self.problem.param_box):
            if not (a - 1e-12 <= v <= b + 1e-12):
                raise ValueError(f"parameter {v} outside [{a}, {b}]")
        return mu

    def evaluate(self, mu) -> hdg.FieldSet:
        return pgd.evaluate_solution(self.pre, self.solution, self.check_mu(mu))

    def qoi_names(self):
        names = [f"drag:{tag}" for tag in sorted(self.pre.dir_faces)]
        if self._has_pressure_drop():
            names.append("pressure_drop")
        return names

    def _has_pressure_drop(self):
        return "inflow" in self.pre.dir_faces and "outflow" in self.pre.neu_faces

    def evaluate_qois(self, mu, fields=None):
        mu = self.check_mu(mu)
        if fields is None:
            fields = self.evaluate(mu)
        speed = np.linalg.norm(fields.fu, axis=1)
        out = {
            "mu": [float(v) for v in mu],
            "forces": {
                tag: [float(v) for v in hdg.boundary_force(self.pre, fields, tag, mu)]
                for tag in sorted(self.pre.dir_faces)
            },
            "pressure_drop": (
                self._pressure_drop(fields, mu) if self._has_pressure_drop() else None
            ),
            "u_mag_min": float(speed.min()),
            "u_mag_max": float(speed.max()),
        }
        return out

    def qoi_value(self, qoi, mu, fields=None):
        vals = self.evaluate_qois(mu, fields=fields)
        if qoi.startswith("drag:"):
            tag = qoi[len("drag:"):]
            if tag not in vals["forces"]:
                raise KeyError(f"unknown boundary {tag!r}")
            return vals["forces"][tag][0]
        if qoi == "pressure_drop":
            if vals["pressure_drop"] is None:
                raise KeyError("case has no inflow/outflow pair")
            return vals["pressure_drop"]
        raise KeyError(f"unknown QoI {qoi!r}")

    def _face_mean_pressure(self, fields, faces, mu):
        pre = self.pre
        vt = [
            np.prod([float(f(m)) for f, m in zip(t.parametric, mu)])
            for t in pre.adj_terms
        ]
        total = area = 0.0
        for e, f in faces:
            wadj = sum(v * pre.face_w_adj[ka][f][e] for ka, v in enumerate(vt))
            w = pre.wface[f][e] * np.linalg.norm(wadj, axis=-1)
            pq = pre.Nf[f] @ fields.fp[e]
            total += float(np.sum(w * pq))
            area += float(np.sum(w))
        return total / area

    def _pressure_drop(self, fields, mu):
        p_in = self._face_mean_pressure(fields, self.pre.dir_faces["inflow"], mu)
        p_out = self._face_mean_pressure(
            fields, [(e, f) for e, f, _ in self.pre.neu_faces["outflow"]], mu
        )
        return float(p_in - p_out)

    # -- rasterised sampling ------------------------------------------------

    def deformed_subnodes(self, mu):
        """Deformed sub-lattice coordinates, (ne, ns, 2)."""
        phys = np.einsum("sI,eId->esd", self.sub_basis, self.pre.mesh.element_nodes)
        return hdg.deformed_points(self.pre, phys, mu)

    def boundary_polylines(self, mu):
        mu = self.check_mu(mu)
        tr = face_trace_indices(self.pre.k)
        out = []
        for e, lf, tag in self.pre.mesh.boundary_faces:
            pts = hdg.deformed_points(
                self.pre, self.pre.mesh.element_nodes[e][tr[lf]][None], mu
            )[0]
            out.append({
                "tag": tag.split(":", 1)[-1],
                "points": [[float(x), float(y)] for x, y in pts],
            })
        return out

    def sample_field(self, mu, var, res):
        """res x res raster of a field over the deformed bounding box;
        None outside the domain."""
        if var not in FIELD_VARS:
            raise KeyError(f"unknown variable {var!r}; expected one of {FIELD_VARS}")
        mu = self.check_mu(mu)
        fields = self.evaluate(mu)
        sub = self.deformed_subnodes(mu)  # (ne, ns, 2)
        lo = sub.reshape(-1, 2).min(axis=0)
        hi = sub.reshape(-1, 2).max(axis=0)
        xs = np.linspace(lo[0], hi[0], res)
        ys = np.linspace(lo[1], hi[1], res)
        gx, gy = np.meshgrid(xs, ys, indexing="xy")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        elem, ref = self._locate(sub, pts)
        values = np.full(len(pts), np.nan)
        inside = elem >= 0
        if inside.any():
            tab = simplex_basis(self.pre.k, ref[inside])
            e = elem[inside]
            if var == "p":
                values[inside] = np.einsum("qI,qI->q", tab.values, fields.fp[e])
            else:
                u = np.einsum("qI,qjI->qj", tab.values, fields.fu[e])
                values[inside] = {
                    "u_x": u[:, 0],
                    "u_y": u[:, 1],
                    "u_mag": np.linalg.norm(u, axis=1),
                }[var]
        grid = values.reshape(res, res)
        return {
            "mu": [float(v) for v in mu],
            "var": var,
            "res": res,
            "bbox": [[float(lo[0]), float(lo[1])], [float(hi[0]), float(hi[1])]],
            "values": [
                [None if np.isnan(v) else float(v) for v in row] for row in grid
            ],
            "vmin": float(np.nanmin(values)) if inside.any() else None,
            "vmax": float(np.nanmax(values)) if inside.any() else None,
            "boundary": self.boundary_polylines(mu),
        }

    def _locate(self, sub, pts):
        """Locate points in the deformed subtriangulation.

        Returns (element index or -1, reference coordinates)."""
        ne = sub.shape[0]
        tris = self.sub_tris
        corners = sub[:, tris]  # (ne, nt, 3, 2)
        flat = corners.reshape(-1, 3, 2)
        ref_corners = self.sub_ref[tris]  # (nt, 3, 2)
        lo = flat.min(axis=1)
        hi = flat.max(axis=1)
        # uniform background grid binning subtriangle bounding boxes
        nb = max(8, int(np.sqrt(len(flat))))
        dlo = pts.min(axis=0) if len(pts) else np.zeros(2)
        glo = np.minimum(lo.min(axis=0), dlo)
        ghi = np.maximum(hi.max(axis=0), pts.max(axis=0) if len(pts) else glo + 1)
        span = np.maximum(ghi - glo, 1e-300)
        cell_lo = np.clip(((lo - glo) / span * nb).astype(int), 0, nb - 1)
        cell_hi = np.clip(((hi - glo) / span * nb).astype(int), 0, nb - 1)
        bins = [[[] for _ in range(nb)] for _ in range(nb)]
        for t in range(len(flat)):
            for ix in range(cell_lo[t, 0], cell_hi[t, 0] + 1):
                for iy in range(cell_lo[t, 1], cell_hi[t, 1] + 1):
                    bins[ix][iy].append(t)
        elem = np.full(len(pts), -1, dtype=int)
        ref = np.zeros((len(pts), 2))
        nt = len(tris)
        pcell = np.clip(((pts - glo) / span * nb).astype(int), 0, nb - 1)
        tol = -1e-9
        for q, p in enumerate(pts):
            for t in bins[pcell[q, 0]][pcell[q, 1]]:
                a, b, c = flat[t]
                m = np.array([b - a, c - a]).T
                det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
                if abs(det) < 1e-300:
                    continue
                d = p - a
                l1 = (m[1, 1] * d[0] - m[0, 1] * d[1]) / det
                l2 = (-m[1, 0] * d[0] + m[0, 0] * d[1]) / det
                if l1 >= tol and l2 >= tol and l1 + l2 <= 1.0 - tol:
                    rc = ref_corners[t % nt]
                    ref[q] = rc[0] + l1 * (rc[1] - rc[0]) + l2 * (rc[2] - rc[0])
                    elem[q] = t // nt
                    break
        return elem, ref


def load_state(path) -> OnlineState:
    arch = archive_mod.read_archive(path)
    problem = archive_mod.problem_from_archive(arch)
    pre = hdg.Precompute(problem)
    sol = archive_mod.solution_from_archive(arch, pre)
    s = max(pre.k, 2)
    sub_ref = lattice_nodes(s)
    sub_tris = sublattice_triangles(s)
    sub_basis = simplex_basis(pre.k, sub_ref).values
    return OnlineState(
        archive=arch, problem=problem, pre=pre, solution=sol,
        sub_ref=sub_ref, sub_tris=sub_tris, sub_basis=sub_basis,
    )
