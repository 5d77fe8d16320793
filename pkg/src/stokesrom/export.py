"""Legacy ASCII unstructured-grid export of evaluated fields.

Each degree-k element is subtriangulated into k^2 linear triangles over
its interpolation lattice, so curved elements and high-order fields
render faithfully in standard viewers.
"""

from __future__ import annotations

import numpy as np

from . import hdg
from .shape import lattice_nodes


def sublattice_triangles(k):
    """Connectivity (k^2 triangles) over the degree-k simplex lattice,
    indexed in the lattice ordering (j rows, i within row)."""
    index = {}
    pos = 0
    for j in range(k + 1):
        for i in range(k + 1 - j):
            index[(i, j)] = pos
            pos += 1
    tris = []
    for j in range(k):
        for i in range(k - j):
            tris.append((index[(i, j)], index[(i + 1, j)], index[(i, j + 1)]))
            if i + j < k - 1:
                tris.append(
                    (index[(i + 1, j)], index[(i + 1, j + 1)], index[(i, j + 1)])
                )
    return np.array(tris, dtype=int)


def _lattice_matches(k):
    """Verify the lattice ordering assumption once per degree."""
    lat = lattice_nodes(k)
    want = np.array(
        [[i / k, j / k] for j in range(k + 1) for i in range(k + 1 - j)]
    )
    return np.allclose(lat, want, atol=1e-12)


def export_fields(pre: hdg.Precompute, fields: hdg.FieldSet, mu, path):
    """Write deformed coordinates, velocity, pressure and speed at the
    element interpolation nodes to a legacy ASCII unstructured file."""
    k = pre.k
    if not _lattice_matches(k):  # pragma: no cover - ordering is fixed
        raise RuntimeError("unexpected lattice ordering")
    nodes = pre.mesh.element_nodes  # (ne, n, 2)
    deformed = hdg.deformed_points(pre, nodes, mu)  # (ne, n, 2)
    tris = sublattice_triangles(k)
    ne, n, _ = nodes.shape
    npts = ne * n
    u = fields.fu.transpose(0, 2, 1).reshape(npts, 2)  # nodal velocity
    p = fields.fp.reshape(npts)
    speed = np.linalg.norm(u, axis=1)
    cells = (tris[None, :, :] + n * np.arange(ne)[:, None, None]).reshape(-1, 3)

    lines = [
        "# vtk DataFile Version 2.0",
        "stokes fields",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {npts} double",
    ]
    pts = deformed.reshape(npts, 2)
    for x, y in pts:
        lines.append(f"{float(x)!r} {float(y)!r} 0.0")
    lines.append(f"CELLS {len(cells)} {4 * len(cells)}")
    for a, b, c in cells:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {len(cells)}")
    lines.extend(["5"] * len(cells))  # linear triangles
    lines.append(f"POINT_DATA {npts}")
    lines.append("VECTORS velocity double")
    for ux, uy in u:
        lines.append(f"{float(ux)!r} {float(uy)!r} 0.0")
    lines.append("SCALARS pressure double 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(f"{float(v)!r}" for v in p)
    lines.append("SCALARS velocity_magnitude double 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(f"{float(v)!r}" for v in speed)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
