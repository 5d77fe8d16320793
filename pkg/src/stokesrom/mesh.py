"""Reference-domain high-order triangular meshes and their face skeleton.

Elements are (possibly curved) isoparametric triangles of degree k: the
geometry of element e is the degree-k interpolant of ``element_nodes[e]``
over the uniform simplex lattice.  Meshes loaded from file are straight
sided; the structured generators place lattice nodes through an analytic
chart, so curved reference boundaries (circles) are captured by degree-k
edges.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .shape import face_trace_indices, lattice_nodes

TAG_KINDS = ("DIRICHLET", "NEUMANN", "SLIP")

# local face f of triangle (v0, v1, v2): f0 = v0->v1, f1 = v1->v2, f2 = v2->v0
LOCAL_FACE_VERTS = ((0, 1), (1, 2), (2, 0))


class MeshError(ValueError):
    pass


@dataclass
class ReferenceMesh:
    vertices: np.ndarray  # (nv, 2)
    elements: np.ndarray  # (ne, 3) int, counter-clockwise
    degree: int
    element_nodes: np.ndarray  # (ne, n_en, 2)
    boundary_faces: list  # of (elem, local_face, tag)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def nodes_per_element(self):
        return (self.degree + 1) * (self.degree + 2) // 2

    def validate(self):
        ne = self.n_elements
        v = self.vertices[self.elements]
        signed = 0.5 * (
            (v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1])
            - (v[:, 2, 0] - v[:, 0, 0]) * (v[:, 1, 1] - v[:, 0, 1])
        )
        bad = np.nonzero(signed <= 0)[0]
        if len(bad):
            raise MeshError(f"inverted or degenerate element(s): {bad[:5].tolist()}")
        if self.element_nodes.shape != (ne, self.nodes_per_element, 2):
            raise MeshError("element_nodes shape inconsistent with degree")
        for e, lf, tag in self.boundary_faces:
            kind = tag.split(":", 1)[0]
            if kind not in TAG_KINDS:
                raise MeshError(f"unknown boundary tag kind {tag!r}")
            if not (0 <= e < ne and 0 <= lf < 3):
                raise MeshError(f"boundary face ({e}, {lf}) out of range")
        return self

    def tag_names(self, kind=None):
        out = []
        for _, _, tag in self.boundary_faces:
            k, name = tag.split(":", 1)
            if kind is None or k == kind:
                if name not in out:
                    out.append(name)
        return out


@dataclass
class FaceRecord:
    left: int
    left_face: int
    right: int  # -1 for boundary faces
    right_face: int
    tag: str  # None for interior faces

    @property
    def is_boundary(self):
        return self.right < 0

    @property
    def kind(self):
        return None if self.tag is None else self.tag.split(":", 1)[0]


@dataclass
class Skeleton:
    faces: list  # of FaceRecord, deterministic order
    elem_face: np.ndarray  # (ne, 3) face id
    elem_face_reversed: np.ndarray  # (ne, 3) bool, True on the right side
    hybrid_offset: np.ndarray  # (nfaces,) dof offset, -1 for Dirichlet faces
    n_hybrid_dofs: int
    degree: int

    def face_dofs(self, face_id, reverse=False):
        """Hybrid dof indices of a face, component-major, optionally in
        the traversal order of the right element."""
        off = self.hybrid_offset[face_id]
        if off < 0:
            return None
        k1 = self.degree + 1
        idx = np.arange(k1)
        if reverse:
            idx = idx[::-1]
        return np.concatenate([off + c * k1 + idx for c in range(2)])

    def hybrid_face_ids(self):
        return [i for i, off in enumerate(self.hybrid_offset) if off >= 0]


def build_skeleton(mesh: ReferenceMesh) -> Skeleton:
    mesh.validate()
    ne = mesh.n_elements
    tag_of = {}
    for e, lf, tag in mesh.boundary_faces:
        key = (e, lf)
        if key in tag_of:
            raise MeshError(f"boundary face ({e},{lf}) tagged twice")
        tag_of[key] = tag

    by_edge = {}
    faces = []
    elem_face = np.full((ne, 3), -1, dtype=int)
    elem_face_rev = np.zeros((ne, 3), dtype=bool)
    for e in range(ne):
        for lf, (a, b) in enumerate(LOCAL_FACE_VERTS):
            va, vb = mesh.elements[e, a], mesh.elements[e, b]
            key = (min(va, vb), max(va, vb))
            if key not in by_edge:
                fid = len(faces)
                faces.append(FaceRecord(left=e, left_face=lf, right=-1, right_face=-1, tag=None))
                by_edge[key] = (fid, va, vb, 1)
                elem_face[e, lf] = fid
            else:
                fid, va0, vb0, count = by_edge[key]
                if count >= 2:
                    raise MeshError(f"face {key} referenced by more than 2 elements")
                if (va, vb) != (vb0, va0):
                    raise MeshError(f"face {key} traversed twice in the same direction")
                rec = faces[fid]
                rec.right, rec.right_face = e, lf
                by_edge[key] = (fid, va0, vb0, 2)
                elem_face[e, lf] = fid
                elem_face_rev[e, lf] = True

    for fid, rec in enumerate(faces):
        if rec.is_boundary:
            tag = tag_of.pop((rec.left, rec.left_face), None)
            if tag is None:
                raise MeshError(
                    f"boundary face of element {rec.left} (local {rec.left_face}) untagged"
                )
            rec.tag = tag
    if tag_of:
        raise MeshError(f"tags on interior faces: {sorted(tag_of)}")

    k1 = mesh.degree + 1
    offsets = np.full(len(faces), -1, dtype=int)
    ndof = 0
    for fid, rec in enumerate(faces):
        if rec.kind == "DIRICHLET":
            continue
        offsets[fid] = ndof
        ndof += 2 * k1
    return Skeleton(
        faces=faces,
        elem_face=elem_face,
        elem_face_reversed=elem_face_rev,
        hybrid_offset=offsets,
        n_hybrid_dofs=ndof,
        degree=mesh.degree,
    )


def _affine_lattice_nodes(vertices, elements, k):
    lat = lattice_nodes(k)
    bary = np.column_stack([1 - lat[:, 0] - lat[:, 1], lat[:, 0], lat[:, 1]])
    return np.einsum("li,eid->eld", bary, vertices[elements])


def load_mesh(path) -> ReferenceMesh:
    """Read the line-oriented ASCII mesh format (see module docs)."""
    with open(path) as f:
        tokens = [ln.split("#", 1)[0].split() for ln in f]
    tokens = [t for t in tokens if t]
    try:
        hdr = dict((t[0], t[1]) for t in tokens[:5])
        nsd, k = int(hdr["nsd"]), int(hdr["degree"])
        nv, ne, nb = int(hdr["nvertices"]), int(hdr["nelements"]), int(hdr["nbfaces"])
    except (KeyError, IndexError, ValueError) as exc:
        raise MeshError(f"malformed mesh header: {exc}") from exc
    if nsd != 2:
        raise MeshError(f"unsupported nsd {nsd}")
    body = tokens[5:]
    if len(body) != nv + ne + nb:
        raise MeshError(f"expected {nv + ne + nb} data lines, found {len(body)}")
    try:
        vertices = np.array([[float(t[0]), float(t[1])] for t in body[:nv]])
        elements = np.array([[int(c) for c in t[:3]] for t in body[nv : nv + ne]], dtype=int)
        bfaces = [(int(t[0]), int(t[1]), t[2]) for t in body[nv + ne :]]
    except (IndexError, ValueError) as exc:
        raise MeshError(f"malformed mesh body: {exc}") from exc
    if ne and (elements.min() < 0 or elements.max() >= nv):
        raise MeshError("element vertex index out of range")
    mesh = ReferenceMesh(
        vertices=vertices,
        elements=elements,
        degree=k,
        element_nodes=_affine_lattice_nodes(vertices, elements, k),
        boundary_faces=bfaces,
    )
    mesh.validate()
    build_skeleton(mesh)  # topology check
    return mesh


def save_mesh(mesh: ReferenceMesh, path):
    with open(path, "w") as f:
        f.write(f"nsd 2\ndegree {mesh.degree}\n")
        f.write(f"nvertices {len(mesh.vertices)}\n")
        f.write(f"nelements {mesh.n_elements}\nnbfaces {len(mesh.boundary_faces)}\n")
        for x, y in mesh.vertices:
            f.write(f"{float(x)!r} {float(y)!r}\n")
        for tri in mesh.elements:
            f.write(f"{tri[0]} {tri[1]} {tri[2]}\n")
        for e, lf, tag in mesh.boundary_faces:
            f.write(f"{e} {lf} {tag}\n")


def mesh_hash(mesh: ReferenceMesh) -> str:
    h = hashlib.sha256()
    h.update(np.int64(mesh.degree).tobytes())
    h.update(np.ascontiguousarray(mesh.vertices, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(mesh.elements, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(mesh.element_nodes, dtype=np.float64).tobytes())
    for e, lf, tag in mesh.boundary_faces:
        h.update(f"{e},{lf},{tag};".encode())
    return h.hexdigest()


def face_frame(mesh: ReferenceMesh, elem, local_face, tq):
    """Geometry of an element face at parameters tq in [0, 1].

    Returns (points, n, t, measure): the outward unit normal of the
    element, the unit tangent t = rotate(n, +90 degrees) (the traversal
    direction of a counter-clockwise element), and the arclength scaling
    |dx/dt| so that integral ds = sum w_q measure_q.
    """
    from .shape import simplex_basis

    k = mesh.degree
    tq = np.asarray(tq, dtype=float).ravel()
    a, b = LOCAL_FACE_VERTS[local_face]
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    ref_pts = corners[a] + np.outer(tq, corners[b] - corners[a])
    tab = simplex_basis(k, ref_pts)
    nodes = mesh.element_nodes[elem]
    pts = tab.values @ nodes
    # dx/dt = sum_I (grad N_I . edge direction) x_I
    dN = tab.gradients @ (corners[b] - corners[a])
    dpts = np.einsum("qi,id->qd", dN, nodes)
    measure = np.linalg.norm(dpts, axis=1)
    if np.any(measure <= 0):
        raise MeshError(f"degenerate face ({elem},{local_face})")
    t = dpts / measure[:, None]
    n = np.column_stack([t[:, 1], -t[:, 0]])
    return pts, n, t, measure


# ---------------------------------------------------------------------------
# structured generators (test utilities and built-in cases)

def _structured_region(nu, nv, k, chart, wrap_v=False, v_lines=None, u_lines=None):
    """Triangulated structured region mapped through an analytic chart.

    The (u, v) unit square is split into nu x nv cells, two triangles
    each; lattice nodes are formed in chart space, so shared faces get
    identical node coordinates and boundary curves are degree-k exact.
    Returns (vertices, elements, element_nodes, side_faces) where
    side_faces maps side name -> list of (elem, local_face, cell index).
    """
    u = np.linspace(0.0, 1.0, nu + 1) if u_lines is None else np.asarray(u_lines, float)
    v = np.linspace(0.0, 1.0, nv + 1) if v_lines is None else np.asarray(v_lines, float)
    nvv = nv if wrap_v else nv + 1

    def vid(i, j):
        return i * nvv + (j % nv if wrap_v else j)

    verts_uv = np.array([[u[i], v[j]] for i in range(nu + 1) for j in range(nvv)])
    vertices = chart(verts_uv)

    lat = lattice_nodes(k)
    bary = np.column_stack([1 - lat[:, 0] - lat[:, 1], lat[:, 0], lat[:, 1]])
    elements = []
    elem_uv_corners = []
    side_faces = {"u0": [], "u1": [], "v0": [], "v1": []}
    for i in range(nu):
        for j in range(nv):
            c00 = (u[i], v[j])
            c10 = (u[i + 1], v[j])
            c11 = (u[i + 1], v[j + 1])
            c01 = (u[i], v[j + 1])
            p00, p10 = vid(i, j), vid(i + 1, j)
            p11, p01 = vid(i + 1, j + 1), vid(i, j + 1)
            e1 = len(elements)
            elements.append((p00, p10, p11))
            elem_uv_corners.append((c00, c10, c11))
            e2 = len(elements)
            elements.append((p00, p11, p01))
            elem_uv_corners.append((c00, c11, c01))
            if j == 0 and not wrap_v:
                side_faces["v0"].append((e1, 0, i))
            if i == nu - 1:
                side_faces["u1"].append((e1, 1, j))
            if j == nv - 1 and not wrap_v:
                side_faces["v1"].append((e2, 1, i))
            if i == 0:
                side_faces["u0"].append((e2, 2, j))
    elements = np.array(elements, dtype=int)
    uvc = np.array(elem_uv_corners)  # (ne, 3, 2)
    nodes_uv = np.einsum("li,eid->eld", bary, uvc)
    element_nodes = chart(nodes_uv.reshape(-1, 2)).reshape(nodes_uv.shape)
    return vertices, elements, element_nodes, side_faces


def merge_mesh_parts(parts, k):
    """Merge structured regions into one conforming mesh.

    parts: list of (vertices, elements, element_nodes, bfaces) with
    bfaces of (elem_local, local_face, tag).  Vertices shared between
    parts (to 1e-9 in coordinates) are identified, so region interfaces
    become interior faces; their face nodes must agree geometrically.
    """
    vid = {}
    verts = []
    elements = []
    enodes = []
    bfaces = []
    for vertices, elems, nodes, faces in parts:
        local = np.empty(len(vertices), dtype=int)
        for i, p in enumerate(vertices):
            key = (round(float(p[0]), 9), round(float(p[1]), 9))
            if key not in vid:
                vid[key] = len(verts)
                verts.append(np.asarray(p, dtype=float))
            local[i] = vid[key]
        off = len(elements)
        elements.extend(local[np.asarray(elems, dtype=int)])
        enodes.append(nodes)
        bfaces += [(e + off, lf, tag) for e, lf, tag in faces]
    return ReferenceMesh(
        vertices=np.array(verts), elements=np.array(elements, dtype=int),
        degree=k, element_nodes=np.concatenate(enodes, axis=0),
        boundary_faces=bfaces,
    ).validate()


def square_mesh(n, k, tags=None, bounds=((0.0, 0.0), (1.0, 1.0))):
    """Structured n x n x 2 triangulation of an axis-aligned rectangle."""
    (x0, y0), (x1, y1) = bounds
    tags = tags or {s: "DIRICHLET:boundary" for s in ("u0", "u1", "v0", "v1")}

    def chart(uv):
        return np.column_stack([x0 + (x1 - x0) * uv[:, 0], y0 + (y1 - y0) * uv[:, 1]])

    vertices, elements, element_nodes, sides = _structured_region(n, n, k, chart)
    bfaces = [(e, lf, tags[s]) for s in sides for (e, lf, _) in sides[s]]
    return ReferenceMesh(
        vertices=vertices, elements=elements, degree=k,
        element_nodes=element_nodes, boundary_faces=bfaces,
    ).validate()


def annulus_mesh(n_r, n_phi, k, r_in=1.0, r_out=5.0,
                 inner_tag="DIRICHLET:inner", outer_tag="DIRICHLET:outer"):
    """Structured annulus mesh, n_r x n_phi x 2 curved elements.

    The chart is polar, so inner/outer boundary edges lie exactly on the
    circles (to degree-k interpolation).
    """

    def chart(uv):
        r = r_in + (r_out - r_in) * uv[:, 0]
        phi = 2.0 * np.pi * uv[:, 1]
        return np.column_stack([r * np.cos(phi), r * np.sin(phi)])

    vertices, elements, element_nodes, sides = _structured_region(
        n_r, n_phi, k, chart, wrap_v=True
    )
    bfaces = [(e, lf, inner_tag) for (e, lf, _) in sides["u0"]]
    bfaces += [(e, lf, outer_tag) for (e, lf, _) in sides["u1"]]
    return ReferenceMesh(
        vertices=vertices, elements=elements, degree=k,
        element_nodes=element_nodes, boundary_faces=bfaces,
    ).validate()
