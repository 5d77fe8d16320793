"""Binary container for computed mode sets.

Layout: 8-byte magic, u32 little-endian header length, UTF-8 JSON
header (scalars, mesh tags, mode amplitudes and the array manifest),
the raw little-endian float64 arrays in manifest order, and an 8-byte
checksum (leading bytes of the SHA-256 of everything before it).
Writing is deterministic: identical content gives identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .hdg import Precompute, ProblemDefinition, StokesBCs
from .mesh import ReferenceMesh, mesh_hash
from .pgd import VARS, Mode, PGDSolution, get_var, set_var, zero_fields
from .shape import interval_mesh

MAGIC = b"SROMPGD1"
SCHEMA = 1


class ArchiveError(ValueError):
    pass


@dataclass
class ModesArchive:
    header: dict
    arrays: dict  # name -> float64 ndarray, in manifest order

    @property
    def n_modes(self):
        return len(self.header["modes"])


def _fingerprint(header) -> str:
    keys = ("case", "case_params", "nu", "tau", "ell", "quad_increment",
            "mesh_hash", "degree", "param_box", "axis_names", "pmesh")
    blob = json.dumps({k: header[k] for k in keys}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def archive_from_solution(problem: ProblemDefinition, pre: Precompute,
                          sol: PGDSolution) -> ModesArchive:
    mesh = problem.mesh
    header = {
        "schema": SCHEMA,
        "case": problem.name,
        "case_params": problem.case_params,
        "nu": problem.nu,
        "tau": problem.tau,
        "ell": problem.ell,
        "quad_increment": problem.quad_increment,
        "degree": mesh.degree,
        "mesh_hash": mesh_hash(mesh),
        "axis_names": list(problem.axis_names),
        "param_box": [list(b) for b in problem.param_box],
        "pmesh": [[pm.n_el, pm.k] for pm in sol.pmeshes],
        "boundary_faces": [[int(e), int(lf), tag] for e, lf, tag in mesh.boundary_faces],
        "modes": [{var: mode.sigma[var] for var in VARS} for mode in sol.modes],
    }
    header["fingerprint"] = _fingerprint(header)
    arrays = {
        "mesh.vertices": np.asarray(mesh.vertices, dtype=np.float64),
        "mesh.elements": np.asarray(mesh.elements, dtype=np.float64),
        "mesh.element_nodes": np.asarray(mesh.element_nodes, dtype=np.float64),
    }
    for m, mode in enumerate(sol.modes):
        base = f"mode{m:04d}"
        for var in VARS:
            arrays[f"{base}.{var}"] = np.asarray(
                get_var(mode.fields, var), dtype=np.float64
            )
            for j, psi in enumerate(mode.psi[var]):
                arrays[f"{base}.{var}.psi{j}"] = np.asarray(psi, dtype=np.float64)
    header["manifest"] = [[name, list(a.shape)] for name, a in arrays.items()]
    return ModesArchive(header=header, arrays=arrays)


def write_archive(path, archive: ModesArchive) -> None:
    head = json.dumps(archive.header, sort_keys=True).encode()
    body = bytearray()
    body += MAGIC
    body += struct.pack("<I", len(head))
    body += head
    for name, _shape in archive.header["manifest"]:
        body += np.ascontiguousarray(archive.arrays[name], dtype="<f8").tobytes()
    digest = hashlib.sha256(bytes(body)).digest()[:8]
    with open(path, "wb") as fh:
        fh.write(bytes(body))
        fh.write(digest)


def read_archive(path) -> ModesArchive:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise ArchiveError(f"cannot read archive {path}: {exc}") from exc
    if len(blob) < len(MAGIC) + 12 or blob[: len(MAGIC)] != MAGIC:
        raise ArchiveError("not a modes archive (bad magic)")
    body, digest = blob[:-8], blob[-8:]
    if hashlib.sha256(body).digest()[:8] != digest:
        raise ArchiveError("archive checksum mismatch (truncated or corrupt)")
    (hlen,) = struct.unpack_from("<I", body, len(MAGIC))
    off = len(MAGIC) + 4
    try:
        header = json.loads(body[off : off + hlen].decode())
    except ValueError as exc:
        raise ArchiveError("corrupt archive header") from exc
    if header.get("schema") != SCHEMA:
        raise ArchiveError(f"unsupported archive schema {header.get('schema')!r}")
    off += hlen
    arrays = {}
    for name, shape in header["manifest"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=off)
        arrays[name] = arr.reshape(shape).astype(np.float64)
        off += 8 * count
    if off != len(body):
        raise ArchiveError("archive payload length mismatch")
    return ModesArchive(header=header, arrays=arrays)


def problem_from_archive(archive: ModesArchive) -> ProblemDefinition:
    """Rebuild the problem definition: built-in cases via their
    constructors (verified against the stored mesh hash), custom-mesh
    cases from the embedded mesh arrays."""
    from . import cases

    h = archive.header
    name = h["case"]
    params = dict(h["case_params"])
    if name == "couette":
        if "interval" in params:
            params["interval"] = tuple(params["interval"])
        prob = cases.couette_case(**params)
    elif name == "channel_cylinder":
        prob = cases.channel_cylinder_case(**params)
    elif name.startswith("file:"):
        mesh = ReferenceMesh(
            vertices=archive.arrays["mesh.vertices"],
            elements=archive.arrays["mesh.elements"].astype(int),
            degree=int(h["degree"]),
            element_nodes=archive.arrays["mesh.element_nodes"],
            boundary_faces=[(int(e), int(lf), tag) for e, lf, tag in h["boundary_faces"]],
        ).validate()
        bcs = StokesBCs(
            dirichlet={n: [] for n in mesh.tag_names("DIRICHLET")},
            neumann={n: [] for n in mesh.tag_names("NEUMANN")},
            slip=tuple(mesh.tag_names("SLIP")),
        )
        prob = ProblemDefinition(
            mesh=mesh, bcs=bcs,
            param_box=tuple(tuple(b) for b in h["param_box"]),
            axis_names=tuple(h["axis_names"]), nu=h["nu"],
            name=name, case_params=params,
        )
    else:
        raise ArchiveError(f"unknown case {name!r} in archive")
    prob.tau = h["tau"]
    prob.ell = h["ell"]
    prob.quad_increment = int(h["quad_increment"])
    if mesh_hash(prob.mesh) != h["mesh_hash"]:
        raise ArchiveError("archive mesh hash does not match the rebuilt case mesh")
    return prob


def solution_from_archive(archive: ModesArchive, pre: Precompute) -> PGDSolution:
    h = archive.header
    pmeshes = [
        interval_mesh(bounds, n_el, deg)
        for bounds, (n_el, deg) in zip(h["param_box"], h["pmesh"])
    ]
    modes = []
    for m, sigmas in enumerate(h["modes"]):
        base = f"mode{m:04d}"
        fields = zero_fields(pre)
        psi = {}
        for var in VARS:
            set_var(fields, var, archive.arrays[f"{base}.{var}"].copy())
            psi[var] = [
                archive.arrays[f"{base}.{var}.psi{j}"].copy()
                for j in range(len(pmeshes))
            ]
        mode = Mode(fields=fields, sigma={v: float(sigmas[v]) for v in VARS}, psi=psi)
        mode.build_cache(pre)
        modes.append(mode)
    return PGDSolution(
        modes=modes, pmeshes=pmeshes, problem_name=h["case"],
        history=h.get("history", []),
    )
