"""Flat key-value run configuration.

Config files are structured text with dotted keys::

    case = couette
    mesh.degree = 2
    case.n_r = 8
    pmesh.n_el = 200
    pgd.eta_star = 1e-4

Unknown keys are errors, so typos fail fast.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .cases import channel_cylinder_case, couette_case
from .hdg import ProblemDefinition, StokesBCs
from .mesh import load_mesh


class ConfigError(ValueError):
    pass


# scalar keys: name -> (attribute, converter)
_SCALAR_KEYS = {
    "case": ("case", str),
    "nu": ("nu", float),
    "seed": ("seed", int),
    "mesh.degree": ("degree", int),
    "pmesh.n_el": ("pmesh_n_el", int),
    "pmesh.degree": ("pmesh_degree", int),
    "pgd.eta_star": ("eta_star", float),
    "pgd.eta_uhat": ("eta_uhat", float),
    "pgd.eta_r": ("eta_r", float),
    "pgd.max_modes": ("max_modes", int),
    "pgd.max_sweeps": ("max_sweeps", int),
    "pgd.compress_every": ("compress_every", int),
    "pgd.compress_tol": ("compress_tol", float),
    "pgd.refit_sweeps": ("refit_sweeps", int),
    "hdg.tau": ("tau", float),
    "hdg.ell": ("ell", float),
    "hdg.quad_increment": ("quad_increment", int),
    "output.dir": ("output_dir", str),
    "convergence.meshes": ("convergence_meshes", str),
    "convergence.degrees": ("convergence_degrees", str),
}


@dataclass
class RunConfig:
    case: str = "couette"
    nu: float = 1.0
    seed: int = 0
    degree: int = 2
    case_params: dict = field(default_factory=dict)  # forwarded to the case
    pmesh_n_el: int = 50
    pmesh_degree: int = 2
    eta_star: float = 1e-4
    eta_uhat: float = 1e-3
    eta_r: float = 1e-3
    max_modes: int = 40
    max_sweeps: int = 25
    compress_every: int = 5
    compress_tol: float = 1e-9
    refit_sweeps: int = 4
    tau: float = 10.0
    ell: float = None
    quad_increment: int = 4
    output_dir: str = "out"
    convergence_meshes: str = ""
    convergence_degrees: str = ""

    def validate(self):
        for name in ("eta_star", "eta_uhat", "eta_r", "compress_tol", "tau", "nu"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.degree < 1 or self.pmesh_degree < 1:
            raise ConfigError("polynomial degrees must be >= 1")
        if self.pmesh_n_el < 1 or self.max_modes < 1 or self.max_sweeps < 1:
            raise ConfigError("counts must be >= 1")
        if self.refit_sweeps < 0:
            raise ConfigError("refit_sweeps must be >= 0")
        return self


def parse_config_text(text) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in _SCALAR_KEYS:
            attr, conv = _SCALAR_KEYS[key]
            try:
                setattr(cfg, attr, conv(value))
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
        elif key.startswith("case.") and len(key) > 5:
            try:
                if ":" in value:  # ranges, e.g. case.interval = 2.0:2.0
                    cfg.case_params[key[5:]] = tuple(
                        float(v) for v in value.split(":")
                    )
                else:
                    try:
                        cfg.case_params[key[5:]] = int(value)
                    except ValueError:
                        cfg.case_params[key[5:]] = float(value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}") from exc
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return cfg.validate()


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def build_problem(cfg: RunConfig) -> ProblemDefinition:
    """Instantiate the configured case."""
    kwargs = dict(cfg.case_params)
    kwargs.setdefault("k", cfg.degree)
    kwargs.setdefault("nu", cfg.nu)
    if cfg.case == "couette":
        builder = couette_case
    elif cfg.case == "channel_cylinder":
        builder = channel_cylinder_case
    elif cfg.case.startswith("file:"):
        return _file_case(cfg)
    else:
        raise ConfigError(f"unknown case {cfg.case!r}")
    try:
        prob = builder(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad case parameter: {exc}") from exc
    return _apply_overrides(prob, cfg)


def _apply_overrides(prob, cfg):
    prob.tau = cfg.tau
    if cfg.ell is not None:
        prob.ell = cfg.ell
    prob.quad_increment = cfg.quad_increment
    return prob


def _file_case(cfg: RunConfig) -> ProblemDefinition:
    """Custom-mesh smoke case: homogeneous Dirichlet data on every
    tagged boundary, identity mapping, a single degenerate parameter."""
    path = cfg.case[len("file:"):]
    try:
        mesh = load_mesh(path)
    except OSError as exc:
        raise ConfigError(f"cannot read mesh {path}: {exc}") from exc
    bcs = StokesBCs(
        dirichlet={name: [] for name in mesh.tag_names("DIRICHLET")},
        neumann={name: [] for name in mesh.tag_names("NEUMANN")},
        slip=tuple(mesh.tag_names("SLIP")),
    )
    prob = ProblemDefinition(
        mesh=mesh, bcs=bcs, param_box=((0.0, 0.0),), axis_names=("mu1",),
        nu=cfg.nu, name=f"file:{path}", case_params={"path": path},
    )
    return _apply_overrides(prob, cfg)
