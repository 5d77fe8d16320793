"""Command-line drivers.

Verbs: ``offline`` (greedy enrichment to a modes archive),
``convergence`` (mesh-refinement error study), ``evaluate`` (QoIs and
optional field export at one parameter point), ``amplitudes`` (mode
amplitude table) and ``serve`` (HTTP query service).

Exit codes: 0 success, 1 numerical failure, 2 input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import archive as archive_mod
from . import hdg, pgd
from .config import ConfigError, build_problem, load_config
from .export import export_fields
from .mesh import MeshError
from .online import load_state
from .shape import interval_mesh

log = logging.getLogger(__name__)


class InputError(Exception):
    pass


class NumericalError(Exception):
    pass


def _pgd_config(cfg):
    return pgd.PGDConfig(
        eta_star=cfg.eta_star, eta_uhat=cfg.eta_uhat, eta_r=cfg.eta_r,
        max_sweeps=cfg.max_sweeps, max_modes=cfg.max_modes,
        compress_every=cfg.compress_every, compress_tol=cfg.compress_tol,
        refit_sweeps=cfg.refit_sweeps,
    )


def _enrich(problem, cfg):
    try:
        pre = hdg.Precompute(problem)
        pmeshes = [
            interval_mesh(b, cfg.pmesh_n_el, cfg.pmesh_degree)
            for b in problem.param_box
        ]
        sol = pgd.greedy_enrich(pre, pmeshes, _pgd_config(cfg))
    except (np.linalg.LinAlgError, RuntimeError) as exc:
        raise NumericalError(f"enrichment failed: {exc}") from exc
    return pre, sol


def run_offline(config_path, out_dir=None):
    cfg = load_config(config_path)
    problem = build_problem(cfg)
    t0 = time.time()
    pre, sol = _enrich(problem, cfg)
    seconds = time.time() - t0
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    arch = archive_mod.archive_from_solution(problem, pre, sol)
    apath = out / f"{problem.name.replace(':', '_').replace('/', '_')}.modes"
    archive_mod.write_archive(apath, arch)
    report = {
        "case": problem.name,
        "archive": str(apath),
        "n_modes": len(sol.modes),
        "seconds": seconds,
        "amplitudes": {
            var: list(map(float, amps))
            for var, amps in pgd.mode_amplitudes(sol).items()
        },
        "history": sol.history,
    }
    rpath = out / f"{apath.stem}.report.json"
    rpath.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return apath, report


def run_convergence(config_path):
    cfg = load_config(config_path)
    if not cfg.convergence_meshes:
        raise ConfigError("convergence.meshes not set (e.g. 4x16,8x32)")
    meshes = []
    for spec in cfg.convergence_meshes.split(","):
        try:
            n_r, n_phi = (int(v) for v in spec.lower().split("x"))
        except ValueError as exc:
            raise ConfigError(f"bad mesh spec {spec!r}") from exc
        meshes.append((n_r, n_phi))
    degrees = [int(v) for v in cfg.convergence_degrees.split(",")] if cfg.convergence_degrees else [cfg.degree]
    rows = []
    for k in degrees:
        errs = []
        for n_r, n_phi in meshes:
            cfg_k = load_config(config_path)
            cfg_k.degree = k
            cfg_k.case_params.update({"n_r": n_r, "n_phi": n_phi})
            problem = build_problem(cfg_k)
            if problem.exact is None:
                raise ConfigError(f"case {problem.name!r} has no exact solution")
            pre, sol = _enrich(problem, cfg_k)
            err = pgd.pgd_l2_error(pre, sol)
            errs.append(err)
            rows.append({"degree": k, "mesh": f"{n_r}x{n_phi}",
                         "n_modes": len(sol.modes), "errors": err})
        if len(meshes) > 1:
            # least-squares observed rate per variable vs h ~ 1/n_r
            h = np.log([1.0 / m[0] for m in meshes])
            rates = {}
            for var in errs[0]:
                y = np.log([e[var] for e in errs])
                rates[var] = float(np.polyfit(h, y, 1)[0])
            rows.append({"degree": k, "rates": rates})
    return rows


def run_evaluate(archive_path, mu, export_path=None):
    state = load_state(archive_path)
    try:
        mu = state.check_mu(mu)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    fields = state.evaluate(mu)
    out = state.evaluate_qois(mu, fields=fields)
    out["n_modes"] = state.solution.n_modes
    if export_path:
        export_fields(state.pre, fields, mu, export_path)
        out["export"] = str(export_path)
    return out


def run_amplitudes(archive_path):
    state = load_state(archive_path)
    amps = pgd.mode_amplitudes(state.solution)
    return {
        "case": state.problem.name,
        "n_modes": state.solution.n_modes,
        "amplitudes": {var: list(map(float, a)) for var, a in amps.items()},
    }


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = argparse.ArgumentParser(
        prog="stokesrom",
        description="Separated reduced-order solver for parametrised Stokes flow",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    p = sub.add_parser("offline", help="run greedy enrichment, write a modes archive")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="output directory override")
    p = sub.add_parser("convergence", help="mesh-convergence study")
    p.add_argument("config")
    p = sub.add_parser("evaluate", help="evaluate QoIs at one parameter point")
    p.add_argument("archive")
    p.add_argument("--mu", required=True, help="comma-separated parameter values")
    p.add_argument("--export", default=None, help="write fields to this path")
    p = sub.add_parser("amplitudes", help="print the mode amplitude table")
    p.add_argument("archive")
    p = sub.add_parser("serve", help="serve the archive over HTTP")
    p.add_argument("archive")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    args = parser.parse_args(argv)

    try:
        if args.verb == "offline":
            apath, report = run_offline(args.config, out_dir=args.out)
            print(json.dumps(report, indent=2, sort_keys=True))
        elif args.verb == "convergence":
            for row in run_convergence(args.config):
                print(json.dumps(row, sort_keys=True))
        elif args.verb == "evaluate":
            try:
                mu = [float(v) for v in args.mu.split(",")]
            except ValueError as exc:
                raise InputError(f"bad --mu {args.mu!r}") from exc
            print(json.dumps(run_evaluate(args.archive, mu, args.export),
                             indent=2, sort_keys=True))
        elif args.verb == "amplitudes":
            print(json.dumps(run_amplitudes(args.archive), indent=2, sort_keys=True))
        elif args.verb == "serve":
            import uvicorn

            from .service import create_app

            uvicorn.run(create_app(args.archive), host=args.host, port=args.port)
    except (ConfigError, MeshError, InputError, archive_mod.ArchiveError,
            FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
