"""HTTP query service over a loaded modes archive.

Endpoints (JSON): ``GET /api/meta``, ``POST /api/evaluate``,
``POST /api/field`` and ``POST /api/surface``.  Every response is a
pure function of (archive, request); errors are returned as
``{"error": <message>}`` with status 400 (bad request), 409 (archive
mismatch) or 422 (parameters out of range).
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .mesh import mesh_hash
from .online import FIELD_VARS, OnlineState, load_state

MAX_GRID = 201
MAX_RES = 512


def _err(status, message):
    return JSONResponse({"error": str(message)}, status_code=status)


def _finite(obj):
    """Recursively replace non-finite numbers with None."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def create_app(archive_path, state: OnlineState = None) -> FastAPI:
    state = state or load_state(archive_path)
    app = FastAPI(title="stokesrom query service")
    app.state.online = state

    def check_archive():
        if mesh_hash(state.pre.mesh) != state.archive.header["mesh_hash"]:
            return _err(409, "archive does not match the served mesh")
        return None

    async def body_json(request: Request):
        try:
            data = await request.json()
        except Exception:
            return None
        return data if isinstance(data, dict) else None

    @app.get("/api/meta")
    def meta():
        return _finite({
            "case": state.problem.name,
            "axes": state.axes,
            "n_modes": state.solution.n_modes,
            "variables": list(FIELD_VARS),
            "qois": state.qoi_names(),
            "amplitudes": {
                var: [mode.sigma[var] for mode in state.solution.modes]
                for var in ("uhat", "u", "p")
            },
        })

    @app.post("/api/evaluate")
    async def evaluate(request: Request):
        bad = check_archive()
        if bad is not None:
            return bad
        data = await body_json(request)
        if data is None or "mu" not in data:
            return _err(400, 'expected JSON body {"mu": [...]}')
        try:
            mu = state.check_mu(data["mu"])
        except (ValueError, TypeError) as exc:
            return _err(422, exc)
        return _finite(state.evaluate_qois(mu))

    @app.post("/api/field")
    async def field(request: Request):
        bad = check_archive()
        if bad is not None:
            return bad
        data = await body_json(request)
        if data is None or "mu" not in data:
            return _err(400, 'expected JSON body {"mu": [...], "var": ..., "res": ...}')
        var = data.get("var", "u_mag")
        res = data.get("res", 96)
        if not isinstance(res, int) or not (2 <= res <= MAX_RES):
            return _err(400, f"res must be an integer in [2, {MAX_RES}]")
        if var not in FIELD_VARS:
            return _err(400, f"unknown variable {var!r}; expected one of {FIELD_VARS}")
        try:
            mu = state.check_mu(data["mu"])
        except (ValueError, TypeError) as exc:
            return _err(422, exc)
        return _finite(state.sample_field(mu, var, res))

    @app.post("/api/surface")
    async def surface(request: Request):
        bad = check_archive()
        if bad is not None:
            return bad
        data = await body_json(request)
        if data is None or "qoi" not in data:
            return _err(400, 'expected JSON body {"qoi": ..., "grid": [...]}')
        qoi = data["qoi"]
        if qoi not in state.qoi_names():
            return _err(400, f"unknown QoI {qoi!r}; expected one of {state.qoi_names()}")
        naxes = len(state.problem.param_box)
        grid = data.get("grid", [21] * naxes)
        if (not isinstance(grid, list) or len(grid) != naxes
                or not all(isinstance(g, int) and 1 <= g for g in grid)):
            return _err(400, f"grid must be a list of {naxes} positive integers")
        if any(g > MAX_GRID for g in grid):
            return _err(400, f"grid too large (max {MAX_GRID} per axis)")
        axes_vals = [
            np.linspace(a, b, g) if g > 1 else np.array([0.5 * (a + b)])
            for (a, b), g in zip(state.problem.param_box, grid)
        ]
        mesh_mu = np.meshgrid(*axes_vals, indexing="ij")
        flat = np.stack([g.ravel() for g in mesh_mu], axis=-1)
        values = [state.qoi_value(qoi, mu) for mu in flat]
        shape = [len(a) for a in axes_vals]
        nested = np.asarray(values, dtype=float).reshape(shape)
        return _finite({
            "qoi": qoi,
            "grid": shape,
            "axes": [[float(v) for v in a] for a in axes_vals],
            "values": nested.tolist(),
        })

    static_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if static_dir.is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    return app
