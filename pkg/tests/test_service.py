"""HTTP service tests against a small precomputed archive."""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from stokesrom import cli
from stokesrom.service import create_app

CFG = """\
case = couette
mesh.degree = 2
case.n_r = 1
case.n_phi = 6
pmesh.n_el = 4
pgd.eta_star = 1e-2
pgd.max_modes = 4
output.dir = {out}
"""


@pytest.fixture(scope="module")
def served(tmp_path_factory):
    out = tmp_path_factory.mktemp("srv")
    cfg_path = out / "run.cfg"
    cfg_path.write_text(CFG.format(out=out))
    apath, _ = cli.run_offline(cfg_path)
    app = create_app(apath)
    return apath, TestClient(app)


def test_meta(served):
    _, client = served
    r = client.get("/api/meta")
    assert r.status_code == 200
    meta = r.json()
    assert meta["case"] == "couette"
    assert meta["axes"] == [{"name": "mu1", "bounds": [1.0, 3.0]}]
    assert meta["variables"] == ["u_mag", "u_x", "u_y", "p"]
    assert "drag:inner" in meta["qois"]
    assert len(meta["amplitudes"]["uhat"]) == meta["n_modes"] >= 1


def test_evaluate_matches_cli(served):
    apath, client = served
    r = client.post("/api/evaluate", json={"mu": [2.0]})
    assert r.status_code == 200
    want = cli.run_evaluate(apath, [2.0])
    del want["n_modes"]
    got = r.json()
    assert got == json.loads(json.dumps(want))  # bit-exact through JSON
    # repeated request gives identical bytes
    r2 = client.post("/api/evaluate", json={"mu": [2.0]})
    assert r2.content == r.content


def test_evaluate_errors(served):
    _, client = served
    r = client.post("/api/evaluate", json={"mu": [9.0]})
    assert r.status_code == 422 and "error" in r.json()
    r = client.post("/api/evaluate", json={"mu": [1.0, 2.0]})
    assert r.status_code == 422
    r = client.post("/api/evaluate", json={})
    assert r.status_code == 400 and "error" in r.json()
    r = client.post("/api/evaluate", content=b"not json")
    assert r.status_code == 400


def test_field_raster(served):
    _, client = served
    r = client.post("/api/field", json={"mu": [1.5], "var": "u_mag", "res": 48})
    assert r.status_code == 200
    out = r.json()
    assert out["res"] == 48 and len(out["values"]) == 48
    vals = np.array(
        [[np.nan if v is None else v for v in row] for row in out["values"]]
    )
    assert np.isnan(vals).any()  # hole inside the inner radius
    assert np.nanmax(vals) <= out["vmax"] + 1e-12
    # annulus centred at the origin: centre pixel is inside the hole
    assert out["values"][24][24] is None
    # inner boundary polyline sits at the parametrised radius
    inner = [b for b in out["boundary"] if b["tag"] == "inner"]
    assert inner
    pts = np.array(inner[0]["points"])
    assert np.abs(np.linalg.norm(pts, axis=1) - 1.5).max() < 1e-10


def test_field_errors(served):
    _, client = served
    assert client.post("/api/field", json={"mu": [1.5], "var": "vorticity"}).status_code == 400
    assert client.post("/api/field", json={"mu": [1.5], "res": 1}).status_code == 400
    assert client.post("/api/field", json={"mu": [1.5], "res": 1000}).status_code == 400
    assert client.post("/api/field", json={"mu": [8.0]}).status_code == 422


def test_surface(served):
    apath, client = served
    r = client.post("/api/surface", json={"qoi": "drag:inner", "grid": [5]})
    assert r.status_code == 200
    out = r.json()
    assert out["grid"] == [5] and len(out["values"]) == 5
    assert out["axes"][0] == [1.0, 1.5, 2.0, 2.5, 3.0]
    # grid point equals the pointwise evaluation
    want = cli.run_evaluate(apath, [2.0])["forces"]["inner"][0]
    assert out["values"][2] == want


def test_surface_errors(served):
    _, client = served
    assert client.post("/api/surface", json={"qoi": "lift"}).status_code == 400
    assert client.post("/api/surface", json={"qoi": "drag:inner", "grid": [500]}).status_code == 400
    assert client.post("/api/surface", json={"qoi": "drag:inner", "grid": [3, 3]}).status_code == 400
    assert client.post("/api/surface", json={}).status_code == 400
