import math

import numpy as np
import pytest
from fastapi.testclient import TestClient

from prandtl_lab.main import app
from prandtl_lab.numerics.grid import Field, Role, build_grid
from prandtl_lab.services import storage


@pytest.fixture
def client():
    return TestClient(app)


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json()["status"] == "healthy"
    assert "X-Process-Time" in response.headers


def test_create_and_read_run(client, hartmann_yaml):
    response = client.post("/runs", json={"config_yaml": hartmann_yaml})
    assert response.status_code == 201
    run = response.json()["data"]["run"]
    assert run["status"] == "completed"
    assert run["verdicts"][0]["status"] == "completed_horizon"

    fetched = client.get(f"/runs/{run['config_hash']}")
    assert fetched.status_code == 200
    assert fetched.json()["config_hash"] == run["config_hash"]


def test_invalid_config_lists_violations(client):
    response = client.post("/runs", json={"config_yaml": "grid:\n  n_x: 2\nhorizon: 0\n"})
    assert response.status_code == 422
    detail = response.json()["detail"]
    assert len(detail["violations"]) == 2
    assert detail["line"] is None


def test_unknown_run(client):
    assert client.get("/runs/" + "f" * 64).status_code == 404


def test_blasius_summary(client):
    response = client.get("/selfsimilar/blasius")
    assert response.status_code == 200
    body = response.json()
    assert body["wall_shear"] == pytest.approx(0.4696, abs=1e-4)
    assert body["wall_shear_classical"] == pytest.approx(0.4696 / math.sqrt(2.0), abs=1e-4)
    assert body["table"] is None


def test_norms_upload(client, tmp_path):
    grid = build_grid(16, 2 * math.pi, 201, 20.0)
    _, Y = grid.mesh()
    path = storage.write_snapshot(Field(grid, Role.GENERIC, np.exp(-Y)), tmp_path / "f.csv")
    with open(path, "rb") as fh:
        response = client.post("/norms", params={"s": 0, "gamma": 1.0}, files={"file": ("f.csv", fh, "text/csv")})
    assert response.status_code == 200
    values = response.json()["data"]["report"]["values"]
    assert values["H^0,1[0]"] == pytest.approx(math.sqrt(5 * math.pi / 2), rel=1e-2)


def test_norms_bad_weight(client, tmp_path):
    response = client.post("/norms", params={"gamma": 1.0, "sigma": 1.2}, files={"file": ("f.csv", b"", "text/csv")})
    assert response.status_code == 422


def test_read_run_uses_request_session(client, hartmann_yaml):
    from prandtl_lab.database import SessionLocal, get_db

    run = client.post("/runs", json={"config_yaml": hartmann_yaml}).json()["data"]["run"]
    opened = []

    def tracking_db():
        db = SessionLocal()
        opened.append(db)
        try:
            yield db
        finally:
            db.close()

    app.dependency_overrides[get_db] = tracking_db
    try:
        fetched = client.get(f"/runs/{run['config_hash']}")
    finally:
        app.dependency_overrides.clear()
    assert fetched.status_code == 200
    assert fetched.json()["config_hash"] == run["config_hash"]
    assert len(opened) == 1
