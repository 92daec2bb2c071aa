import json

import pytest
from fastapi.testclient import TestClient

from main import app


@pytest.fixture
def client():
    return TestClient(app)


def test_health(client):
    response = client.get("/api/health")
    assert response.status_code == 200
    assert response.json()["service"] == "rwre-lab"


def test_root_lists_endpoints(client):
    assert "experiments" in client.get("/").json()["endpoints"]


class TestDirichlet:
    def test_report(self, client):
        response = client.get("/api/dirichlet", params=[("alphas", a) for a in (2, 1, 1, 1)])
        assert response.status_code == 200
        body = response.json()
        assert body["kappa"] == pytest.approx(7.0)
        assert body["t_gamma_sufficient"] is False

    def test_rejects_nonpositive_weights(self, client):
        response = client.get("/api/dirichlet", params=[("alphas", a) for a in (1, 0, 1, 1)])
        assert response.status_code == 422


class TestExperiments:
    def test_runs_into_output_dir(self, client, tmp_path):
        body = {
            "experiment": "qn-curve",
            "environment": {"kind": "dirichlet", "dirichlet": {"dimension_d": 2, "alphas": [2.0, 0.5, 0.5, 0.5]}},
            "n_grid": [4, 8],
            "replicates": 3,
            "output_dir": str(tmp_path),
        }
        response = client.post("/api/experiments/qn-curve", json=body)
        assert response.status_code == 200
        manifest = response.json()
        assert "qn-curve_qn_curve.csv" in manifest["files"]
        assert json.loads((tmp_path / "manifest.json").read_text())["experiment"] == "qn-curve"

    def test_path_must_match_body(self, client):
        body = {"experiment": "qn-curve", "environment": {"kind": "deterministic", "probs": {"probs": [1, 0, 0, 0]}},
                "n_grid": [4]}
        assert client.post("/api/experiments/regen-tail", json=body).status_code == 422

    def test_unknown_experiment(self, client):
        assert client.post("/api/experiments/nope", json={}).status_code == 422
