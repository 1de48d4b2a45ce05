"""HTTP service tests via FastAPI's in-process test client."""
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from vitaldyn.service import create_app

FAST_EM = {"max_iterations": 2, "bfgs_evals_early": 40,
           "bfgs_evals_late": 30, "bfgs_early_iters": 1}
TEMPLATE = {"pattern": [2.0, 5.0, 2.0], "block_minutes": 15.0, "dt": 15.0}


@pytest.fixture(scope="module")
def client(tmp_path_factory):
    store = tmp_path_factory.mktemp("store")
    app = create_app(store_dir=store, max_workers=2)
    with TestClient(app) as c:
        yield c


def simulate_patient(client, seed=3):
    res = client.post("/simulate", json={"seed": seed, "template": TEMPLATE})
    assert res.status_code == 200, res.text
    return res.json()


def wait_for_job(client, job_id, timeout=60.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        res = client.get(f"/fits/{job_id}")
        assert res.status_code == 200
        body = res.json()
        if body["status"] in ("done", "failed"):
            return body
        time.sleep(0.1)
    raise AssertionError("fit job did not finish in time")


def start_fit(client, sim, seed=0):
    return client.post("/fits", json={
        "family": "io-nlds",
        "series": {"dt": sim["dt"], "channel_names": sim["channels"],
                   "values": sim["values"], "mask": sim["mask"]},
        "protocol": {"dt": sim["dt"], "rates": sim["protocol"]},
        "seed": seed,
        "em": FAST_EM,
    })


@pytest.fixture(scope="module")
def fitted_model(client):
    sim = simulate_patient(client)
    res = start_fit(client, sim)
    assert res.status_code == 202, res.text
    job = wait_for_job(client, res.json()["job_id"])
    assert job["status"] == "done", job
    return sim, job["model"]["id"]


class TestSimulate:
    def test_single_patient_payload(self, client):
        sim = simulate_patient(client)
        assert sim["channels"] == ["BPsys", "BPdia", "BIS"]
        assert "config_hash" in sim
        values = np.asarray(sim["values"], dtype=float)
        assert values.shape == (180, 3)
        assert len(sim["protocol"]) == 180

    def test_same_seed_reproduces(self, client):
        a = simulate_patient(client, seed=8)
        b = simulate_patient(client, seed=8)
        assert a["values"] == b["values"]

    def test_cohort_mode(self, client):
        res = client.post("/simulate", json={"seed": 1, "n_patients": 2})
        assert res.status_code == 200
        assert len(res.json()["patients"]) == 2

    def test_invalid_body_is_400(self, client):
        res = client.post("/simulate", json={"seed": "not-an-int"})
        assert res.status_code == 400


class TestFitJobs:
    def test_job_lifecycle_and_model_retrieval(self, client, fitted_model):
        _, model_id = fitted_model
        res = client.get(f"/models/{model_id}")
        assert res.status_code == 200
        body = res.json()
        assert body["family"] == "io-nlds"
        assert "params" in body
        assert "log_likelihood_trace" in body["fit_report"]
        listed = client.get("/models").json()
        assert model_id in listed["models"]

    def test_unknown_job_is_404(self, client):
        assert client.get("/fits/nope").status_code == 404

    def test_finished_job_rejects_modification(self, client, fitted_model):
        sim, _ = fitted_model
        res = start_fit(client, sim, seed=1)
        job_id = res.json()["job_id"]
        wait_for_job(client, job_id)
        res = client.post(f"/fits/{job_id}", json={})
        assert res.status_code == 409


class TestForecast:
    def test_free_run_forecast(self, client, fitted_model):
        sim, model_id = fitted_model
        res = client.post(f"/models/{model_id}/forecast", json={
            "protocol": {"dt": sim["dt"], "rates": sim["protocol"]},
            "horizon": "free"})
        assert res.status_code == 200, res.text
        body = res.json()
        T = len(sim["protocol"])
        assert len(body["means"]) == T
        assert len(body["variances"]) == T
        assert all(v > 0 for row in body["variances"] for v in row)

    def test_h_step_requires_series(self, client, fitted_model):
        sim, model_id = fitted_model
        protocol = {"dt": sim["dt"], "rates": sim["protocol"]}
        res = client.post(f"/models/{model_id}/forecast", json={
            "protocol": protocol, "horizon": "10"})
        assert res.status_code == 400
        res = client.post(f"/models/{model_id}/forecast", json={
            "protocol": protocol, "horizon": "10",
            "series": {"dt": sim["dt"], "channel_names": sim["channels"],
                       "values": sim["values"], "mask": sim["mask"]}})
        assert res.status_code == 200
        body = res.json()
        assert body["targets"][0] == 10
        assert len(body["means"]) == len(sim["protocol"]) - 10

    def test_bad_horizon_is_400(self, client, fitted_model):
        sim, model_id = fitted_model
        res = client.post(f"/models/{model_id}/forecast", json={
            "protocol": {"dt": sim["dt"], "rates": sim["protocol"]},
            "horizon": "soon"})
        assert res.status_code == 400

    def test_unknown_model_is_404(self, client, fitted_model):
        sim, _ = fitted_model
        res = client.post("/models/doesnotexist/forecast", json={
            "protocol": {"dt": sim["dt"], "rates": sim["protocol"]},
            "horizon": "free"})
        assert res.status_code == 404


class TestWhatIf:
    def _whatif(self, client, model_id, sim, thresholds, horizon=60):
        return client.post(f"/models/{model_id}/whatif", json={
            "protocol": {"dt": sim["dt"], "rates": sim["protocol"]},
            "horizon": horizon,
            "thresholds": thresholds,
            "channel_names": sim["channels"],
        })

    def test_bands_are_symmetric_95_percent(self, client, fitted_model):
        sim, model_id = fitted_model
        res = self._whatif(client, model_id, sim, {"BPsys": 100.0})
        assert res.status_code == 200, res.text
        body = res.json()
        means = np.asarray(body["means"])
        lower = np.asarray(body["band_lower"])
        upper = np.asarray(body["band_upper"])
        sd = np.sqrt(np.asarray(body["variances"]))
        assert means.shape == (60, 3)
        np.testing.assert_allclose(upper, means + 1.96 * sd, atol=1e-9)
        np.testing.assert_allclose(lower, means - 1.96 * sd, atol=1e-9)
        assert "BPsys" in body["threshold_crossings"]

    def test_threshold_outside_range_never_crossed(self, client, fitted_model):
        sim, model_id = fitted_model
        res = self._whatif(client, model_id, sim, {"BPsys": 1e7})
        assert res.status_code == 200
        assert res.json()["threshold_crossings"]["BPsys"] is None

    def test_unknown_channel_is_400(self, client, fitted_model):
        sim, model_id = fitted_model
        res = self._whatif(client, model_id, sim, {"HeartRate": 1.0})
        assert res.status_code == 400

    def test_identical_request_identical_response(self, client, fitted_model):
        sim, model_id = fitted_model
        a = self._whatif(client, model_id, sim, {"BIS": 50.0}).json()
        b = self._whatif(client, model_id, sim, {"BIS": 50.0}).json()
        assert a == b
