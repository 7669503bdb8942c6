import pytest
from fastapi.testclient import TestClient

import api.endpoints as endpoints
import main
from utils import kv

client = TestClient(main.app)

COMPARE_BODY = {
    "scenarios": ["cutin"],
    "speed_groups": {"cutin": [29.39]},
    "n_per_group": 10,
    "models": ["ddm", "idm"],
    "seed": 1,
    "workers": 1,
}


@pytest.fixture(autouse=True)
def fresh_rate_limit():
    endpoints._request_log.clear()
    yield
    endpoints._request_log.clear()


def test_health_reports_redis(monkeypatch):
    monkeypatch.setattr(kv, "ping", lambda: True)
    res = client.get("/health")
    assert res.status_code == 200
    assert res.json() == {"ok": True}
    assert "X-Response-Time-ms" in res.headers


def test_fixture_route():
    res = client.get("/fixtures/cutin")
    assert res.status_code == 200
    body = res.json()
    assert body["scenario_kind"] == "cutin"
    assert body["theta"] == pytest.approx(71.97)
    assert client.get("/fixtures/highway").status_code == 422


def test_simulate():
    res = client.post("/simulate", json={"kind": "cutin", "v0A": 29.39, "n_trials": 200, "seed": 1})
    assert res.status_code == 200
    body = res.json()
    assert body["n_trials"] == 200
    assert body["p_brake"] + body["p_steer"] + body["p_none"] == pytest.approx(1.0)
    assert body["p_brake"] > 0.8
    assert "brake" in body["rt_quantiles"]


def test_simulate_is_reproducible():
    req = {"kind": "lanechange", "v0A": 23.27, "n_trials": 100, "seed": 5}
    assert client.post("/simulate", json=req).json() == client.post("/simulate", json=req).json()


def test_simulate_rejects_bad_input():
    assert client.post("/simulate", json={"kind": "cutin", "v0A": 29.39, "n_trials": 0}).status_code == 422
    assert client.post("/simulate", json={"kind": "cutin", "v0A": 29.39, "colour": "red"}).status_code == 422
    res = client.post("/simulate", json={"kind": "cutin", "v0A": 29.39, "params": {"sigma_nd": -1.0}})
    assert res.status_code == 422
    assert "sigma_nd" in res.json()["detail"]["error"]
    res = client.post("/simulate", json={"kind": "cutin", "v0A": 60.0})
    assert res.status_code == 422


def test_simulate_caps_trials(monkeypatch):
    monkeypatch.setattr(endpoints, "MAX_TRIALS", 50)
    res = client.post("/simulate", json={"kind": "cutin", "v0A": 29.39, "n_trials": 51})
    assert res.status_code == 422
    assert "capped" in res.json()["detail"]["error"]


def test_first_passage_rows():
    res = client.post("/first-passage", json={"kind": "cutin", "v0A": 25.82, "include_rows": True})
    assert res.status_code == 200
    body = res.json()
    assert body["p_upper"] + body["p_lower"] + body["p_survive"] == pytest.approx(1.0, abs=1e-6)
    assert body["p_lower"] > 0.9
    rows = body["rows"]
    assert len(rows["t"]) == len(rows["p_upper"]) == len(rows["p_lower"]) == len(rows["p_survive"])


def test_first_passage_unstable_grid_is_a_server_error():
    res = client.post("/first-passage", json={"kind": "cutin", "v0A": 25.82,
                                              "grid": {"dx": 0.5, "dt": 0.01, "auto": False}})
    assert res.status_code == 500
    assert "Peclet" in res.json()["detail"]["error"]


def test_fit_risk_accepts_rows_and_lists():
    samples = [
        {"a_x": 6.1, "a_y": 2.0},
        {"a_x": 7.4, "a_y": 3.1},
        [8.0, 1.2],
        [5.5, 2.6],
        [9.2, 3.9],
    ]
    res = client.post("/fit-risk", json={"samples": samples})
    assert res.status_code == 200
    body = res.json()
    assert body["model"]["n"] == 5
    assert body["model"]["features"] == ["a_x", "a_y"]
    assert len(body["assignments"]) == 5
    assert {a["level"] for a in body["assignments"]} <= {"low", "medium", "high"}


def test_fit_risk_errors():
    assert client.post("/fit-risk", json={"samples": [[1.0, 2.0]]}).status_code == 422
    assert client.post("/fit-risk", json={"samples": [[1.0, 2.0], [3.0]]}).status_code == 422
    res = client.post("/fit-risk", json={"samples": [[1.0, 2.0], [2.0, 1.0]], "features": ["a_x", "jerk"]})
    assert res.status_code == 422
    assert "jerk" in res.json()["detail"]["error"]


def test_compare_serves_etag_and_not_modified(monkeypatch):
    store = {}
    monkeypatch.setattr(endpoints, "cache_get_report", lambda key: store.get(key))
    monkeypatch.setattr(endpoints, "cache_set_report", lambda key, report: store.setdefault(key, report) is not None)

    first = client.post("/compare", json=COMPARE_BODY)
    assert first.status_code == 200
    assert first.headers["X-Cache"] == "MISS"
    etag = first.headers["ETag"]
    assert first.json()["metadata"]["source"] == "synthetic"

    second = client.post("/compare", json=COMPARE_BODY)
    assert second.headers["X-Cache"] == "HIT"
    assert second.headers["ETag"] == etag

    again = client.post("/compare", json=COMPARE_BODY, headers={"If-None-Match": etag})
    assert again.status_code == 304


def test_compare_rejects_trial_paths():
    res = client.post("/compare", json={**COMPARE_BODY, "trials_path": "/etc/passwd"})
    assert res.status_code == 422


def test_rate_limit(monkeypatch):
    monkeypatch.setattr(endpoints, "RATE_LIMIT_PER_MIN", 2)
    body = {"samples": [[1.0, 2.0], [2.0, 1.0], [3.0, 3.5]]}
    assert client.post("/fit-risk", json=body).status_code == 200
    assert client.post("/fit-risk", json=body).status_code == 200
    res = client.post("/fit-risk", json=body)
    assert res.status_code == 429
    assert res.json()["detail"]["error"].startswith("Rate limit")
