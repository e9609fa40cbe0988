import pytest
from fastapi.testclient import TestClient

from index import app


@pytest.fixture
def client(monkeypatch, config_file):
    monkeypatch.setenv("DAILY_DOSE_CONFIG", str(config_file))
    with TestClient(app) as client:
        yield client


def test_root(client):
    response = client.get("/api/")

    assert response.status_code == 200
    assert response.json()["name"] == "The Daily Dose"
    assert response.json()["institution"] == "Mayo Clinic"


def test_health(client):
    body = client.get("/api/health").json()

    assert body["status"] == "ok"
    assert body["timezone"] == "America/Chicago"
    assert body["next_run"]


def test_fixtures_validate(client):
    body = client.get("/api/fixtures/validate").json()

    assert body["ok"] is True
    assert body["findings"] == []


def test_run_and_fetch_the_report(client):
    response = client.post("/api/run", params={"date": "2025-08-04", "dry_run": "true"})

    assert response.status_code == 200
    report = response.json()
    assert report["dry_run"] is True
    assert report["totals"]["digests"] == 3
    assert report["totals"]["errors"] == 0

    stored = client.get(f"/api/runs/{report['run_id']}")
    assert stored.status_code == 200
    assert stored.json()["run_id"] == report["run_id"]


def test_run_for_one_physician(client):
    report = client.post("/api/run", params={"date": "2025-08-04", "physician": "dr-B", "dry_run": "true"}).json()

    assert [p["physician_id"] for p in report["physicians"]] == ["dr-B"]


def test_unknown_physician(client):
    response = client.post("/api/run", params={"date": "2025-08-04", "physician": "dr-Z"})

    assert response.status_code == 404
    assert response.json()["reason"] == "Unknown physician."


def test_unknown_run(client):
    assert client.get("/api/runs/19700101-nothing").status_code == 404


def test_bad_date(client):
    assert client.post("/api/run", params={"date": "yesterday"}).status_code == 422
