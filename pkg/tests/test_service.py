import numpy as np
import pytest

from marsim.volume import Volume3D, VolumeKind, read_volume, write_volume

pytest.importorskip("fastapi")
from starlette.testclient import TestClient  # noqa: E402

from marsim.service import create_app  # noqa: E402


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


@pytest.fixture(scope="module")
def volume_pair(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc")
    rng = np.random.default_rng(0)
    data = rng.uniform(-1000, 1000, (4, 16, 16))
    a = Volume3D(data, (1.0, 1.0, 1.0), VolumeKind.HU)
    b = Volume3D(np.clip(data + 50.0, -1024, 3071), (1.0, 1.0, 1.0), VolumeKind.HU)
    pa, pb = root / "a.marv", root / "b.marv"
    write_volume(a, pa)
    write_volume(b, pb)
    return pa, pb


class TestHealth:
    def test_health(self, client):
        r = client.get("/health")
        assert r.status_code == 200
        body = r.json()
        assert body["status"] == "ok"


class TestMetricsEndpoint:
    def test_identical(self, client, volume_pair):
        pa, _ = volume_pair
        r = client.post("/metrics", json={"a_path": str(pa), "b_path": str(pa)})
        assert r.status_code == 200
        body = r.json()
        assert body["rmse"] == 0.0
        assert body["identical"] is True

    def test_different(self, client, volume_pair):
        pa, pb = volume_pair
        r = client.post("/metrics", json={"a_path": str(pa), "b_path": str(pb)})
        assert r.status_code == 200
        assert r.json()["rmse"] > 0.0

    def test_missing_file_maps_to_data_error(self, client, tmp_path):
        r = client.post(
            "/metrics",
            json={"a_path": str(tmp_path / "no.marv"), "b_path": str(tmp_path / "no.marv")},
        )
        assert r.status_code == 400
        assert r.json()["error_type"] == "data"

    def test_unwritable_output_maps_to_data_error(self, client, volume_pair, tmp_path):
        pa, _ = volume_pair
        r = client.post(
            "/baseline",
            json={
                "method": "li",
                "in_path": str(pa),
                "out_path": str(tmp_path / "missing_dir" / "x.marv"),
                "n_views": 45,
            },
        )
        assert r.status_code == 400
        assert r.json()["error_type"] == "data"


class TestGenerateEndpoint:
    def test_generate_and_evaluate(self, client, tmp_path):
        cfg = tmp_path / "gen.cfg"
        cfg.write_text(
            "dataset.n_volumes = 1\n"
            f"dataset.out_dir = {tmp_path / 'ds'}\n"
            "dataset.seed = 5\n"
            "grid.nx = 32\ngrid.ny = 32\ngrid.nz = 6\n"
            "grid.spacing_x_mm = 0.35\ngrid.spacing_y_mm = 0.35\ngrid.spacing_z_mm = 0.7\n"
            "spiral.height_mm = 1.6\nspiral.turns = 2.0\n"
            "sim.n_views = 60\nsim.noise_sigma2 = 0.0\nsim.alpha_r = 0.01\n"
        )
        r = client.post("/generate", json={"config_path": str(cfg)})
        assert r.status_code == 200
        body = r.json()
        assert body["n_samples"] == 1
        assert body["failures"] == []

        r2 = client.post(
            "/evaluate",
            json={
                "manifest": body["manifest"],
                "methods": ["li"],
                "out_csv": str(tmp_path / "t.csv"),
                "n_views": 60,
            },
        )
        assert r2.status_code == 200
        rows = r2.json()["rows"]
        means = {x["method"]: x for x in rows if x["volume_id"] == "mean"}
        assert set(means) == {"untreated", "li"}

    def test_bad_config_maps_to_422(self, client, tmp_path):
        r = client.post("/generate", json={"config_path": str(tmp_path / "nope.cfg")})
        assert r.status_code == 422
        assert r.json()["error_type"] == "config"

    def test_schema_validation(self, client):
        r = client.post("/generate", json={"workers": 2})
        assert r.status_code == 422


class TestBaselineEndpoint:
    def test_li_on_volume(self, client, volume_pair, tmp_path):
        pa, _ = volume_pair
        out = tmp_path / "li.marv"
        r = client.post(
            "/baseline",
            json={"method": "li", "in_path": str(pa), "out_path": str(out), "n_views": 45},
        )
        assert r.status_code == 200
        got = read_volume(out)
        assert got.dims == (16, 16, 4)


class TestExportEndpoint:
    def test_export(self, client, volume_pair, tmp_path):
        pa, _ = volume_pair
        r = client.post(
            "/export-slices",
            json={"in_path": str(pa), "axis": "z", "indices": [0, 2], "out_dir": str(tmp_path)},
        )
        assert r.status_code == 200
        assert len(r.json()["files"]) == 2

    def test_bad_index(self, client, volume_pair, tmp_path):
        pa, _ = volume_pair
        r = client.post(
            "/export-slices",
            json={"in_path": str(pa), "axis": "z", "indices": [99], "out_dir": str(tmp_path)},
        )
        assert r.status_code == 400


class TestScatterBankEndpoint:
    def test_small_bank(self, client, tmp_path):
        out = tmp_path / "bank.marb"
        r = client.post(
            "/scatter-bank",
            json={"out_path": str(out), "histories": 4000, "n_views": 6, "n_detectors": 32},
        )
        assert r.status_code == 200
        body = r.json()
        assert body["primary_mean"] > 0
        assert out.is_file()


class TestSimulateEndpoint:
    def test_simulate_default(self, client, tmp_path):
        from conftest import smooth_hu_phantom

        vol = smooth_hu_phantom(24, 24, 2)
        pin = tmp_path / "in.marv"
        write_volume(vol, pin)
        pout = tmp_path / "out.marv"
        r = client.post("/simulate", json={"in_path": str(pin), "out_path": str(pout)})
        assert r.status_code == 200
        assert read_volume(pout).dims == vol.dims
