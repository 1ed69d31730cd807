import base64
import json
import time

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient

from sfe.checkpoint import save_generator
from sfe.rawio import labels_to_png_bytes, load_labels_png, load_rgb_png
from sfe.render import Generator
from sfe.service import create_app
from tests.conftest import tiny_config


@pytest.fixture
def service(tmp_path):
    cfg = tiny_config()
    torch.manual_seed(0)
    gen = Generator(cfg)
    data_dir = tmp_path / "data"
    (data_dir / "checkpoints").mkdir(parents=True)
    save_generator(data_dir / "checkpoints" / "tiny.sfe", gen, {"iteration": 0, "stage": 1})
    app = create_app(data_dir)
    client = TestClient(app)
    return client, data_dir


def poll(client, job_id, timeout=120.0):
    progresses = []
    deadline = time.time() + timeout
    while time.time() < deadline:
        record = client.get(f"/jobs/{job_id}").json()
        progresses.append(record["progress"])
        if record["state"] in ("done", "failed"):
            return record, progresses
        time.sleep(0.05)
    raise TimeoutError(f"job {job_id} did not finish")


class TestBasics:
    def test_health(self, service):
        client, _ = service
        assert client.get("/health").json() == {"status": "ok"}

    def test_checkpoints_listing(self, service):
        client, _ = service
        entries = client.get("/checkpoints").json()
        assert [e["id"] for e in entries] == ["tiny"]

    def test_unknown_checkpoint_echoes_id(self, service):
        client, _ = service
        resp = client.post("/render", json={"checkpoint_id": "ghost", "seed": 1})
        assert resp.status_code == 404
        assert "ghost" in resp.json()["detail"]

    def test_unknown_job_404(self, service):
        client, _ = service
        assert client.get("/jobs/nope").status_code == 404


class TestRender:
    def test_same_request_same_bytes(self, service):
        client, _ = service
        body = {"checkpoint_id": "tiny", "seed": 5, "pose": {"pitch": 0.1, "yaw": -0.2}}
        a = client.post("/render", json=body).json()
        b = client.post("/render", json=body).json()
        assert a["rgb_png"] == b["rgb_png"]
        assert a["labels_png"] == b["labels_png"]

    def test_seed_only_returns_latents(self, service):
        client, _ = service
        resp = client.post("/render", json={"checkpoint_id": "tiny", "seed": 3}).json()
        assert len(resp["z"]) == 16
        assert len(resp["z_i"]) == 4
        # replaying the returned latents reproduces the image
        again = client.post(
            "/render",
            json={"checkpoint_id": "tiny", "z": resp["z"], "z_i": resp["z_i"]},
        ).json()
        assert again["rgb_png"] == resp["rgb_png"]

    def test_malformed_pose_422(self, service):
        client, _ = service
        resp = client.post(
            "/render", json={"checkpoint_id": "tiny", "seed": 0, "pose": {"pitch": 3.0}}
        )
        assert resp.status_code == 422

    def test_latents_must_match_dim(self, service):
        client, _ = service
        resp = client.post("/render", json={"checkpoint_id": "tiny", "z": [0.0] * 3})
        assert resp.status_code == 422

    def test_semantic_endpoint_shapes(self, service):
        client, _ = service
        resp = client.post("/semantic", json={"checkpoint_id": "tiny", "seed": 2}).json()
        labels = load_labels_png(base64.b64decode(resp["labels_png"]))
        assert labels.shape == (16, 16)
        probs = np.frombuffer(base64.b64decode(resp["sem_probs"]), dtype="<f4")
        assert list(probs.reshape(resp["sem_meta"]["shape"]).shape) == [16, 16, 4]


class TestJobs:
    def invert_payload(self, client, steps=2):
        render = client.post("/render", json={"checkpoint_id": "tiny", "seed": 7}).json()
        return {
            "checkpoint_id": "tiny",
            "target_image": render["rgb_png"],
            "target_mask": render["labels_png"],
            "pose": {"pitch": 0.0, "yaw": 0.0},
            "steps": steps,
        }

    def test_invert_job_end_to_end(self, service):
        client, _ = service
        resp = client.post("/invert", json=self.invert_payload(client))
        assert resp.status_code == 200
        job_id = resp.json()["job_id"]
        record, progresses = poll(client, job_id)
        assert record["state"] == "done", record["error"]
        assert record["artifacts"]["final_miou"] is not None
        assert all(b >= a for a, b in zip(progresses, progresses[1:]))

    def test_conflicting_job_409(self, service):
        client, _ = service
        first = client.post("/invert", json=self.invert_payload(client, steps=80))
        job_id = first.json()["job_id"]
        second = client.post("/invert", json=self.invert_payload(client, steps=2))
        assert second.status_code == 409
        assert job_id in second.json()["detail"]
        poll(client, job_id)

    def test_edit_zero_diff_shortcut(self, service):
        client, _ = service
        resp = client.post("/invert", json=self.invert_payload(client))
        inversion_id = resp.json()["job_id"]
        record, _ = poll(client, inversion_id)
        assert record["state"] == "done", record["error"]

        labels = load_labels_png(
            (service[1] / "jobs" / inversion_id / "labels.png")
        )
        edit_resp = client.post(
            "/edit/preview",
            json={
                "checkpoint_id": "tiny",
                "inversion_id": inversion_id,
                "edited_mask_png": base64.b64encode(labels_to_png_bytes(labels)).decode(),
            },
        )
        assert edit_resp.status_code == 200
        record, _ = poll(client, edit_resp.json()["job_id"])
        assert record["state"] == "done", record["error"]
        assert record["artifacts"]["zero_diff"] is True
        assert record["artifacts"]["changed_pixels"] == 0

    def test_edit_mask_out_of_range_422(self, service):
        client, _ = service
        bad = np.full((16, 16), 9, dtype=np.int64)
        resp = client.post(
            "/edit/preview",
            json={
                "checkpoint_id": "tiny",
                "inversion_id": "whatever",
                "edited_mask_png": base64.b64encode(labels_to_png_bytes(bad)).decode(),
            },
        )
        assert resp.status_code == 422

    def test_transfer_appearance_job(self, service):
        client, _ = service
        ids = []
        for seed in (7, 8):
            render = client.post("/render", json={"checkpoint_id": "tiny", "seed": seed}).json()
            resp = client.post(
                "/invert",
                json={
                    "checkpoint_id": "tiny",
                    "target_image": render["rgb_png"],
                    "target_mask": render["labels_png"],
                    "steps": 2,
                },
            )
            job_id = resp.json()["job_id"]
            record, _ = poll(client, job_id)
            assert record["state"] == "done", record["error"]
            ids.append(job_id)
        resp = client.post(
            "/transfer",
            json={
                "checkpoint_id": "tiny",
                "source_inversion_id": ids[0],
                "target_inversion_id": ids[1],
                "semantic": 1,
                "mode": "appearance",
            },
        )
        record, _ = poll(client, resp.json()["job_id"])
        assert record["state"] == "done", record["error"]
        assert "offset_file" in record["artifacts"]

    def test_generic_jobs_endpoint_validates_kind(self, service):
        client, _ = service
        resp = client.post("/jobs", json={"kind": "mystery", "params": {}})
        assert resp.status_code == 422

    def test_pivot_endpoint_caches(self, service):
        client, _ = service
        a = client.post("/pivot", json={"checkpoint_id": "tiny", "sample_count": 64}).json()
        b = client.post("/pivot", json={"checkpoint_id": "tiny", "sample_count": 64}).json()
        assert a["pivot_id"] == b["pivot_id"]


class TestCrashRecovery:
    def test_interrupted_jobs_marked_failed(self, tmp_path):
        data_dir = tmp_path / "data"
        (data_dir / "jobs").mkdir(parents=True)
        stale = {
            "id": "deadbeef",
            "kind": "invert",
            "state": "running",
            "progress": 0.4,
            "params": {},
            "artifacts": {},
            "error": None,
            "trace_tail": [],
            "created_at": 0.0,
        }
        (data_dir / "jobs" / "deadbeef.json").write_text(json.dumps(stale))
        client = TestClient(create_app(data_dir))
        record = client.get("/jobs/deadbeef").json()
        assert record["state"] == "failed"
        assert "restart" in record["error"]
