"""Record live API responses as frontend test fixtures.

Runs the real service in-process against the trained desk-stack cache and
captures: a dataset item, a finished explain job (region-targeted, so both
zero and nonzero delta norms appear), and a failed job.

Usage:  python3 tools/record_fixtures.py [--cache .desk_cache/v1] [--out frontend/test/fixtures]
"""

import argparse
import json
import tempfile
import time
from pathlib import Path

from fastapi.testclient import TestClient

from steexlab.service import create_app


def wait(client, job_id, timeout=180.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        payload = client.get(f"/api/jobs/{job_id}").json()
        if payload["state"] in ("done", "failed"):
            return payload
        time.sleep(0.2)
    raise TimeoutError(job_id)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--cache", default=".desk_cache/v1")
    parser.add_argument("--out", default="frontend/test/fixtures")
    args = parser.parse_args()
    cache = Path(args.cache).resolve()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as home:
        client = TestClient(create_app(home, max_workers=1))
        for body in [
            {"id": "clf_full", "kind": "classifier", "path": str(cache / "clf_full")},
            {"id": "seg", "kind": "segmenter", "path": str(cache / "seg")},
            {"id": "ae", "kind": "autoencoder", "path": str(cache / "ae")},
        ]:
            assert client.post("/api/models", json=body).status_code == 201
        assert client.post(
            "/api/datasets", json={"id": "val", "path": str(cache / "dataset")}
        ).status_code == 201

        from steexlab.synthetic import SceneDataset

        dataset = SceneDataset.load(cache / "dataset")
        index = dataset.val_indices[0]

        item = client.get(f"/api/datasets/val/items/{index}?segmenter=seg").json()
        (out / "dataset_item.json").write_text(json.dumps(item, indent=2))

        present = item["present_classes"]
        targets = [c for c in present if c in (3, 4)] or present[:1]
        job_id = client.post("/api/jobs/explain", json={
            "model": "clf_full",
            "stack": {"segmenter": "seg", "autoencoder": "ae"},
            "image": {"dataset": "val", "index": index},
            "target_regions": targets,
            "optimizer": {"num_steps": 40, "seed": 7},
        }).json()["job_id"]
        done = wait(client, job_id)
        assert done["state"] == "done", done
        (out / "job_done.json").write_text(json.dumps(done, indent=2))

        job_id = client.post("/api/jobs/explain", json={
            "model": "clf_full",
            "stack": {"segmenter": "seg", "autoencoder": "ae"},
            "image": {"dataset": "val", "index": index},
            "optimizer": {"num_steps": 5, "learning_rate": 1e25, "seed": 0},
        }).json()["job_id"]
        failed = wait(client, job_id)
        assert failed["state"] == "failed", failed
        (out / "job_failed.json").write_text(json.dumps(failed, indent=2))

    print(f"fixtures written to {out}")


if __name__ == "__main__":
    main()
