"""HTTP service exposing the pipeline: job submission, registry, datasets.

Thin and stateless per request: all state lives in the registry file, the
job store directory, and checkpoint/dataset directories under the home
directory (env STEEXLAB_HOME unless given explicitly).
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, JSONResponse

from . import engine
from .errors import (
    CounterClassError,
    InvalidMaskError,
    NumericalFailureError,
    RegistryError,
    ShapeError,
)
from .imaging import image_from_png_base64, image_to_png_base64, mask_to_png_base64
from .jobs import JobRunner, JobStore
from .registry import ModelRegistry
from .schemas import ALL_SCHEMAS, EXPLAIN_REQUEST_SCHEMA, SCHEMA_VERSION
from .types import (
    AUTO_FLIP,
    CounterfactualRequest,
    OptimizerConfig,
    RegionTargetSpec,
)

DEFAULT_PORT = 8321


def default_home() -> Path:
    return Path(os.environ.get("STEEXLAB_HOME", Path.home() / ".steexlab"))


def _parse_counter_class(value, class_names: tuple[str, ...]):
    if value is None:
        return AUTO_FLIP
    if isinstance(value, bool):
        raise HTTPException(400, detail="counter_class must be an index, a name, or null")
    if isinstance(value, int):
        if not 1 <= value <= len(class_names):
            raise HTTPException(400, detail=f"counter_class {value} outside 1..{len(class_names)}")
        return value
    if isinstance(value, str):
        if value not in class_names:
            raise HTTPException(400, detail=f"unknown decision class {value!r}")
        return class_names.index(value) + 1
    raise HTTPException(400, detail="counter_class must be an index, a name, or null")


def _parse_regions(value, profile) -> RegionTargetSpec:
    if value is None:
        return RegionTargetSpec.all_classes(profile.num_classes)
    indices = []
    for item in value:
        if isinstance(item, int):
            if not 1 <= item <= profile.num_classes:
                raise HTTPException(400, detail=f"region index {item} outside 1..{profile.num_classes}")
            indices.append(item)
        elif isinstance(item, str):
            if item not in profile.class_names:
                raise HTTPException(400, detail=f"unknown region name {item!r}")
            indices.append(profile.class_index(item))
        else:
            raise HTTPException(400, detail="regions must be names or 1-based indices")
    return RegionTargetSpec(frozenset(indices))


def create_app(home: str | Path | None = None, max_workers: Optional[int] = None) -> FastAPI:
    home = Path(home) if home is not None else default_home()
    registry = ModelRegistry(home)
    store = JobStore(home)
    runner = JobRunner(store, max_workers=max_workers)

    app = FastAPI(title="steexlab", version=SCHEMA_VERSION)
    app.state.home = home
    app.state.registry = registry
    app.state.store = store
    app.state.runner = runner

    from fastapi.middleware.cors import CORSMiddleware

    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.get("/api/schema")
    def get_schema():
        return {"version": SCHEMA_VERSION, "schemas": ALL_SCHEMAS}

    @app.get("/api/models")
    def list_models():
        return {"models": [e.to_jsonable() for e in registry.list_models()]}

    @app.post("/api/models", status_code=201)
    def register_model(body: dict):
        for key in ("id", "kind", "path"):
            if key not in body:
                raise HTTPException(400, detail=f"missing field {key!r}")
        try:
            entry = registry.register_model(body["id"], body["kind"], body["path"])
        except RegistryError as exc:
            status = 409 if "already registered" in str(exc) else 400
            raise HTTPException(status, detail=str(exc)) from exc
        return entry.to_jsonable()

    @app.post("/api/datasets", status_code=201)
    def register_dataset(body: dict):
        for key in ("id", "path"):
            if key not in body:
                raise HTTPException(400, detail=f"missing field {key!r}")
        try:
            return registry.register_dataset(body["id"], body["path"])
        except RegistryError as exc:
            status = 409 if "already registered" in str(exc) else 400
            raise HTTPException(status, detail=str(exc)) from exc

    @app.get("/api/datasets/{dataset_id}/items/{index}")
    def dataset_item(dataset_id: str, index: int, segmenter: Optional[str] = None):
        try:
            dataset = registry.load_dataset(dataset_id)
        except RegistryError as exc:
            raise HTTPException(404, detail=str(exc)) from exc
        if not 0 <= index < len(dataset):
            raise HTTPException(404, detail=f"item {index} outside dataset of size {len(dataset)}")
        image = dataset.image(index)
        mask = dataset.mask(index)
        if segmenter is not None:
            try:
                seg = registry.load_model(segmenter)
            except RegistryError as exc:
                raise HTTPException(400, detail=str(exc)) from exc
            mask = seg.segment(image)
        return {
            "index": index,
            "image_png_base64": image_to_png_base64(image),
            "mask_png_base64": mask_to_png_base64(mask),
            "mask_labels": mask.labels.tolist(),
            "present_classes": sorted(mask.present_classes()),
            "class_names": list(dataset.profile.class_names),
            "label": dataset.label(index),
            "predicted": segmenter is not None,
        }

    @app.post("/api/jobs/explain", status_code=202)
    def explain(body: dict):
        try:
            jsonschema.validate(body, EXPLAIN_REQUEST_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise HTTPException(400, detail=f"invalid request: {exc.message}") from exc

        try:
            model = registry.load_model(body["model"])
            entry = registry.get_model_entry(body["model"])
            if entry.kind != "classifier":
                raise HTTPException(400, detail=f"{body['model']!r} is not a classifier")
            stack = registry.load_stack(body["stack"]["segmenter"], body["stack"]["autoencoder"])
        except RegistryError as exc:
            raise HTTPException(400, detail=str(exc)) from exc

        profile = stack.profile
        if model.profile.to_jsonable() != profile.to_jsonable():
            raise HTTPException(409, detail="decision model and stack profiles are incompatible")

        image_ref = body["image"]
        if "dataset" in image_ref:
            try:
                dataset = registry.load_dataset(image_ref["dataset"])
            except RegistryError as exc:
                raise HTTPException(400, detail=str(exc)) from exc
            if not 0 <= image_ref["index"] < len(dataset):
                raise HTTPException(400, detail="dataset index out of range")
            query = dataset.image(image_ref["index"])
        else:
            try:
                query = image_from_png_base64(image_ref["png_base64"])
            except Exception as exc:  # noqa: BLE001 - malformed upload
                raise HTTPException(400, detail=f"undecodable image: {exc}") from exc
        if query.height != profile.height or query.width != profile.width:
            raise HTTPException(409, detail="query image size does not match the stack profile")

        counter = _parse_counter_class(body.get("counter_class"), model.class_names)
        regions = _parse_regions(body.get("target_regions"), profile)
        optimizer = OptimizerConfig.from_jsonable(body.get("optimizer", {}))

        record = store.create(request=body)
        job_dir = store.job_dir(record.job_id)
        request = CounterfactualRequest(
            query_image=query,
            target_regions=regions,
            optimizer=optimizer,
            counter_class=counter,
            model_id=body["model"],
        )

        def run() -> tuple[str, None]:
            try:
                result = engine.generate_counterfactual(stack, model, request)
            except NumericalFailureError as exc:
                (job_dir / "failure_trajectory.json").write_text(
                    json.dumps({"step": exc.step, "trajectory": exc.trajectory})
                )
                raise
            out = engine.save_result_dir(result, job_dir / "result", query_image=query)
            return str(out), None

        runner.submit(record.job_id, run)
        return {"job_id": record.job_id}

    @app.get("/api/jobs/{job_id}")
    def get_job(job_id: str):
        try:
            record = store.get(job_id)
        except KeyError:
            raise HTTPException(404, detail=f"unknown job {job_id!r}")
        payload = record.to_jsonable()
        payload["result"] = None
        payload["artifact_urls"] = None
        if record.state == "done" and record.result_dir:
            result_json = Path(record.result_dir) / engine.RESULT_JSON
            payload["result"] = json.loads(result_json.read_text())
            names = ["result.json"] + list(payload["result"].get("artifacts", {}).values())
            payload["artifact_urls"] = {
                name: f"/api/jobs/{job_id}/artifacts/{name}" for name in names
            }
        return payload

    @app.get("/api/jobs/{job_id}/artifacts/{name}")
    def get_artifact(job_id: str, name: str):
        try:
            record = store.get(job_id)
        except KeyError:
            raise HTTPException(404, detail=f"unknown job {job_id!r}")
        if record.result_dir is None:
            raise HTTPException(404, detail="job has no artifacts")
        base = Path(record.result_dir).resolve()
        target = (base / name).resolve()
        if base not in target.parents and target != base:
            raise HTTPException(404, detail="unknown artifact")
        if not target.is_file():
            raise HTTPException(404, detail=f"unknown artifact {name!r}")
        return FileResponse(target)

    return app


def serve(home: str | Path | None = None, port: Optional[int] = None) -> None:
    """Run the service with uvicorn (blocking)."""
    import uvicorn

    port = port or int(os.environ.get("STEEXLAB_PORT", DEFAULT_PORT))
    uvicorn.run(create_app(home), host="127.0.0.1", port=port)
