"""Versioned JSON Schemas for every payload the HTTP service emits or accepts.

Served at GET /api/schema and shipped with the package so clients can pin
their contract; the test suite validates live responses against these.
"""

from __future__ import annotations

SCHEMA_VERSION = "1"

_CODES = {
    "type": "object",
    "required": ["codes", "present_classes"],
    "properties": {
        "codes": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "present_classes": {"type": "array", "items": {"type": "integer", "minimum": 1}},
    },
}

RESULT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$id": "steexlab.result/1",
    "type": "object",
    "required": [
        "schema",
        "final_codes",
        "query_codes",
        "delta_norms",
        "loss_trajectory",
        "prob_trajectory",
        "success",
        "counter_class",
        "final_counter_prob",
        "model_id",
        "optimizer",
        "target_regions",
    ],
    "properties": {
        "schema": {"const": "steexlab.result/1"},
        "final_codes": _CODES,
        "query_codes": _CODES,
        "delta_norms": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "loss_trajectory": {
            "type": "array",
            "items": {
                "type": "array",
                "items": {"type": "number"},
                "minItems": 2,
                "maxItems": 2,
            },
        },
        "prob_trajectory": {"type": "array", "items": {"type": "number"}},
        "success": {"type": "boolean"},
        "counter_class": {"type": "integer", "minimum": 1},
        "final_counter_prob": {"type": "number", "minimum": 0, "maximum": 1},
        "first_flip_step": {"type": ["integer", "null"], "minimum": 1},
        "model_id": {"type": "string"},
        "optimizer": {
            "type": "object",
            "required": ["lambda_weight", "learning_rate", "num_steps", "seed"],
            "properties": {
                "lambda_weight": {"type": "number", "minimum": 0},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "num_steps": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
            },
        },
        "target_regions": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "artifacts": {"type": "object", "additionalProperties": {"type": "string"}},
    },
}

EXPLAIN_REQUEST_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$id": "steexlab.explain-request/1",
    "type": "object",
    "required": ["model", "stack", "image"],
    "additionalProperties": False,
    "properties": {
        "model": {"type": "string"},
        "stack": {
            "type": "object",
            "required": ["segmenter", "autoencoder"],
            "additionalProperties": False,
            "properties": {
                "segmenter": {"type": "string"},
                "autoencoder": {"type": "string"},
            },
        },
        "image": {
            "type": "object",
            "oneOf": [
                {
                    "required": ["dataset", "index"],
                    "properties": {
                        "dataset": {"type": "string"},
                        "index": {"type": "integer", "minimum": 0},
                    },
                    "additionalProperties": False,
                },
                {
                    "required": ["png_base64"],
                    "properties": {"png_base64": {"type": "string"}},
                    "additionalProperties": False,
                },
            ],
        },
        "counter_class": {"type": ["integer", "string", "null"]},
        "target_regions": {
            "type": ["array", "null"],
            "items": {"type": ["integer", "string"]},
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda_weight": {"type": "number", "minimum": 0},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "num_steps": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
            },
        },
    },
}

JOB_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$id": "steexlab.job/1",
    "type": "object",
    "required": ["job_id", "state", "request"],
    "properties": {
        "job_id": {"type": "string"},
        "state": {"enum": ["queued", "running", "done", "failed"]},
        "request": {"type": "object"},
        "error": {
            "type": ["object", "null"],
            "properties": {
                "error_class": {"type": "string"},
                "message": {"type": "string"},
                "step": {"type": ["integer", "null"]},
            },
        },
        "result": {"type": ["object", "null"]},
        "artifact_urls": {"type": ["object", "null"], "additionalProperties": {"type": "string"}},
        "timings": {"type": "object"},
    },
}

MODEL_ENTRY_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$id": "steexlab.model-entry/1",
    "type": "object",
    "required": ["model_id", "kind", "path", "digest", "status"],
    "properties": {
        "model_id": {"type": "string"},
        "kind": {"enum": ["segmenter", "autoencoder", "classifier", "embedder", "oracle"]},
        "path": {"type": "string"},
        "digest": {"type": "string"},
        "status": {"enum": ["ready"]},
    },
}

DATASET_ITEM_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$id": "steexlab.dataset-item/1",
    "type": "object",
    "required": [
        "index",
        "image_png_base64",
        "mask_png_base64",
        "mask_labels",
        "present_classes",
        "class_names",
    ],
    "properties": {
        "index": {"type": "integer", "minimum": 0},
        "image_png_base64": {"type": "string"},
        "mask_png_base64": {"type": "string"},
        "mask_labels": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        },
        "present_classes": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "class_names": {"type": "array", "items": {"type": "string"}},
        "label": {"type": ["integer", "null"]},
        "predicted": {"type": "boolean"},
    },
}

ERROR_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$id": "steexlab.error/1",
    "type": "object",
    "required": ["detail"],
    "properties": {"detail": {"type": "string"}},
}

ALL_SCHEMAS = {
    "result": RESULT_SCHEMA,
    "explain_request": EXPLAIN_REQUEST_SCHEMA,
    "job": JOB_SCHEMA,
    "model_entry": MODEL_ENTRY_SCHEMA,
    "dataset_item": DATASET_ITEM_SCHEMA,
    "error": ERROR_SCHEMA,
}
