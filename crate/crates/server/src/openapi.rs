//! Machine-readable description of the API, served at `/api/v1/openapi`.

use serde_json::{json, Value};

fn error_response(description: &str) -> Value {
    json!({
        "description": description,
        "content": {"application/json": {"schema": {"$ref": "#/components/schemas/Error"}}}
    })
}

fn json_body(schema: &str) -> Value {
    json!({
        "required": true,
        "content": {"application/json": {"schema": {"$ref": format!("#/components/schemas/{schema}")}}}
    })
}

fn json_ok(description: &str, schema: &str) -> Value {
    json!({
        "description": description,
        "content": {"application/json": {"schema": {"$ref": format!("#/components/schemas/{schema}")}}}
    })
}

fn path_param(name: &str) -> Value {
    json!({"name": name, "in": "path", "required": true, "schema": {"type": "string"}})
}

pub fn document() -> Value {
    json!({
        "openapi": "3.0.3",
        "info": {
            "title": "c3det annotation service",
            "version": env!("CARGO_PKG_VERSION"),
            "description": concat!(
                "Sessions, live inference and annotation persistence for interactive multi-class ",
                "object annotation. Errors are JSON objects {\"error\": message}.\n\n",
                "Export format (GET /api/v1/sessions/{id}/export): ",
                "{session_id, dataset, mode, created_at, annotations, stats}. ",
                "`annotations` maps each image id with a saved snapshot to its final boxes ",
                "[{bbox: [x_min, y_min, x_max, y_max], class_id, score}], where score is always 1. ",
                "`stats.counts` holds the number of logged events of each type ",
                "(click_hint, draw_box, delete_box, class_change, submit; zero counts included), ",
                "`stats.total_events` their sum and `stats.elapsed_ms` the t_ms of the last event ",
                "(0 for an empty log).\n\n",
                "On disk each session is a directory holding session.json, an append-only ",
                "events.jsonl (one fsynced JSON line per event) and annotations/{image_id}.json ",
                "snapshots replaced by atomic rename, with the previous generation kept as ",
                "annotations/{image_id}.json.bak.\n\n",
                "Inference runs on a single worker; at most 8 requests are admitted at once ",
                "and further requests receive 429."
            )
        },
        "paths": {
            "/api/v1/openapi": {"get": {"summary": "This document", "responses": {"200": {"description": "OpenAPI document"}}}},
            "/api/v1/health": {"get": {"summary": "Liveness and model status", "responses": {"200": {"description": "status, model_loaded, model_version, inference_pending"}}}},
            "/api/v1/dataset": {"get": {"summary": "Served dataset: name, classes, image_size and image ids per split", "responses": {"200": {"description": "dataset description"}}}},
            "/api/v1/images/{image_id}": {"get": {
                "summary": "Whole image as PNG",
                "parameters": [path_param("image_id")],
                "responses": {"200": {"description": "PNG bytes", "content": {"image/png": {}}}, "404": error_response("unknown image")}
            }},
            "/api/v1/infer": {"post": {
                "summary": "Detections for an image given the user inputs so far",
                "requestBody": json_body("InferRequest"),
                "responses": {
                    "200": json_ok("detections", "InferResponse"),
                    "400": error_response("class_id >= number of classes, point outside the image, or malformed body"),
                    "404": error_response("unknown image"),
                    "422": error_response("body of the wrong shape"),
                    "429": error_response("inference queue full"),
                    "503": error_response("no checkpoint loaded")
                }
            }},
            "/api/v1/sessions": {"post": {
                "summary": "Create an annotation session",
                "requestBody": json_body("CreateSession"),
                "responses": {
                    "201": {"description": "created", "content": {"application/json": {"schema": {"type": "object", "properties": {"session_id": {"type": "string"}}}}}},
                    "404": error_response("unknown dataset"),
                    "422": error_response("invalid mode")
                }
            }},
            "/api/v1/sessions/{id}": {"get": {
                "summary": "Session record",
                "parameters": [path_param("id")],
                "responses": {"200": json_ok("session", "Session"), "404": error_response("unknown session")}
            }},
            "/api/v1/sessions/{id}/annotations/{image_id}": {
                "put": {
                    "summary": "Replace the annotation snapshot of an image",
                    "parameters": [path_param("id"), path_param("image_id")],
                    "requestBody": json_body("Annotations"),
                    "responses": {
                        "204": {"description": "saved"},
                        "404": error_response("unknown session or image"),
                        "422": error_response("invalid box or class")
                    }
                },
                "get": {
                    "summary": "Current annotation snapshot of an image (empty if never saved)",
                    "parameters": [path_param("id"), path_param("image_id")],
                    "responses": {"200": json_ok("snapshot", "Annotations"), "404": error_response("unknown session or image")}
                }
            },
            "/api/v1/sessions/{id}/events": {"post": {
                "summary": "Append an interaction event",
                "parameters": [path_param("id")],
                "requestBody": json_body("Event"),
                "responses": {
                    "202": {"description": "logged"},
                    "404": error_response("unknown session"),
                    "422": error_response("unknown type or t_ms earlier than the previous event")
                }
            }},
            "/api/v1/sessions/{id}/export": {"get": {
                "summary": "All annotations (score 1) plus interaction statistics",
                "parameters": [path_param("id")],
                "responses": {"200": json_ok("export", "Export"), "404": error_response("unknown session")}
            }}
        },
        "components": {"schemas": {
            "Error": {"type": "object", "properties": {"error": {"type": "string"}}},
            "BBox": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4,
                     "description": "[x_min, y_min, x_max, y_max] in pixels; x_min < x_max, y_min < y_max"},
            "UserInput": {"type": "object", "required": ["x", "y", "class_id"],
                          "properties": {"x": {"type": "number"}, "y": {"type": "number"}, "class_id": {"type": "integer", "minimum": 0}}},
            "Detection": {"type": "object",
                          "properties": {"bbox": {"$ref": "#/components/schemas/BBox"}, "class_id": {"type": "integer"}, "score": {"type": "number"}}},
            "InferRequest": {"type": "object", "required": ["image_id"],
                             "properties": {"image_id": {"type": "string"},
                                            "user_inputs": {"type": "array", "items": {"$ref": "#/components/schemas/UserInput"}}}},
            "InferResponse": {"type": "object",
                              "properties": {"detections": {"type": "array", "items": {"$ref": "#/components/schemas/Detection"}},
                                             "latency_ms": {"type": "number"}, "model_version": {"type": "string"}}},
            "CreateSession": {"type": "object", "required": ["dataset", "mode"],
                              "properties": {"dataset": {"type": "string", "description": "served dataset name, or \"default\""},
                                             "mode": {"type": "string", "enum": ["manual", "assisted"]}}},
            "Session": {"type": "object",
                        "properties": {"session_id": {"type": "string"}, "dataset": {"type": "string"},
                                       "mode": {"type": "string", "enum": ["manual", "assisted"]},
                                       "created_at": {"type": "integer", "description": "ms since the Unix epoch"}}},
            "Annotations": {"type": "object", "required": ["boxes"],
                            "properties": {"boxes": {"type": "array", "items": {"type": "object", "required": ["bbox", "class_id"],
                                "properties": {"bbox": {"$ref": "#/components/schemas/BBox"}, "class_id": {"type": "integer"}}}}}},
            "Event": {"type": "object", "required": ["type", "t_ms"],
                      "properties": {"type": {"type": "string", "enum": ["click_hint", "draw_box", "delete_box", "class_change", "submit"]},
                                     "t_ms": {"type": "integer", "minimum": 0, "description": "ms since session start, non-decreasing"},
                                     "payload": {}}},
            "Export": {"type": "object",
                       "properties": {"session_id": {"type": "string"}, "dataset": {"type": "string"}, "mode": {"type": "string"},
                                      "created_at": {"type": "integer"},
                                      "annotations": {"type": "object", "additionalProperties": {"type": "array", "items": {"$ref": "#/components/schemas/Detection"}}},
                                      "stats": {"type": "object", "properties": {
                                          "counts": {"type": "object", "additionalProperties": {"type": "integer"}},
                                          "total_events": {"type": "integer"}, "elapsed_ms": {"type": "integer"}}}}}
        }}
    })
}
