"""JSON schema for run reports."""
from __future__ import annotations

import jsonschema

_NUMBER_OR_NULL = {"type": ["number", "null"]}

RUN_REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "anisolab run report",
    "type": "object",
    "required": ["scenario", "config", "perShape", "trends", "assertions", "provenance", "passed"],
    "additionalProperties": False,
    "properties": {
        "scenario": {"enum": ["wulff-validation", "bubbling", "degenerating-ellipticity",
                              "capillarity-flow"]},
        "config": {"type": "object"},
        "passed": {"type": "boolean"},
        "perShape": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["label", "parameter", "spacing", "geometry", "deficits", "extra",
                             "flags"],
                "additionalProperties": False,
                "properties": {
                    "label": {"type": "string"},
                    "parameter": _NUMBER_OR_NULL,
                    "spacing": {"type": "number", "exclusiveMinimum": 0},
                    "geometry": {
                        "type": ["object", "null"],
                        "required": ["volume", "surfaceEnergy", "diameter", "referenceCurvature"],
                        "properties": {
                            "volume": {"type": "number"},
                            "surfaceEnergy": {"type": "number"},
                            "diameter": {"type": "number"},
                            "referenceCurvature": {"type": "number"},
                        },
                    },
                    "deficits": {
                        "type": ["object", "null"],
                        "required": ["deltaF", "etaF", "deltaW", "asymmetry", "kappa",
                                     "uniformDeficit", "status"],
                        "properties": {
                            "deltaF": {"type": "number"},
                            "etaF": _NUMBER_OR_NULL,
                            "deltaW": {"type": "number"},
                            "asymmetry": {"type": "number"},
                            "kappa": {"type": "number"},
                            "uniformDeficit": {"type": "number"},
                            "status": {"type": "object"},
                        },
                    },
                    "extra": {"type": "object"},
                    "flags": {"type": "array", "items": {"type": "string"}},
                },
            },
        },
        "trends": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["parameter", "values", "slope", "logLog"],
                "properties": {
                    "parameter": {"type": "array", "items": _NUMBER_OR_NULL},
                    "values": {"type": "array", "items": _NUMBER_OR_NULL},
                    "slope": _NUMBER_OR_NULL,
                    "logLog": {"type": "boolean"},
                },
            },
        },
        "assertions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "passed", "value", "threshold", "detail"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string"},
                    "passed": {"type": "boolean"},
                    "value": {},
                    "threshold": {},
                    "detail": {"type": "string"},
                },
            },
        },
        "provenance": {
            "type": "object",
            "required": ["configHash", "versions", "seed"],
            "properties": {
                "configHash": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
                "versions": {"type": "object", "additionalProperties": {"type": "string"}},
                "seed": {"type": "integer"},
                "wallTime": {"type": "number"},
            },
        },
    },
}


def validate_report(document: dict) -> None:
    """Raise ``jsonschema.ValidationError`` unless the document is a valid run report."""
    jsonschema.validate(document, RUN_REPORT_SCHEMA)
