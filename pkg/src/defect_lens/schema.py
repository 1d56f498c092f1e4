"""JSON Schema for reports tagged ``defect-lens/1``."""

from __future__ import annotations

import jsonschema

from .io import SCHEMA_VERSION

_num = {"type": ["number", "null"]}
_flag = {"enum": [True, "-inf"]}
_date = {"type": "string", "format": "date", "pattern": r"^\d{4}-\d{2}-\d{2}$"}
_maybe_date = {"anyOf": [_date, {"type": "null"}]}

DECOMPOSITION = {
    "type": "object",
    "required": [
        "estimation_error",
        "ddc",
        "data_deficiency",
        "problem_difficulty",
        "n_eff_approx",
        "n_eff_exact",
        "sensitivity_factor",
    ],
    "properties": {
        "estimation_error": {"type": "number"},
        "ddc": {"type": "number"},
        "data_deficiency": {"type": "number", "minimum": 0},
        "problem_difficulty": {"type": "number", "minimum": 0},
        "n_eff_approx": _num,
        "n_eff_approx_inf": _flag,
        "n_eff_exact": _num,
        "n_eff_exact_inf": _flag,
        "sensitivity_factor": {"type": "number", "exclusiveMinimum": 0},
        "date": _maybe_date,
        "sample_size": {"type": ["integer", "null"]},
        "population_size": {"type": ["integer", "null"]},
    },
}

_sweep = {
    "type": "object",
    "minProperties": 1,
    "additionalProperties": {"$ref": "#/$defs/decomposition"},
}

_RESULT_ITEMS = {
    "decompose": {
        "type": "object",
        "required": ["date", "benchmark_date", "sweep"],
        "properties": {"date": _date, "benchmark_date": _date, "sweep": _sweep},
    },
    "diff": {
        "type": "object",
        "required": ["date", "prev_date", "difference_error", "n_eff"],
        "properties": {"date": _date, "prev_date": _date, "difference_error": {"type": "number"}, "n_eff": _num},
    },
    "subgroup": {
        "type": "object",
        "required": ["date", "sigma_method", "decomposition"],
        "properties": {
            "date": _date,
            "sigma_method": {"enum": ["paper", "exact"]},
            "decomposition": {"$ref": "#/$defs/decomposition"},
        },
    },
    "assist": {
        "type": "object",
        "required": ["date", "original", "assisted"],
        "properties": {"date": _date, "original": _sweep, "assisted": _sweep},
    },
    "changepoint": {
        "type": "object",
        "required": ["date", "value", "probability", "posterior_mean"],
        "properties": {
            "probability": {"type": "number", "minimum": 0, "maximum": 1},
            "value": {"type": "number"},
            "posterior_mean": {"type": "number"},
        },
    },
    "simulate": {
        "type": "object",
        "required": ["replicate", "n", "ddc", "identity_residual"],
        "properties": {"replicate": {"type": "integer"}, "n": {"type": "integer"}},
    },
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$id": "https://defect-lens.invalid/schema/defect-lens-1.json",
    "type": "object",
    "required": ["schema", "analysis", "config", "results"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "analysis": {"enum": sorted(_RESULT_ITEMS)},
        "config": {"type": "object", "required": ["seed"]},
        "results": {"type": "array"},
        "warnings": {"type": "array", "items": {"type": "string"}},
    },
    "allOf": [
        {
            "if": {"properties": {"analysis": {"const": name}}},
            "then": {"properties": {"results": {"items": item}}},
        }
        for name, item in _RESULT_ITEMS.items()
    ],
    "$defs": {"decomposition": DECOMPOSITION},
}


def validate_report(report: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if ``report`` does not conform."""
    jsonschema.validate(report, REPORT_SCHEMA, cls=jsonschema.Draft202012Validator)
