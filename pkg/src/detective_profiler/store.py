"""Versioned, schema-validated JSON artifacts for each phase of a run.

Layout::

    <root>/<run_id>/manifest.json
                    1_descriptions.json  2_traits.json  3_groups.json
                    4_profiles.json  5_predictions.json  5_report.json
                    cache/
"""

from __future__ import annotations

import json
import os
from collections.abc import Mapping
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from jsonschema import Draft202012Validator
from jsonschema.exceptions import best_match

from .errors import (
    ArtifactConflictError,
    ArtifactNotFoundError,
    ArtifactParseError,
    SchemaError,
    ValidationError,
)
from .gateway import atomic_write_text

SCHEMA_VERSION = 1

PHASE_FILES = {
    "descriptions": "1_descriptions.json",
    "traits": "2_traits.json",
    "groups": "3_groups.json",
    "profiles": "4_profiles.json",
    "predictions": "5_predictions.json",
    "report": "5_report.json",
}
MANIFEST_FILE = "manifest.json"
PHASE_STATES = ("pending", "complete", "failed")

_FRACTION = {"type": "string", "pattern": r"^\d+(/\d+)?$"}
_STRINGS = {"type": "array", "items": {"type": "string"}}


def _obj(required: dict[str, Any], optional: dict[str, Any] | None = None) -> dict[str, Any]:
    props = dict(required)
    props.update(optional or {})
    return {"type": "object", "properties": props, "required": sorted(required), "additionalProperties": False}


def _envelope(phase: str, body: dict[str, Any]) -> dict[str, Any]:
    return _obj({"schema_version": {"const": SCHEMA_VERSION}, "phase": {"const": phase}, **body})


_RECORD = _obj({"text": {"type": "string"}, "normalized_text": {"type": "string"},
                "source_models": {**_STRINGS, "minItems": 1}})
_GROUP = _obj({
    "label": {"type": "string"},
    "members": {"type": "array", "items": _RECORD, "minItems": 1},
    "supporting_models": _STRINGS,
    "consensus_score": {"anyOf": [_FRACTION, {"type": "null"}]},
})
_STATS = _obj({"correct": {"type": "integer", "minimum": 0}, "total": {"type": "integer", "minimum": 0},
               "accuracy": _FRACTION})

SCHEMAS: dict[str, dict[str, Any]] = {
    "descriptions": _envelope("descriptions", {"descriptions": {"type": "array", "items": _obj({
        "character": {"type": "string"},
        "model_id": {"type": "string"},
        "text": {"type": "string", "minLength": 1},
        "sentence_count": {"type": "integer", "minimum": 1},
        "length_warning": {"type": "boolean"},
    })}}),
    "traits": _envelope("traits", {"trait_lists": {"type": "array", "items": _obj({
        "character": {"type": "string"},
        "model_id": {"type": "string"},
        "traits": {"type": "array", "items": {"type": "string", "minLength": 1}, "minItems": 1},
    })}}),
    "groups": _envelope("groups", {
        "total_models": {"type": "integer", "minimum": 1},
        "characters": {"type": "array", "items": _obj({
            "character": {"type": "string"},
            "groups": {"type": "array", "items": _GROUP},
        })},
    }),
    "profiles": _envelope("profiles", {
        "threshold": _FRACTION,
        "profiles": {"type": "array", "items": _obj({
            "character": {"type": "string"},
            "threshold": _FRACTION,
            "total_models": {"type": "integer", "minimum": 1},
            "groups": {"type": "array", "items": _GROUP},
            "excluded": {"type": "array", "items": _GROUP},
        })},
    }),
    "predictions": _envelope("predictions", {
        "identifier_input": {"enum": ["labels-only"]},
        "predictions": {"type": "array", "items": _obj({
            "true_character": {"type": "string"},
            "model_id": {"type": "string"},
            "predicted": {"type": "string"},
            "raw_response": {"type": "string"},
        })},
    }),
    "report": _envelope("report", {
        "roster": {**_STRINGS, "minItems": 1},
        "per_class": {"type": "array", "items": _obj({
            "character": {"type": "string"},
            "correct": {"type": "integer", "minimum": 0},
            "total": {"type": "integer", "minimum": 0},
            "accuracy": _FRACTION,
        })},
        "overall": _STATS,
        "confusion": _obj({
            "columns": _STRINGS,
            "rows": {"type": "array", "items": _obj({
                "actual": {"type": "string"},
                "counts": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            })},
        }),
    }),
    "manifest": _envelope("manifest", {
        "run_id": {"type": "string", "minLength": 1},
        "config_hash": {"type": "string"},
        "phase_status": {
            "type": "object",
            "propertyNames": {"enum": list(PHASE_FILES)},
            "additionalProperties": {"enum": list(PHASE_STATES)},
        },
        "partial": {"type": "object", "additionalProperties": _STRINGS},
        "warnings": {"type": "array", "items": {"type": "object", "additionalProperties": {"type": "string"}}},
        "created_at": {"type": "string"},
    }),
}

_VALIDATORS = {name: Draft202012Validator(schema) for name, schema in SCHEMAS.items()}


def canonical_json(payload: Any) -> str:
    """Sorted keys, UTF-8 text, two-space indent, trailing newline."""
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def validate_payload(phase: str, payload: Any) -> None:
    if phase not in _VALIDATORS:
        raise ValidationError(f"unknown phase {phase!r}")
    if isinstance(payload, Mapping) and payload.get("schema_version") not in (None, SCHEMA_VERSION):
        raise SchemaError(
            f"{phase}: schema_version {payload.get('schema_version')!r} is not supported "
            f"(expected {SCHEMA_VERSION})",
            field="schema_version",
        )
    error = best_match(_VALIDATORS[phase].iter_errors(payload))
    if error is None:
        return
    path = "/".join(str(p) for p in error.absolute_path)
    if error.validator == "additionalProperties":
        extra = sorted(set(error.instance) - set(error.schema.get("properties", {})))
        name = "/".join(filter(None, [path, extra[0] if extra else ""]))
    elif error.validator == "required":
        missing = [k for k in error.validator_value if k not in error.instance]
        name = "/".join(filter(None, [path, missing[0] if missing else ""]))
    else:
        name = path
    raise SchemaError(f"{phase} (schema v{SCHEMA_VERSION}): field {name or '<root>'!r}: {error.message}", field=name)


def envelope(phase: str, **body: Any) -> dict[str, Any]:
    return {"schema_version": SCHEMA_VERSION, "phase": phase, **body}


class ArtifactStore:
    """Reads and writes phase artifacts under ``root/<run_id>/``."""

    def __init__(self, root: str | os.PathLike[str]):
        self.root = Path(root)

    def run_dir(self, run_id: str) -> Path:
        if not run_id or "/" in run_id or run_id in (".", ".."):
            raise ValidationError(f"invalid run_id {run_id!r}")
        return self.root / run_id

    def path(self, run_id: str, phase: str) -> Path:
        if phase == "manifest":
            return self.run_dir(run_id) / MANIFEST_FILE
        if phase not in PHASE_FILES:
            raise ValidationError(f"unknown phase {phase!r}")
        return self.run_dir(run_id) / PHASE_FILES[phase]

    def cache_dir(self, run_id: str) -> Path:
        return self.run_dir(run_id) / "cache"

    def exists(self, run_id: str, phase: str) -> bool:
        return self.path(run_id, phase).is_file()

    def write_artifact(self, run_id: str, phase: str, payload: Mapping[str, Any], *, force: bool = False) -> Path:
        validate_payload(phase, payload)
        path = self.path(run_id, phase)
        if path.exists() and not force:
            raise ArtifactConflictError(f"{path} already exists (use --force to overwrite)")
        atomic_write_text(path, canonical_json(payload))
        return path

    def read_artifact(self, run_id: str, phase: str) -> dict[str, Any]:
        path = self.path(run_id, phase)
        try:
            raw = path.read_bytes()
        except FileNotFoundError:
            raise ArtifactNotFoundError(f"{path} does not exist") from None
        text = raw.decode("utf-8", errors="replace")
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            offset = len(text[: exc.pos].encode("utf-8"))
            raise ArtifactParseError(str(path), offset, exc.msg) from None
        validate_payload(phase, payload)
        return payload

    def delete(self, run_id: str, phase: str) -> None:
        self.path(run_id, phase).unlink(missing_ok=True)

    # manifests

    def new_manifest(self, run_id: str, config_hash: str) -> dict[str, Any]:
        return envelope(
            "manifest",
            run_id=run_id,
            config_hash=config_hash,
            phase_status={p: "pending" for p in PHASE_FILES},
            partial={},
            warnings=[],
            created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        )

    def load_manifest(self, run_id: str) -> dict[str, Any] | None:
        if not self.exists(run_id, "manifest"):
            return None
        return self.read_artifact(run_id, "manifest")

    def save_manifest(self, manifest: Mapping[str, Any]) -> Path:
        return self.write_artifact(manifest["run_id"], "manifest", manifest, force=True)

    def phase_complete(self, run_id: str, phase: str) -> bool:
        """True only if the artifact exists and validates."""
        try:
            self.read_artifact(run_id, phase)
        except (ArtifactNotFoundError, ArtifactParseError, SchemaError):
            return False
        return True
