"""Lightweight field schemas and document validation.

Schemas describe the typed inputs of graph nodes and routing decisions.
Validation never raises on bad documents; it returns the full violation list
so callers can feed it back to a correcting policy.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence


@dataclass(frozen=True)
class Violation:
    field: str
    expected: str
    got: Any

    def __str__(self) -> str:
        return f"{self.field}: expected {self.expected}, got {self.got!r}"


@dataclass(frozen=True)
class FieldSpec:
    """One field of a schema.

    ``kind`` is one of: "integer", "number", "string", "boolean",
    ("enum", [values...]), ("array", item_kind, shape_or_None),
    ("reference", schema_id).
    ``constraint`` optionally narrows values: {"min":, "max":, "pattern":,
    "allowed": [...]}.
    """

    name: str
    kind: Any = "string"
    required: bool = True
    constraint: Optional[dict] = None

    def __post_init__(self):
        kind = self.kind
        if isinstance(kind, tuple):
            if kind[0] == "enum" and not kind[1]:
                raise ValueError("enum list must be non-empty")
            if kind[0] == "array" and len(kind) > 2 and kind[2] is not None:
                if any(n < 0 for n in kind[2]):
                    raise ValueError("array shape must be non-negative")


@dataclass(frozen=True)
class Schema:
    schema_id: str
    fields: tuple[FieldSpec, ...] = ()

    def __post_init__(self):
        specs = tuple(self.fields)
        names = [f.name for f in specs]
        if len(names) != len(set(names)):
            raise ValueError("field names must be unique")
        object.__setattr__(self, "fields", specs)

    def field(self, name: str) -> Optional[FieldSpec]:
        for f in self.fields:
            if f.name == name:
                return f
        return None

    def describe(self) -> dict:
        return {
            "schema_id": self.schema_id,
            "fields": [
                {
                    "name": f.name,
                    "kind": _kind_name(f.kind),
                    "required": f.required,
                    "constraint": f.constraint,
                }
                for f in self.fields
            ],
        }


# An always-empty schema for nodes that need no arguments.
EMPTY = Schema("empty")


def _kind_name(kind: Any) -> str:
    if isinstance(kind, tuple):
        if kind[0] == "enum":
            return f"enum{list(kind[1])}"
        if kind[0] == "array":
            shape = kind[2] if len(kind) > 2 else None
            return f"array of {_kind_name(kind[1])}" + (f" shape {shape}" if shape else "")
        if kind[0] == "reference":
            return f"reference to {kind[1]}"
    return str(kind)


def _check_kind(value: Any, kind: Any, path: str, out: list[Violation]) -> None:
    if kind == "integer":
        if not isinstance(value, int) or isinstance(value, bool):
            out.append(Violation(path, "integer", value))
    elif kind == "number":
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            out.append(Violation(path, "number", value))
    elif kind == "string":
        if not isinstance(value, str):
            out.append(Violation(path, "string", value))
    elif kind == "boolean":
        if not isinstance(value, bool):
            out.append(Violation(path, "boolean", value))
    elif isinstance(kind, tuple) and kind[0] == "enum":
        if value not in kind[1]:
            out.append(Violation(path, f"one of {list(kind[1])}", value))
    elif isinstance(kind, tuple) and kind[0] == "array":
        if not isinstance(value, (list, tuple)):
            out.append(Violation(path, "array", value))
            return
        shape = kind[2] if len(kind) > 2 else None
        if shape is not None and len(value) != shape[0]:
            out.append(Violation(path, f"array of length {shape[0]}", value))
            return
        inner_shape = (shape[1:] or None) if shape else None
        item_kind = kind[1]
        for i, item in enumerate(value):
            if inner_shape:
                _check_kind(item, ("array", item_kind, inner_shape), f"{path}[{i}]", out)
            else:
                _check_kind(item, item_kind, f"{path}[{i}]", out)
    elif isinstance(kind, tuple) and kind[0] == "reference":
        # References carry an opaque document or IRI string; defer to the target.
        if not isinstance(value, (dict, str)):
            out.append(Violation(path, f"reference to {kind[1]}", value))
    else:
        raise ValueError(f"unknown field kind: {kind!r}")


def _check_constraint(value: Any, constraint: dict, path: str, out: list[Violation]) -> None:
    if "min" in constraint and isinstance(value, (int, float)) and value < constraint["min"]:
        out.append(Violation(path, f">= {constraint['min']}", value))
    if "max" in constraint and isinstance(value, (int, float)) and value > constraint["max"]:
        out.append(Violation(path, f"<= {constraint['max']}", value))
    if "pattern" in constraint and isinstance(value, str):
        if not re.fullmatch(constraint["pattern"], value):
            out.append(Violation(path, f"match for /{constraint['pattern']}/", value))
    if "allowed" in constraint and value not in constraint["allowed"]:
        out.append(Violation(path, f"one of {list(constraint['allowed'])}", value))


def validate_document(doc: Any, schema: Schema) -> list[Violation]:
    """Full violation list for ``doc`` against ``schema`` (empty list = valid)."""
    if not isinstance(doc, dict):
        return [Violation("$", "object", doc)]
    out: list[Violation] = []
    for spec in schema.fields:
        if spec.name not in doc:
            if spec.required:
                out.append(Violation(spec.name, "present (required field)", "missing"))
            continue
        value = doc[spec.name]
        before = len(out)
        _check_kind(value, spec.kind, spec.name, out)
        if spec.constraint and len(out) == before:
            _check_constraint(value, spec.constraint, spec.name, out)
    return out
