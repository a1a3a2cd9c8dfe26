"""Input checks shared by the estimator wrapper and the command line."""
from __future__ import annotations

from typing import Dict, List, Mapping, Sequence

import numpy as np

from .data import AttributeSchema, UnknownAttributeValue


def check_sentences(X, name: str = "X") -> List[str]:
    """Coerce ``X`` to a non-empty list of strings."""
    if isinstance(X, str):
        raise TypeError(f"{name} must be a sequence of sentences, not a single string")
    out = list(X)
    if not out:
        raise ValueError(f"{name} is empty")
    for i, s in enumerate(out):
        if not isinstance(s, str):
            raise TypeError(f"{name}[{i}] is {type(s).__name__}, expected str")
    return out


def check_attr_matrix(y, schema: AttributeSchema, n_rows: int, name: str = "y") -> np.ndarray:
    """Return an (n_rows, m) int64 matrix of value indices.

    Rows may be given as value indices, value names, or mappings from
    attribute name to value name. A single row is broadcast to all inputs.
    """
    rows = y if isinstance(y, np.ndarray) else list(y) if not isinstance(y, Mapping) else [y]
    if isinstance(rows, np.ndarray) and rows.ndim == 1 and schema.m == 1 and len(rows) == n_rows:
        rows = rows.reshape(-1, 1)
    parsed = [_parse_row(r, schema) for r in rows]
    A = np.asarray(parsed, dtype=np.int64).reshape(len(parsed), schema.m)
    if len(A) == 1 and n_rows != 1:
        A = np.repeat(A, n_rows, axis=0)
    if len(A) != n_rows:
        raise ValueError(f"{name} has {len(A)} rows for {n_rows} inputs")
    for k, size in enumerate(schema.sizes):
        bad = (A[:, k] < 0) | (A[:, k] >= size)
        if bad.any():
            raise UnknownAttributeValue(
                f"attribute {schema.names[k]!r} index {int(A[bad, k][0])} outside [0, {size})")
    return A


def _parse_row(row, schema: AttributeSchema) -> List[int]:
    if isinstance(row, Mapping):
        return schema.encode(assignments_to_values(row, schema))
    if isinstance(row, (str, int, np.integer)):
        row = [row]
    row = list(row)
    if len(row) != schema.m:
        raise ValueError(f"expected {schema.m} attribute values per row, got {len(row)}")
    out = []
    for k, v in enumerate(row):
        out.append(schema.attributes[k].index(v) if isinstance(v, str) else int(v))
    return out


def parse_assignments(items: Sequence[str]) -> Dict[str, str]:
    """``["sentiment=positive", ...]`` to a dict; repeated names are rejected."""
    out: Dict[str, str] = {}
    for item in items:
        name, sep, value = item.partition("=")
        name, value = name.strip(), value.strip()
        if not sep or not name or not value:
            raise ValueError(f"expected name=value, got {item!r}")
        if name in out:
            raise ValueError(f"attribute {name!r} set twice")
        out[name] = value
    return out


def assignments_to_values(assign: Mapping[str, str], schema: AttributeSchema,
                          defaults: Sequence[str] | None = None) -> List[str]:
    """Order a name-to-value mapping by the schema.

    Attributes not mentioned take ``defaults`` when given, otherwise they are
    an error. Unknown names raise :class:`UnknownAttributeValue`.
    """
    unknown = set(assign) - set(schema.names)
    if unknown:
        raise UnknownAttributeValue(f"unknown attribute(s) {sorted(unknown)}; schema has {schema.names}")
    values = []
    for k, name in enumerate(schema.names):
        if name in assign:
            values.append(assign[name])
        elif defaults is not None:
            values.append(defaults[k])
        else:
            raise ValueError(f"no value given for attribute {name!r}")
    return values
