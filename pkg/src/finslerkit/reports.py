"""Verification reports with deterministic serialization.

The canonical JSON rendering sorts keys and formats every float with 17
significant digits, so identical inputs produce byte-identical report files
regardless of worker count.  Wall time is informational only and is kept out
of the canonical form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = ["VerificationReport", "canonical_json", "text_summary", "convergence_csv"]


@dataclass
class VerificationReport:
    name: str
    inputs: dict = field(default_factory=dict)
    payload: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    passed: bool = True
    wall_seconds: float = 0.0


def _render(value) -> str:
    if isinstance(value, bool) or isinstance(value, np.bool_):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if not np.isfinite(v):
            return json.dumps(repr(v))
        return format(v, ".17g")
    if isinstance(value, str):
        return json.dumps(value)
    if value is None:
        return "null"
    if isinstance(value, dict):
        inner = ",".join(f"{json.dumps(str(k))}:{_render(value[k])}" for k in sorted(value, key=str))
        return "{" + inner + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_render(v) for v in value) + "]"
    if isinstance(value, np.ndarray):
        return _render(value.tolist())
    raise TypeError(f"cannot serialize {type(value).__name__} into a report")


def canonical_json(report: VerificationReport) -> str:
    doc = {
        "name": report.name,
        "inputs": report.inputs,
        "payload": report.payload,
        "tolerances": report.tolerances,
        "passed": report.passed,
    }
    return _render(doc) + "\n"


def text_summary(report: VerificationReport) -> str:
    lines = [f"== {report.name} ==", f"passed: {report.passed}"]
    for key in sorted(report.tolerances, key=str):
        lines.append(f"tolerance {key}: {report.tolerances[key]:.3g}")

    def walk(prefix, obj):
        if isinstance(obj, dict):
            for k in sorted(obj, key=str):
                walk(f"{prefix}{k}.", obj[k])
        elif isinstance(obj, (list, tuple)) and len(obj) and isinstance(obj[0], dict):
            for i, row in enumerate(obj):
                walk(f"{prefix}{i}.", row)
        else:
            if isinstance(obj, (float, np.floating)):
                lines.append(f"{prefix[:-1]}: {float(obj):.12g}")
            else:
                lines.append(f"{prefix[:-1]}: {obj}")

    walk("", report.payload)
    lines.append(f"wall seconds: {report.wall_seconds:.3f}")
    return "\n".join(lines) + "\n"


def convergence_csv(rows) -> str:
    """Rows are dicts sharing keys; emitted sorted by key, one row per dict."""
    if not rows:
        return ""
    keys = sorted(rows[0], key=str)
    out = [",".join(keys)]
    for row in rows:
        out.append(",".join(_render(row[k]).strip('"') for k in keys))
    return "\n".join(out) + "\n"
