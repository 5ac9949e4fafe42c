"""Nine-domain summary: schema, robust parsing from model output, merge policy.

The summary is the stable intermediate representation between the text
condensation stage and the deterministic compiler: a single JSON object with
exactly nine domain keys, each holding a free-text string.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

SUMMARY_KEYS: tuple[str, ...] = (
    "DEMOGRAPHICS",
    "VITALS",
    "LABS",
    "PROBLEMS",
    "SYMPTOMS",
    "MEDICATIONS",
    "PROCEDURES",
    "UTILIZATION",
    "DISPOSITION",
)

# Keys that accumulate independent facts; multi-window merges concatenate them
# instead of overwriting.
CONCAT_KEYS = frozenset({"PROBLEMS", "MEDICATIONS", "LABS"})


@dataclass(frozen=True)
class DomainSummary:
    """Exactly nine text fields, one per clinical domain, always all present."""

    demographics: str = ""
    vitals: str = ""
    labs: str = ""
    problems: str = ""
    symptoms: str = ""
    medications: str = ""
    procedures: str = ""
    utilization: str = ""
    disposition: str = ""

    def get(self, key: str) -> str:
        return getattr(self, key.lower())

    def as_dict(self) -> dict[str, str]:
        """Mapping in the fixed key order."""
        return {key: self.get(key) for key in SUMMARY_KEYS}

    @classmethod
    def from_dict(cls, data: dict[str, str]) -> "DomainSummary":
        return cls(**{key.lower(): str(data.get(key, "")) for key in SUMMARY_KEYS})


EMPTY_SUMMARY = DomainSummary()


@dataclass(frozen=True)
class ParseReport:
    """What happened while recovering a summary from raw model output."""

    parse_ok: bool
    repair_applied: bool = False
    thinking_leak_detected: bool = False
    dropped_keys: tuple[str, ...] = ()
    missing_keys: tuple[str, ...] = ()
    backend_error: str | None = None

    def as_dict(self) -> dict[str, object]:
        return {
            "parse_ok": self.parse_ok,
            "repair_applied": self.repair_applied,
            "thinking_leak_detected": self.thinking_leak_detected,
            "dropped_keys": list(self.dropped_keys),
            "missing_keys": list(self.missing_keys),
            "backend_error": self.backend_error,
        }


FAILED_PARSE_REPORT = ParseReport(parse_ok=False, missing_keys=SUMMARY_KEYS)


def serialize_summary(summary: DomainSummary) -> str:
    """Canonical rendering: fixed key order, 2-space indent, trailing newline."""
    return json.dumps(summary.as_dict(), indent=2, ensure_ascii=False) + "\n"


def parse_summary(raw: str) -> tuple[DomainSummary, ParseReport]:
    """Recover a nine-key summary from raw model output. Never raises.

    Tiers, in order: direct JSON parse; parse after stripping code fences;
    parse of the first balanced ``{...}`` region (absorbs leaked reasoning
    prefixes). Unparseable input yields the all-empty summary with
    ``parse_ok=False``.
    """
    if not isinstance(raw, str):
        return EMPTY_SUMMARY, FAILED_PARSE_REPORT

    obj = _try_json_object(raw)
    if obj is not None:
        return _summary_from_object(obj, repair=False, leak=False)

    defenced, had_fences = _strip_fences(raw)
    if had_fences:
        obj = _try_json_object(defenced)
        if obj is not None:
            prefix = raw.split("```", 1)[0]
            return _summary_from_object(obj, repair=True, leak=bool(prefix.strip()))

    found = _scan_balanced_object(defenced)
    if found is not None:
        start, obj = found
        return _summary_from_object(obj, repair=True, leak=bool(defenced[:start].strip()))

    return EMPTY_SUMMARY, FAILED_PARSE_REPORT


def merge_summaries(parts: list[DomainSummary]) -> DomainSummary:
    """Merge per-window summaries in window order.

    PROBLEMS, MEDICATIONS, and LABS concatenate all non-empty parts joined by
    newlines; every other key takes the last non-empty value.
    """
    if not parts:
        raise ValueError("merge_summaries requires at least one summary")
    merged: dict[str, str] = {}
    for key in SUMMARY_KEYS:
        nonempty = [part.get(key) for part in parts if part.get(key)]
        if key in CONCAT_KEYS:
            merged[key] = "\n".join(nonempty)
        else:
            merged[key] = nonempty[-1] if nonempty else ""
    return DomainSummary.from_dict(merged)


def _try_json_object(text: str) -> dict | None:
    try:
        obj = json.loads(text)
    except ValueError:
        return None
    return obj if isinstance(obj, dict) else None


def _strip_fences(text: str) -> tuple[str, bool]:
    """Drop markdown fence marker lines, keeping fenced content."""
    if "```" not in text:
        return text, False
    kept = [line for line in text.splitlines() if not line.strip().startswith("```")]
    return "\n".join(kept), True


def _scan_balanced_object(text: str) -> tuple[int, dict] | None:
    """First balanced brace region that parses as a JSON object."""
    start = text.find("{")
    while start != -1:
        end = _matching_brace(text, start)
        if end != -1:
            obj = _try_json_object(text[start : end + 1])
            if obj is not None:
                return start, obj
        start = text.find("{", start + 1)
    return None


def _matching_brace(text: str, start: int) -> int:
    depth = 0
    in_string = False
    escaped = False
    for pos in range(start, len(text)):
        ch = text[pos]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return pos
    return -1


def _summary_from_object(obj: dict, *, repair: bool, leak: bool) -> tuple[DomainSummary, ParseReport]:
    values: dict[str, str] = {}
    missing: list[str] = []
    for key in SUMMARY_KEYS:
        if key in obj:
            values[key] = _stringify(obj[key])
        else:
            values[key] = ""
            missing.append(key)
    dropped = tuple(str(key) for key in obj if key not in SUMMARY_KEYS)
    report = ParseReport(
        parse_ok=True,
        repair_applied=repair,
        thinking_leak_detected=leak,
        dropped_keys=dropped,
        missing_keys=tuple(missing),
    )
    return DomainSummary.from_dict(values), report


def _stringify(value: object) -> str:
    """Flatten a non-string JSON value into `Key: Value` lines."""
    if isinstance(value, str):
        return value
    if isinstance(value, dict):
        return "\n".join(f"{key}: {_inline(item)}" for key, item in value.items())
    if isinstance(value, list):
        return "\n".join(_inline(item) for item in value)
    return _inline(value)


def _inline(value: object) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return ""
    if isinstance(value, dict):
        return ", ".join(f"{key}: {_inline(item)}" for key, item in value.items())
    if isinstance(value, list):
        return ", ".join(_inline(item) for item in value)
    return str(value)
