"""Dataset ingestion, document-id normalization, submission building and validation.

Input records are a JSON array or JSONL of objects carrying an id, a text, and
optionally ``annotations: [{"item", "value"}, ...]``. The submission format
mirrors that shape: one JSONL line per document with the id suffixed by the
language tag and annotations covering every ontology item in order. Field
names are remappable for datasets that spell them differently.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .compiler import CrfRecord
from .errors import DataFormatError
from .ontology import UNKNOWN, Ontology, value_allowed

log = logging.getLogger(__name__)

LANGUAGES = ("en", "it")

DEFAULT_FIELD_MAP = {
    "id": "id",
    "text": "text",
    "annotations": "annotations",
    "item": "item",
    "value": "value",
}


@dataclass(frozen=True)
class ClinicalNote:
    raw_id: str
    plain_id: str
    language: str
    text: str


@dataclass(frozen=True)
class ValidationReport:
    line_count: int
    violations: tuple[tuple[int, str], ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def normalize_doc_id(raw: str) -> str:
    """Prefix before the first underscore; the whole id when there is none."""
    if not raw:
        raise DataFormatError("document id must be non-empty")
    return raw.split("_", 1)[0]


def parse_field_map(spec: str | None) -> dict[str, str]:
    """Parse a `--field-map` value like `id=document_id,text=note`."""
    mapping = dict(DEFAULT_FIELD_MAP)
    if not spec:
        return mapping
    for pair in spec.split(","):
        pair = pair.strip()
        if not pair:
            continue
        key, sep, value = pair.partition("=")
        key = key.strip()
        if not sep or key not in DEFAULT_FIELD_MAP or not value.strip():
            raise DataFormatError(f"bad field-map entry {pair!r}")
        mapping[key] = value.strip()
    return mapping


def load_records(
    path: str | Path,
    ontology: Ontology,
    field_map: dict[str, str] | None = None,
    default_language: str = "en",
) -> tuple[list[ClinicalNote], list[CrfRecord] | None]:
    """Load notes and, when annotations are present, gold records.

    Gold records expand the listed items over the ontology order with absent
    items set to unknown. Annotation items missing from the ontology are
    logged as warnings, never fatal, so the same loader supports ontology
    inference workflows.
    """
    fields = field_map or DEFAULT_FIELD_MAP
    notes: list[ClinicalNote] = []
    gold: list[CrfRecord] = []
    seen_ids: set[str] = set()

    for line_no, record in _iter_records(Path(path)):
        where = f"{path}:{line_no}"
        if not isinstance(record, dict):
            raise DataFormatError(f"{where}: record must be a JSON object")
        raw_id = record.get(fields["id"])
        if raw_id is None or str(raw_id) == "":
            raise DataFormatError(f"{where}: missing id field {fields['id']!r}")
        raw_id = str(raw_id)
        plain_id = normalize_doc_id(raw_id)
        if plain_id in seen_ids:
            raise DataFormatError(f"{where}: duplicate document id {plain_id!r}")
        seen_ids.add(plain_id)

        text = record.get(fields["text"], "")
        if text is None:
            text = ""
        if not isinstance(text, str):
            raise DataFormatError(f"{where}: text field must be a string")

        language = default_language
        if raw_id.endswith("_it"):
            language = "it"
        elif raw_id.endswith("_en"):
            language = "en"
        notes.append(
            ClinicalNote(raw_id=raw_id, plain_id=plain_id, language=language, text=text)
        )

        annotations = record.get(fields["annotations"])
        if annotations is None:
            continue
        if not isinstance(annotations, list):
            raise DataFormatError(f"{where}: annotations must be an array")
        assigned: dict[str, str] = {}
        unknown_items: list[str] = []
        for entry in annotations:
            if not isinstance(entry, dict) or fields["item"] not in entry:
                raise DataFormatError(f"{where}: bad annotation entry {entry!r}")
            item = str(entry[fields["item"]])
            value = str(entry.get(fields["value"], UNKNOWN))
            if item not in ontology.by_name:
                unknown_items.append(item)
                continue
            assigned.setdefault(item, value)
        if unknown_items:
            log.warning(
                "%s: %d annotation item(s) not in the ontology: %s",
                where,
                len(unknown_items),
                ", ".join(unknown_items[:5]),
            )
        gold.append(
            CrfRecord(
                doc_id=plain_id,
                values=tuple(
                    (item.name, assigned.get(item.name, UNKNOWN)) for item in ontology.items
                ),
            )
        )

    return notes, (gold if gold else None)


def infer_item_list(path: str | Path, field_map: dict[str, str] | None = None) -> list[str]:
    """Ordered item list shared by every record's annotations.

    Bootstraps an ontology config from an annotated dataset. Records must all
    agree on the item set and order; the first divergence is fatal.
    """
    fields = field_map or DEFAULT_FIELD_MAP
    reference: list[str] | None = None
    reference_where = ""
    for line_no, record in _iter_records(Path(path)):
        where = f"{path}:{line_no}"
        annotations = record.get(fields["annotations"]) if isinstance(record, dict) else None
        if not annotations:
            raise DataFormatError(f"{where}: record has no annotations to infer items from")
        items = [str(entry[fields["item"]]) for entry in annotations]
        if reference is None:
            reference, reference_where = items, where
            continue
        if items != reference:
            divergence = next(
                (
                    f"position {i}: {a!r} != {b!r}"
                    for i, (a, b) in enumerate(zip(reference, items))
                    if a != b
                ),
                f"length {len(reference)} != {len(items)}",
            )
            raise DataFormatError(
                f"{where}: item list diverges from {reference_where} ({divergence})"
            )
    if reference is None:
        raise DataFormatError(f"{path}: no records found")
    return reference


def build_submission(
    records: list[CrfRecord], ontology: Ontology, language: str, out_path: str | Path
) -> int:
    """Write the submission JSONL; returns the number of lines written.

    Ids gain the language suffix; every record must satisfy the item
    vocabulary (the compiler guarantees this, so a violation here is a bug).
    The write is atomic: either the whole file appears or nothing does.
    """
    if language not in LANGUAGES:
        raise DataFormatError(f"language must be one of {LANGUAGES}, got {language!r}")
    expected = [item.name for item in ontology.items]
    lines: list[str] = []
    for record in records:
        names = [name for name, _ in record.values]
        if names != expected:
            raise DataFormatError(
                f"record {record.doc_id!r} does not cover the ontology items in order"
            )
        for name, value in record.values:
            if not value_allowed(ontology, ontology.by_name[name], value):
                raise DataFormatError(
                    f"record {record.doc_id!r} has out-of-vocabulary value "
                    f"{value!r} for item {name!r}"
                )
        payload = {
            "id": f"{record.doc_id}_{language}",
            "annotations": [{"item": name, "value": value} for name, value in record.values],
        }
        lines.append(json.dumps(payload, ensure_ascii=False) + "\n")
    atomic_write_text(Path(out_path), "".join(lines))
    return len(lines)


def validate_submission(path: str | Path, ontology: Ontology) -> ValidationReport:
    """Structural validation of a submission file.

    Per line: parseable JSON object, id carrying a language suffix,
    annotations covering every ontology item exactly once in ontology order,
    every value inside the item's allowed vocabulary. Violations are reported
    with their line numbers; nothing raises for content problems.
    """
    expected = [item.name for item in ontology.items]
    violations: list[tuple[int, str]] = []
    line_count = 0
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc

    for line_no, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        line_count += 1
        try:
            record = json.loads(line)
        except ValueError as exc:
            violations.append((line_no, f"invalid JSON: {exc}"))
            continue
        if not isinstance(record, dict):
            violations.append((line_no, "line is not a JSON object"))
            continue
        doc_id = str(record.get("id", ""))
        if not any(doc_id.endswith(f"_{lang}") for lang in LANGUAGES):
            violations.append((line_no, f"id {doc_id!r} lacks a language suffix (_en/_it)"))
        annotations = record.get("annotations")
        if not isinstance(annotations, list):
            violations.append((line_no, "missing annotations array"))
            continue
        names = [str(entry.get("item", "")) for entry in annotations if isinstance(entry, dict)]
        if len(names) != len(expected):
            violations.append((line_no, f"item count {len(names)} != {len(expected)}"))
            continue
        if names != expected:
            divergence = next(
                (i for i, (a, b) in enumerate(zip(names, expected)) if a != b), -1
            )
            violations.append(
                (line_no, f"item order diverges from the ontology at position {divergence}")
            )
            continue
        for entry in annotations:
            name = str(entry.get("item", ""))
            value = str(entry.get("value", ""))
            if not value_allowed(ontology, ontology.by_name[name], value):
                violations.append(
                    (line_no, f"value {value!r} not allowed for item {name!r}")
                )
    return ValidationReport(line_count=line_count, violations=tuple(violations))


def atomic_write_text(path: Path, text: str) -> None:
    """Write-to-temp plus rename so fatal errors never leave partial files."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def _iter_records(path: Path):
    """Yield (line_number, record) from a JSON array or JSONL file."""
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    stripped = raw.lstrip()
    if stripped.startswith("["):
        try:
            records = json.loads(raw)
        except ValueError as exc:
            raise DataFormatError(f"{path}: invalid JSON array: {exc}") from exc
        for index, record in enumerate(records, start=1):
            yield index, record
        return
    for line_no, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            yield line_no, json.loads(line)
        except ValueError as exc:
            raise DataFormatError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
