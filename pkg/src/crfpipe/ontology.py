"""The CRF contract: ordered items, vocabulary categories, abbreviations, rule profiles.

Everything here is data loaded from JSON config files; the shipped dyspnea CRF
is one instance and test fixtures can be tiny. The loaded Ontology is immutable
and safe to share across threads; all lookups are read-only.

Ontology file format (UTF-8 JSON, top-level keys; keys starting with "_" are
ignored as comments):

* ``items``: array of ``{"name", "category", "cui"?, "preferred_name"?, "aliases"?}``
* ``categories``: array of ``{"id", "kind", "allowed_values"?, "thresholds"?,
  "value_synonyms"?}`` where thresholds are ``{"min", "max", "label"}`` bands
  (nullable ends, half-open ``[min, max)``) that must tile the whole real line
* ``abbreviations``: object mapping short form to long form (case-insensitive keys)
* ``profiles``: array of ``{"name", "derivations", "gates"}``

An item may reference the sentinel category ``unknown_only`` without declaring
it; such items always carry the value ``unknown``.
"""

from __future__ import annotations

import functools
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import OntologyError
from .summary import SUMMARY_KEYS
from .textnorm import fold, looks_numeric

UNKNOWN = "unknown"
MEASURED = "measured"
UNKNOWN_ONLY = "unknown_only"

CLOSED_SET = "closed_set"
NUMERIC_OR_MEASURED = "numeric_or_measured"
NUMERIC_PASSTHROUGH = "numeric_passthrough"
CATEGORY_KINDS = (CLOSED_SET, NUMERIC_OR_MEASURED, NUMERIC_PASSTHROUGH)

COUNT_THRESHOLD = "count_threshold"
LEXICON_MATCH = "lexicon_match"
FLAG_OR_KEYWORD = "flag_or_keyword"
DERIVATION_KINDS = (COUNT_THRESHOLD, LEXICON_MATCH, FLAG_OR_KEYWORD)

SCOPE_ALL = "*"


@functools.lru_cache(maxsize=8192)
def compile_pattern(pattern: str) -> "re.Pattern[str]":
    """Evidence patterns are case-insensitive by contract."""
    return re.compile(pattern, re.IGNORECASE)


@dataclass(frozen=True)
class Band:
    """Half-open numeric interval [lower, upper); None means open end."""

    lower: float | None
    upper: float | None
    label: str

    def contains(self, x: float) -> bool:
        if self.lower is not None and x < self.lower:
            return False
        if self.upper is not None and x >= self.upper:
            return False
        return True


@dataclass(frozen=True)
class CategoryDef:
    id: str
    kind: str
    allowed_values: tuple[str, ...] = ()
    thresholds: tuple[Band, ...] = ()
    value_synonyms: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def band_label(self, x: float) -> str | None:
        for band in self.thresholds:
            if band.contains(x):
                return band.label
        return None


@dataclass(frozen=True)
class ItemDef:
    name: str
    category: str
    aliases: tuple[str, ...] = ()
    cui: str | None = None
    preferred_name: str | None = None


@dataclass(frozen=True)
class GateRule:
    """Evidence gate: drops an unsupported positive prediction back to unknown.

    A gated item currently holding a positive value is reset when any block
    pattern matches the scoped summary text, or when require patterns exist
    and none of them match.
    """

    id: str
    item: str
    require_patterns: tuple[str, ...] = ()
    block_patterns: tuple[str, ...] = ()
    scope: tuple[str, ...] = (SCOPE_ALL,)


@dataclass(frozen=True)
class DerivationRule:
    """Asserts a composite item from aggregated summary evidence."""

    id: str
    item: str
    kind: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RuleProfile:
    name: str
    derivations: tuple[DerivationRule, ...] = ()
    gates: tuple[GateRule, ...] = ()


@dataclass(frozen=True)
class Ontology:
    items: tuple[ItemDef, ...]
    categories: dict[str, CategoryDef]
    abbreviations: dict[str, str]
    rule_profiles: dict[str, RuleProfile]
    # Derived lookup indexes; rebuilt deterministically on load.
    by_name: dict[str, ItemDef] = field(compare=False, repr=False, default_factory=dict)
    by_folded: dict[str, ItemDef] = field(compare=False, repr=False, default_factory=dict)
    alias_exact: dict[str, ItemDef] = field(compare=False, repr=False, default_factory=dict)
    alias_folded: dict[str, ItemDef] = field(compare=False, repr=False, default_factory=dict)
    item_order: dict[str, int] = field(compare=False, repr=False, default_factory=dict)

    def category_of(self, item: ItemDef) -> CategoryDef | None:
        """None for the unknown_only sentinel."""
        return self.categories.get(item.category)


def default_ontology_path() -> Path:
    return Path(str(resources.files("crfpipe.data").joinpath("ontology_dyspnea_crf.json")))


def default_alias_map_path() -> Path:
    return Path(str(resources.files("crfpipe.data").joinpath("umls_alias_map.json")))


def load_ontology(path: str | Path) -> Ontology:
    """Load and validate an ontology config file. Any defect is fatal."""
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OntologyError(f"cannot read ontology file {path}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except ValueError as exc:
        raise OntologyError(f"ontology file {path} is not valid JSON: {exc}") from exc
    return ontology_from_dict(doc, source=str(path))


def ontology_from_dict(doc: dict, source: str = "<dict>") -> Ontology:
    if not isinstance(doc, dict):
        raise OntologyError(f"{source}: top level must be a JSON object")
    known = {"items", "categories", "abbreviations", "profiles"}
    for key in doc:
        if key not in known and not key.startswith("_"):
            raise OntologyError(f"{source}: unknown top-level key {key!r}")

    categories = _parse_categories(doc.get("categories", []), source)
    items = _parse_items(doc.get("items", []), categories, source)
    abbreviations = _parse_abbreviations(doc.get("abbreviations", {}), source)
    item_names = {item.name for item in items}
    profiles = _parse_profiles(doc.get("profiles", []), item_names, source)

    ontology = _assemble(items, categories, abbreviations, profiles, source)
    return ontology


def lookup_item(ontology: Ontology, key: str) -> ItemDef | None:
    """Case-folded, punctuation-stripped exact match against item names only."""
    folded = fold(key)
    item = ontology.by_folded.get(folded)
    if item is None and len(folded) > 1:
        # Absorbs official names with a truncated final character.
        item = ontology.by_folded.get(folded[:-1])
    return item


def allowed_values(ontology: Ontology, item: ItemDef) -> frozenset[str]:
    """The finite part of an item's value vocabulary.

    Numeric categories additionally allow any plain decimal string; use
    :func:`value_allowed` for the full membership check.
    """
    category = ontology.category_of(item)
    if category is None:
        return frozenset({UNKNOWN})
    if category.kind == CLOSED_SET:
        return frozenset(category.allowed_values) | {UNKNOWN}
    return frozenset({UNKNOWN, MEASURED})


def value_allowed(ontology: Ontology, item: ItemDef, value: str) -> bool:
    category = ontology.category_of(item)
    if category is None:
        return value == UNKNOWN
    if category.kind == CLOSED_SET:
        return value == UNKNOWN or value in category.allowed_values
    return value in (UNKNOWN, MEASURED) or looks_numeric(value)


def load_alias_map(path: str | Path) -> dict[str, dict]:
    """Read an alias-map overlay file (item name -> cui/preferred_name/synonyms)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise OntologyError(f"cannot read alias map {path}: {exc}") from exc
    except ValueError as exc:
        raise OntologyError(f"alias map {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise OntologyError(f"alias map {path}: top level must be a JSON object")
    return {k: v for k, v in doc.items() if not k.startswith("_")}


def apply_alias_map(
    ontology: Ontology, alias_map: dict[str, dict]
) -> tuple[Ontology, tuple[int, int]]:
    """Overlay alias-map synonyms onto the ontology items.

    Returns the merged ontology plus (covered, total) item coverage counts.
    Map keys that match no ontology item are ignored.
    """
    covered = 0
    merged_items: list[ItemDef] = []
    for item in ontology.items:
        entry = alias_map.get(item.name)
        if entry is None:
            merged_items.append(item)
            continue
        covered += 1
        synonyms = tuple(str(s) for s in entry.get("synonyms", []))
        aliases = item.aliases + tuple(s for s in synonyms if s not in item.aliases)
        merged_items.append(
            ItemDef(
                name=item.name,
                category=item.category,
                aliases=aliases,
                cui=str(entry["cui"]) if entry.get("cui") is not None else item.cui,
                preferred_name=(
                    str(entry["preferred_name"])
                    if entry.get("preferred_name") is not None
                    else item.preferred_name
                ),
            )
        )
    merged = _assemble(
        tuple(merged_items),
        ontology.categories,
        ontology.abbreviations,
        ontology.rule_profiles,
        "<alias overlay>",
    )
    return merged, (covered, len(ontology.items))


# ---------------------------------------------------------------------------
# parsing and validation


def _parse_categories(raw: object, source: str) -> dict[str, CategoryDef]:
    if not isinstance(raw, list):
        raise OntologyError(f"{source}: 'categories' must be an array")
    categories: dict[str, CategoryDef] = {}
    for entry in raw:
        cid = str(entry.get("id", "")).strip()
        if not cid:
            raise OntologyError(f"{source}: category without id")
        if cid in categories:
            raise OntologyError(f"{source}: duplicate category id {cid!r}")
        kind = str(entry.get("kind", ""))
        if kind not in CATEGORY_KINDS:
            raise OntologyError(f"{source}: category {cid!r} has unknown kind {kind!r}")
        values = tuple(str(v) for v in entry.get("allowed_values", []))
        if kind == CLOSED_SET and len(values) < 2:
            raise OntologyError(
                f"{source}: closed_set category {cid!r} needs >= 2 allowed values"
            )
        synonyms_raw = entry.get("value_synonyms", {})
        synonyms: dict[str, tuple[str, ...]] = {}
        for label, syns in synonyms_raw.items():
            if label not in values:
                raise OntologyError(
                    f"{source}: category {cid!r} has synonyms for unknown label {label!r}"
                )
            synonyms[label] = tuple(str(s) for s in syns)
        bands = _parse_thresholds(entry.get("thresholds"), cid, values, source)
        categories[cid] = CategoryDef(
            id=cid,
            kind=kind,
            allowed_values=values,
            thresholds=bands,
            value_synonyms=synonyms,
        )
    return categories


def _parse_thresholds(
    raw: object, cid: str, values: tuple[str, ...], source: str
) -> tuple[Band, ...]:
    if raw is None:
        return ()
    if not isinstance(raw, list) or not raw:
        raise OntologyError(f"{source}: category {cid!r} thresholds must be a non-empty array")
    bands: list[Band] = []
    for entry in raw:
        label = str(entry.get("label", ""))
        if label not in values:
            raise OntologyError(
                f"{source}: category {cid!r} band label {label!r} not in allowed_values"
            )
        lower = entry.get("min")
        upper = entry.get("max")
        bands.append(
            Band(
                lower=float(lower) if lower is not None else None,
                upper=float(upper) if upper is not None else None,
                label=label,
            )
        )
    # The bands must tile the real line: open-ended first and last, contiguous
    # boundaries in between, no degenerate intervals.
    if bands[0].lower is not None or bands[-1].upper is not None:
        raise OntologyError(f"{source}: category {cid!r} bands must be open at both ends")
    for left, right in zip(bands, bands[1:]):
        if left.upper is None or right.lower is None or left.upper != right.lower:
            raise OntologyError(
                f"{source}: category {cid!r} bands must be contiguous "
                f"({left.label!r} -> {right.label!r})"
            )
    for band in bands:
        if band.lower is not None and band.upper is not None and band.lower >= band.upper:
            raise OntologyError(f"{source}: category {cid!r} band {band.label!r} is empty")
    return tuple(bands)


def _parse_items(
    raw: object, categories: dict[str, CategoryDef], source: str
) -> tuple[ItemDef, ...]:
    if not isinstance(raw, list) or not raw:
        raise OntologyError(f"{source}: 'items' must be a non-empty array")
    items: list[ItemDef] = []
    for entry in raw:
        name = str(entry.get("name", "")).strip()
        if not name:
            raise OntologyError(f"{source}: item without a name")
        category = str(entry.get("category", ""))
        if category != UNKNOWN_ONLY and category not in categories:
            raise OntologyError(f"{source}: item {name!r} references unknown category {category!r}")
        aliases = tuple(str(a) for a in entry.get("aliases", []))
        cui = entry.get("cui")
        preferred = entry.get("preferred_name")
        items.append(
            ItemDef(
                name=name,
                category=category,
                aliases=aliases,
                cui=str(cui) if cui is not None else None,
                preferred_name=str(preferred) if preferred is not None else None,
            )
        )
    return tuple(items)


def _parse_abbreviations(raw: object, source: str) -> dict[str, str]:
    if not isinstance(raw, dict):
        raise OntologyError(f"{source}: 'abbreviations' must be an object")
    abbreviations: dict[str, str] = {}
    for short, long_form in raw.items():
        key = fold(str(short))
        if not key:
            raise OntologyError(f"{source}: empty abbreviation key")
        if key in abbreviations:
            raise OntologyError(f"{source}: duplicate abbreviation {key!r} after folding")
        abbreviations[key] = str(long_form)
    return abbreviations


def _parse_profiles(raw: object, item_names: set[str], source: str) -> dict[str, RuleProfile]:
    if not isinstance(raw, list):
        raise OntologyError(f"{source}: 'profiles' must be an array")
    profiles: dict[str, RuleProfile] = {}
    for entry in raw:
        name = str(entry.get("name", "")).strip()
        if not name:
            raise OntologyError(f"{source}: profile without a name")
        if name in profiles:
            raise OntologyError(f"{source}: duplicate profile {name!r}")
        seen_ids: set[str] = set()
        derivations = tuple(
            _parse_derivation(d, name, item_names, seen_ids, source)
            for d in entry.get("derivations", [])
        )
        gates = tuple(
            _parse_gate(g, name, item_names, seen_ids, source) for g in entry.get("gates", [])
        )
        profiles[name] = RuleProfile(name=name, derivations=derivations, gates=gates)
    return profiles


def _rule_id(entry: dict, profile: str, seen_ids: set[str], source: str) -> str:
    rule_id = str(entry.get("id", "")).strip()
    if not rule_id:
        raise OntologyError(f"{source}: profile {profile!r} has a rule without an id")
    if rule_id in seen_ids:
        raise OntologyError(f"{source}: profile {profile!r} has a duplicate rule id {rule_id!r}")
    seen_ids.add(rule_id)
    return rule_id


def _rule_item(entry: dict, profile: str, item_names: set[str], source: str) -> str:
    item = str(entry.get("item", ""))
    if item not in item_names:
        raise OntologyError(
            f"{source}: profile {profile!r} rule {entry.get('id')!r} references "
            f"unknown item {item!r}"
        )
    return item


def _parse_derivation(
    entry: dict, profile: str, item_names: set[str], seen_ids: set[str], source: str
) -> DerivationRule:
    rule_id = _rule_id(entry, profile, seen_ids, source)
    item = _rule_item(entry, profile, item_names, source)
    kind = str(entry.get("kind", ""))
    if kind not in DERIVATION_KINDS:
        raise OntologyError(f"{source}: derivation {rule_id!r} has unknown kind {kind!r}")
    params = dict(entry.get("params", {}))
    domain = params.get("domain")
    if domain is not None and domain not in SUMMARY_KEYS:
        raise OntologyError(f"{source}: derivation {rule_id!r} has unknown domain {domain!r}")
    if kind == COUNT_THRESHOLD:
        threshold = params.get("threshold")
        if not isinstance(threshold, int) or threshold < 1:
            raise OntologyError(f"{source}: derivation {rule_id!r} needs integer threshold >= 1")
        if domain is None:
            raise OntologyError(f"{source}: derivation {rule_id!r} needs a domain")
    elif kind == LEXICON_MATCH:
        lexicon = params.get("lexicon")
        if not isinstance(lexicon, list) or not lexicon:
            raise OntologyError(f"{source}: derivation {rule_id!r} needs a non-empty lexicon")
        if domain is None:
            raise OntologyError(f"{source}: derivation {rule_id!r} needs a domain")
    else:  # flag_or_keyword
        flags = params.get("flags", [])
        keywords = params.get("keywords", [])
        if not flags and not keywords:
            raise OntologyError(f"{source}: derivation {rule_id!r} needs flags or keywords")
        for flag in flags:
            if flag not in item_names:
                raise OntologyError(
                    f"{source}: derivation {rule_id!r} references unknown flag item {flag!r}"
                )
        if keywords and domain is None:
            raise OntologyError(f"{source}: derivation {rule_id!r} needs a domain for keywords")
    return DerivationRule(id=rule_id, item=item, kind=kind, params=params)


def _parse_gate(
    entry: dict, profile: str, item_names: set[str], seen_ids: set[str], source: str
) -> GateRule:
    rule_id = _rule_id(entry, profile, seen_ids, source)
    item = _rule_item(entry, profile, item_names, source)
    require = tuple(str(p) for p in entry.get("require_patterns", []))
    block = tuple(str(p) for p in entry.get("block_patterns", []))
    if not require and not block:
        raise OntologyError(f"{source}: gate {rule_id!r} needs require or block patterns")
    for pattern in (*require, *block):
        try:
            compile_pattern(pattern)
        except re.error as exc:
            raise OntologyError(f"{source}: gate {rule_id!r} pattern does not compile: {exc}")
    scope = tuple(str(s) for s in entry.get("scope", [SCOPE_ALL]))
    for key in scope:
        if key != SCOPE_ALL and key not in SUMMARY_KEYS:
            raise OntologyError(f"{source}: gate {rule_id!r} has unknown scope key {key!r}")
    return GateRule(
        id=rule_id, item=item, require_patterns=require, block_patterns=block, scope=scope
    )


def _assemble(
    items: tuple[ItemDef, ...],
    categories: dict[str, CategoryDef],
    abbreviations: dict[str, str],
    profiles: dict[str, RuleProfile],
    source: str,
) -> Ontology:
    by_name: dict[str, ItemDef] = {}
    by_folded: dict[str, ItemDef] = {}
    for item in items:
        if item.name in by_name:
            raise OntologyError(f"{source}: duplicate item name {item.name!r}")
        folded = fold(item.name)
        clash = by_folded.get(folded)
        if clash is not None:
            raise OntologyError(
                f"{source}: items {clash.name!r} and {item.name!r} collide after folding"
            )
        by_name[item.name] = item
        by_folded[folded] = item

    alias_exact: dict[str, ItemDef] = {}
    alias_folded: dict[str, ItemDef] = {}
    for item in items:
        for alias in item.aliases:
            folded = fold(alias)
            owner = by_folded.get(folded)
            if owner is not None and owner.name != item.name:
                raise OntologyError(
                    f"{source}: alias {alias!r} of {item.name!r} collides with item {owner.name!r}"
                )
            prior = alias_folded.get(folded)
            if prior is not None and prior.name != item.name:
                raise OntologyError(
                    f"{source}: alias {alias!r} is claimed by both "
                    f"{prior.name!r} and {item.name!r}"
                )
            alias_exact[alias] = item
            alias_folded[folded] = item

    return Ontology(
        items=items,
        categories=categories,
        abbreviations=abbreviations,
        rule_profiles=profiles,
        by_name=by_name,
        by_folded=by_folded,
        alias_exact=alias_exact,
        alias_folded=alias_folded,
        item_order={item.name: index for index, item in enumerate(items)},
    )
