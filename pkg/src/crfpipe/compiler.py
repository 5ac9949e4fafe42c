"""Deterministic four-step compiler from a nine-domain summary to a full CRF record.

Step 1 extracts `Key: Value` facts from each domain section, step 2 maps raw
keys onto canonical item names, step 3 applies derivation rules and evidence
gates, and step 4 normalizes every value into the item's controlled vocabulary
and expands to the full ordered item list. The whole pipeline is a pure
function of (summary, ontology, profile): no network, no clock, no RNG.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import ConfigError
from .ontology import (
    CLOSED_SET,
    COUNT_THRESHOLD,
    FLAG_OR_KEYWORD,
    LEXICON_MATCH,
    MEASURED,
    NUMERIC_OR_MEASURED,
    NUMERIC_PASSTHROUGH,
    SCOPE_ALL,
    UNKNOWN,
    UNKNOWN_ONLY,
    CategoryDef,
    DerivationRule,
    GateRule,
    ItemDef,
    Ontology,
    RuleProfile,
    compile_pattern,
)
from .summary import SUMMARY_KEYS, DomainSummary
from .textnorm import canonical_number_in, first_number, fold

MAX_KEY_LENGTH = 60

# Values that state the absence of information; such facts are skipped.
SKIP_VALUE_PREFIXES = ("not stated", "unknown", "none", "n/a", "not mentioned")

# Negation applies to the item's own value string only; note-scope negation is
# the business of the evidence gates.
NEGATION_TOKENS = ("no", "denies", "negative for", "absent")

# Cues that a lab was taken even though no number was reported.
MEASURED_CUES = (
    "measured",
    "performed",
    "done",
    "taken",
    "drawn",
    "checked",
    "pending",
    "elevated",
    "high",
    "low",
    "normal",
    "abnormal",
    "positive",
    "negative",
    "wnl",
)

TIER_EXACT = "exact"
TIER_FOLDED = "folded"
TIER_ABBREV = "abbrev"
TIER_ALIAS = "alias"
TIER_DERIVED = "derived"
MATCH_TIERS = (TIER_EXACT, TIER_FOLDED, TIER_ABBREV, TIER_ALIAS, TIER_DERIVED)

_SENTENCE_SPLIT_RE = re.compile(r"(?<=\.)\s+(?=[A-Z0-9])")
_KV_RE = re.compile(r"^\s*([^:]+?)\s*:\s*(.+?)\s*$")
_NUMBER_TOKEN_RE = re.compile(r"\d+(?:[.,]\d+)?")

# Generic list headers whose KV value, not key, carries the medication names.
_MED_HEADER_LABELS = frozenset(
    {
        "medication",
        "medications",
        "medication list",
        "meds",
        "home medications",
        "current medications",
        "drugs",
        "drug list",
        "therapy",
    }
)


@dataclass(frozen=True)
class KvFact:
    raw_key: str
    raw_value: str
    source_domain: str


@dataclass(frozen=True)
class CanonFact:
    value: str
    tier: str
    source_domain: str


@dataclass
class CanonFacts:
    """Ordered map of canonical item name to fact; first writer wins."""

    facts: dict[str, CanonFact] = field(default_factory=dict)
    duplicates: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class GateTrace:
    """Audit log of derivations, gate drops, and ignored duplicates."""

    doc_id: str = ""
    derived: list[tuple[str, str, str]] = field(default_factory=list)
    dropped: list[tuple[str, str, str]] = field(default_factory=list)
    duplicates_ignored: list[tuple[str, str]] = field(default_factory=list)
    match_tiers: dict[str, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "id": self.doc_id,
            "derived": [
                {"item": item, "rule": rule, "evidence": evidence}
                for item, rule, evidence in self.derived
            ],
            "dropped": [
                {"item": item, "rule": rule, "reason": reason}
                for item, rule, reason in self.dropped
            ],
            "duplicates_ignored": [
                {"item": item, "discarded_value": value}
                for item, value in self.duplicates_ignored
            ],
            "match_tiers": dict(self.match_tiers),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GateTrace":
        return cls(
            doc_id=str(data.get("id", "")),
            derived=[
                (str(d["item"]), str(d["rule"]), str(d.get("evidence", "")))
                for d in data.get("derived", [])
            ],
            dropped=[
                (str(d["item"]), str(d["rule"]), str(d.get("reason", "")))
                for d in data.get("dropped", [])
            ],
            duplicates_ignored=[
                (str(d["item"]), str(d.get("discarded_value", "")))
                for d in data.get("duplicates_ignored", [])
            ],
            match_tiers=dict(data.get("match_tiers", {})),
        )


@dataclass(frozen=True)
class CrfRecord:
    """One document's complete ordered item-to-value assignment."""

    doc_id: str
    values: tuple[tuple[str, str], ...]

    def as_mapping(self) -> dict[str, str]:
        return dict(self.values)


def extract_kv(summary: DomainSummary) -> list[KvFact]:
    """Step 1: collect `Key: Value` facts from each domain in fixed order.

    Domain text is split on newlines, then on sentence boundaries (a period
    followed by whitespace and an uppercase letter or digit). Facts whose value
    merely states absence are skipped; trailing periods are trimmed.
    """
    facts: list[KvFact] = []
    for domain in SUMMARY_KEYS:
        text = summary.get(domain)
        if not text:
            continue
        for line in text.splitlines():
            for fragment in _SENTENCE_SPLIT_RE.split(line):
                match = _KV_RE.match(fragment)
                if match is None:
                    continue
                key = match.group(1)
                if not 1 <= len(key) <= MAX_KEY_LENGTH:
                    continue
                value = match.group(2).rstrip(".").strip()
                if not value:
                    continue
                if value.casefold().startswith(SKIP_VALUE_PREFIXES):
                    continue
                facts.append(KvFact(raw_key=key, raw_value=value, source_domain=domain))
    return facts


def canonicalize(
    kv: list[KvFact], ontology: Ontology, use_alias_map: bool = False
) -> tuple[CanonFacts, list[str]]:
    """Step 2: map raw keys onto canonical item names.

    Tiers, first hit wins: exact name match; case-folding plus punctuation
    stripping (with a single-trailing-character fallback); whole-token
    abbreviation expansion re-run through the first two tiers; optional alias
    resolution. Unresolved keys are returned, never silently dropped.
    """
    canon = CanonFacts()
    unresolved: list[str] = []
    for fact in kv:
        resolved = _resolve_key(fact.raw_key, ontology, use_alias_map)
        if resolved is None:
            unresolved.append(fact.raw_key)
            continue
        item, tier = resolved
        if item.name in canon.facts:
            canon.duplicates.append((item.name, fact.raw_value))
            continue
        canon.facts[item.name] = CanonFact(
            value=fact.raw_value, tier=tier, source_domain=fact.source_domain
        )
    return canon, unresolved


def apply_gates(
    canon: CanonFacts,
    summary: DomainSummary,
    profile: RuleProfile | str,
    ontology: Ontology,
) -> tuple[CanonFacts, GateTrace]:
    """Step 3: derivations first, then evidence gates.

    Derivations assert composite items from aggregated evidence but never
    overwrite an existing fact. Gates reset unsupported positive values to
    unknown by deleting the fact (step 4 then fills `unknown`).
    """
    profile = _resolve_profile(profile, ontology)
    out = CanonFacts(facts=dict(canon.facts), duplicates=list(canon.duplicates))
    trace = GateTrace(duplicates_ignored=list(canon.duplicates))

    for rule in profile.derivations:
        evidence = _evaluate_derivation(rule, summary, out, ontology)
        if evidence is None:
            continue
        if rule.item in out.facts:
            trace.duplicates_ignored.append((rule.item, "y"))
            continue
        out.facts[rule.item] = CanonFact(
            value="y", tier=TIER_DERIVED, source_domain=str(rule.params.get("domain", ""))
        )
        trace.derived.append((rule.item, rule.id, evidence))

    for gate in profile.gates:
        entry = out.facts.get(gate.item)
        if entry is None:
            continue
        item = ontology.by_name[gate.item]
        if not _value_is_positive(entry.value, item, ontology):
            continue
        scope_text = _scope_text(summary, gate.scope)
        blocked = _first_match(gate.block_patterns, scope_text)
        if blocked is not None:
            del out.facts[gate.item]
            trace.dropped.append((gate.item, gate.id, f"block pattern matched: {blocked!r}"))
            continue
        if gate.require_patterns and _first_match(gate.require_patterns, scope_text) is None:
            del out.facts[gate.item]
            trace.dropped.append((gate.item, gate.id, "no require pattern matched"))

    trace.match_tiers = match_tier_histogram(out)
    return out, trace


def normalize_values(canon: CanonFacts, ontology: Ontology, doc_id: str) -> CrfRecord:
    """Step 4: map every fact into the controlled vocabulary and expand.

    Items without a fact, unknown_only items, and unresolvable values all come
    out as `unknown`; the record covers every ontology item in file order.
    """
    values: list[tuple[str, str]] = []
    for item in ontology.items:
        entry = canon.facts.get(item.name)
        if entry is None:
            values.append((item.name, UNKNOWN))
        else:
            values.append((item.name, normalize_value(entry.value, item, ontology)))
    return CrfRecord(doc_id=doc_id, values=tuple(values))


def compile_summary(
    summary: DomainSummary,
    ontology: Ontology,
    profile: RuleProfile | str,
    use_alias_map: bool = False,
    doc_id: str = "",
) -> tuple[CrfRecord, GateTrace, list[str]]:
    """The composed deterministic pipeline; total over summary content."""
    profile = _resolve_profile(profile, ontology)
    kv = extract_kv(summary)
    canon, unresolved = canonicalize(kv, ontology, use_alias_map=use_alias_map)
    gated, trace = apply_gates(canon, summary, profile, ontology)
    record = normalize_values(gated, ontology, doc_id)
    trace.doc_id = doc_id
    return record, trace, unresolved


def normalize_value(value: str, item: ItemDef, ontology: Ontology) -> str:
    """Map one raw value string into the item's controlled vocabulary."""
    if item.category == UNKNOWN_ONLY:
        return UNKNOWN
    category = ontology.categories[item.category]
    if category.kind == CLOSED_SET:
        label = _match_label(value, category)
        if label is not None:
            return label
        if category.thresholds:
            number = first_number(value)
            if number is not None:
                band = category.band_label(float(number))
                if band is not None:
                    return band
        if "n" in category.allowed_values and _has_negation(value):
            return "n"
        if "y" in category.allowed_values and _is_affirmative(value):
            return "y"
        return UNKNOWN
    if category.kind == NUMERIC_OR_MEASURED:
        number = canonical_number_in(value)
        if number is not None:
            return number
        if _has_measured_cue(value):
            return MEASURED
        return UNKNOWN
    if category.kind == NUMERIC_PASSTHROUGH:
        number = canonical_number_in(value)
        return number if number is not None else UNKNOWN
    return UNKNOWN  # pragma: no cover - kinds are validated at load


def match_tier_histogram(canon: CanonFacts) -> dict[str, int]:
    histogram = {tier: 0 for tier in MATCH_TIERS}
    for fact in canon.facts.values():
        histogram[fact.tier] += 1
    return histogram


# ---------------------------------------------------------------------------
# step 2 internals


def _resolve_key(
    raw_key: str, ontology: Ontology, use_alias_map: bool
) -> tuple[ItemDef, str] | None:
    key = raw_key.strip()
    item = ontology.by_name.get(key)
    if item is not None:
        return item, TIER_EXACT

    folded = fold(key)
    item = _folded_lookup(ontology, folded)
    if item is not None:
        return item, TIER_FOLDED

    expanded = _expand_abbreviations(folded, ontology.abbreviations)
    if expanded is not None:
        item = ontology.by_name.get(expanded) or _folded_lookup(ontology, fold(expanded))
        if item is not None:
            return item, TIER_ABBREV

    if use_alias_map:
        item = ontology.alias_exact.get(key) or ontology.alias_folded.get(folded)
        if item is not None:
            return item, TIER_ALIAS
    return None


def _folded_lookup(ontology: Ontology, folded: str) -> ItemDef | None:
    item = ontology.by_folded.get(folded)
    if item is None and len(folded) > 1:
        item = ontology.by_folded.get(folded[:-1])
    return item


def _expand_abbreviations(folded_key: str, abbreviations: dict[str, str]) -> str | None:
    tokens = folded_key.split()
    expanded = [abbreviations.get(token, token) for token in tokens]
    if expanded == tokens:
        return None
    return " ".join(expanded)


# ---------------------------------------------------------------------------
# step 3 internals


def _resolve_profile(profile: RuleProfile | str, ontology: Ontology) -> RuleProfile:
    if isinstance(profile, RuleProfile):
        return profile
    resolved = ontology.rule_profiles.get(profile)
    if resolved is None:
        known = ", ".join(sorted(ontology.rule_profiles)) or "<none>"
        raise ConfigError(f"unknown rule profile {profile!r} (known: {known})")
    return resolved


def _evaluate_derivation(
    rule: DerivationRule, summary: DomainSummary, canon: CanonFacts, ontology: Ontology
) -> str | None:
    """Evidence string when the rule fires, else None."""
    params = rule.params
    if rule.kind == COUNT_THRESHOLD:
        medications = distinct_medications(
            summary.get(params["domain"]), tuple(params.get("dose_tokens", ()))
        )
        threshold = params["threshold"]
        if len(medications) >= threshold:
            return f"{len(medications)} distinct medications (threshold {threshold})"
        return None
    if rule.kind == LEXICON_MATCH:
        medications = distinct_medications(summary.get(params["domain"]), ())
        for agent in params["lexicon"]:
            agent_folded = fold(str(agent))
            for med in medications:
                if agent_folded in med.split():
                    return f"agent {agent_folded!r} in {med!r}"
        return None
    if rule.kind == FLAG_OR_KEYWORD:
        for flag in params.get("flags", []):
            entry = canon.facts.get(flag)
            if entry is not None and _value_is_positive(
                entry.value, ontology.by_name[flag], ontology
            ):
                return f"flag set: {flag!r}"
        keywords = params.get("keywords", [])
        if keywords:
            text = summary.get(params["domain"])
            for keyword in keywords:
                pattern = compile_pattern(rf"\b{re.escape(str(keyword))}\b")
                if pattern.search(text):
                    return f"keyword {keyword!r}"
        return None
    return None  # pragma: no cover - kinds are validated at load


def distinct_medications(text: str, dose_tokens: tuple[str, ...]) -> list[str]:
    """Distinct medication name keys from a MEDICATIONS-style domain text.

    Splits on newlines, commas, and semicolons, strips dose and schedule
    tokens, folds case, and deduplicates while preserving first-seen order.
    """
    if not text:
        return []
    names: list[str] = []
    seen: set[str] = set()
    for line in text.splitlines():
        for chunk in re.split(r"[,;]", line):
            name = _medication_name(chunk, dose_tokens)
            if name and name not in seen:
                seen.add(name)
                names.append(name)
    return names


def _medication_name(chunk: str, dose_tokens: tuple[str, ...]) -> str:
    text = chunk.strip()
    if not text:
        return ""
    head, sep, tail = text.partition(":")
    if sep:
        # "Aspirin: 81 mg od" names the drug in the key; a generic header like
        # "Medications: aspirin" names it in the value.
        text = tail if fold(head) in _MED_HEADER_LABELS else head
    folded = fold(text)
    if not folded or folded.startswith(SKIP_VALUE_PREFIXES):
        return ""
    drop = {fold(token) for token in dose_tokens}
    kept = [
        token
        for token in folded.split()
        if token not in drop and not _NUMBER_TOKEN_RE.fullmatch(token) and not _is_dosed(token, drop)
    ]
    return " ".join(kept)


def _is_dosed(token: str, dose_units: set[str]) -> bool:
    """True for glued dose tokens like `50mg`."""
    match = _NUMBER_TOKEN_RE.match(token)
    return match is not None and token[match.end() :] in dose_units


def _scope_text(summary: DomainSummary, scope: tuple[str, ...]) -> str:
    if SCOPE_ALL in scope:
        keys: tuple[str, ...] = SUMMARY_KEYS
    else:
        keys = tuple(key for key in SUMMARY_KEYS if key in scope)
    return "\n".join(summary.get(key) for key in keys)


def _first_match(patterns: tuple[str, ...], text: str) -> str | None:
    for pattern in patterns:
        if compile_pattern(pattern).search(text):
            return pattern
    return None


def _value_is_positive(value: str, item: ItemDef, ontology: Ontology) -> bool:
    """Would this value normalize to a positive assertion for the item?"""
    normalized = normalize_value(value, item, ontology)
    if normalized in (UNKNOWN, "n", "neg"):
        return False
    return "not" not in normalized.split()


# ---------------------------------------------------------------------------
# step 4 internals


def _match_label(value: str, category: CategoryDef) -> str | None:
    """Longest allowed-value label (or configured synonym) present in the value."""
    candidates: list[tuple[str, str]] = []
    for label in category.allowed_values:
        candidates.append((label, label))
        for synonym in category.value_synonyms.get(label, ()):
            candidates.append((synonym, label))
    candidates.sort(key=lambda pair: len(pair[0]), reverse=True)
    for needle, label in candidates:
        if _word_pattern(needle).search(value):
            return label
    return None


def _word_pattern(needle: str) -> "re.Pattern[str]":
    escaped = re.escape(needle).replace(r"\ ", r"\s+")
    return compile_pattern(rf"\b{escaped}\b")


def _has_negation(value: str) -> bool:
    return any(_word_pattern(token).search(value) for token in NEGATION_TOKENS)


def _is_affirmative(value: str) -> bool:
    return any(ch.isalnum() for ch in value)


def _has_measured_cue(value: str) -> bool:
    return any(_word_pattern(cue).search(value) for cue in MEASURED_CUES)
