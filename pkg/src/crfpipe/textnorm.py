"""Text folding and numeric canonicalization shared across modules."""

from __future__ import annotations

import re
from decimal import Decimal, InvalidOperation

_WS_RE = re.compile(r"\s+")
_NUMBER_RE = re.compile(r"[-+]?\d+(?:[.,]\d+)?")
_NUMERIC_VALUE_RE = re.compile(r"-?\d+(?:\.\d+)?")


def fold(text: str) -> str:
    """Case-fold and reduce to letters, digits, and single spaces.

    Characters outside letters/digits/spaces act as separators, so hyphenated
    and spaced spellings fold to the same form ("Poly-Pharmacological" and
    "poly pharmacological" both fold to "poly pharmacological").
    """
    cleaned = "".join(ch if ch.isalnum() else " " for ch in text)
    return _WS_RE.sub(" ", cleaned).strip().casefold()


def first_number(text: str) -> Decimal | None:
    """First decimal number in the text; comma accepted as decimal separator."""
    m = _NUMBER_RE.search(text)
    if m is None:
        return None
    try:
        return Decimal(m.group(0).replace(",", "."))
    except InvalidOperation:  # pragma: no cover - regex prevents this
        return None


def canonical_number(value: Decimal) -> str:
    """Render without superfluous leading zeros or trailing fractional zeros."""
    text = format(value, "f")
    negative = text.startswith("-")
    text = text.lstrip("-+")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    text = text.lstrip("0") or "0"
    if text.startswith("."):
        text = "0" + text
    if negative and text != "0":
        text = "-" + text
    return text


def canonical_number_in(text: str) -> str | None:
    """Canonical rendering of the first number in the text, if any."""
    number = first_number(text)
    return None if number is None else canonical_number(number)


def looks_numeric(value: str) -> bool:
    """True when the whole string is a plain decimal number."""
    return _NUMERIC_VALUE_RE.fullmatch(value) is not None
