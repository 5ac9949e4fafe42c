"""Window slicing for notes longer than the model context budget."""

from __future__ import annotations

import math
from dataclasses import dataclass

STRATEGY_SINGLE = "single"
STRATEGY_MIDDLE_HEAD_TAIL = "middle+head_tail"
STRATEGIES = (STRATEGY_SINGLE, STRATEGY_MIDDLE_HEAD_TAIL)

HEAD_TAIL_SEPARATOR = "\n...\n"

# Fraction of one segment's length reused across each internal boundary, so a
# fact sitting on a boundary is seen whole by at least one window.
OVERLAP_FRACTION = 0.15

MIN_CHAR_CAP = 200


@dataclass(frozen=True)
class SliceConfig:
    strategy: str = STRATEGY_SINGLE
    window_count: int = 4
    char_cap: int = 8000


def slice_note(text: str, strategy: str, window_count: int, char_cap: int) -> list[str]:
    """Split a note into windows for independent summarization.

    `single` keeps the first `char_cap` characters. `middle+head_tail` cuts
    the note into `window_count` equal segments with overlap at each internal
    boundary, emits the middle segments first in document order, then one
    combined head+tail window. Notes that already fit in `char_cap` bypass
    slicing entirely.
    """
    if window_count < 1:
        raise ValueError(f"window_count must be >= 1, got {window_count}")
    if char_cap < MIN_CHAR_CAP:
        raise ValueError(f"char_cap must be >= {MIN_CHAR_CAP}, got {char_cap}")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown slicing strategy: {strategy!r}")

    if not text:
        return [""]
    if len(text) <= char_cap or strategy == STRATEGY_SINGLE:
        return [text[:char_cap]]

    segments = _segments(text, window_count)
    if len(segments) == 1:
        return [segments[0][:char_cap]]
    middles = segments[1:-1]
    head_tail = segments[0] + HEAD_TAIL_SEPARATOR + segments[-1]
    return [window[:char_cap] for window in [*middles, head_tail]]


def slice_with_config(text: str, config: SliceConfig) -> list[str]:
    return slice_note(text, config.strategy, config.window_count, config.char_cap)


def _segments(text: str, count: int) -> list[str]:
    length = len(text)
    seg_len = math.ceil(length / count)
    overlap = int(seg_len * OVERLAP_FRACTION)
    segments: list[str] = []
    for index in range(count):
        start = max(0, index * seg_len - overlap)
        end = length if index == count - 1 else min(length, (index + 1) * seg_len)
        if start < end:
            segments.append(text[start:end])
    return segments
