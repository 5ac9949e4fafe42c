"""Unknown-aware scoring of predicted CRF records against gold, plus diagnostics.

Counting rules per (document, item) cell:

* gold unknown, prediction unknown: ignored
* gold unknown, prediction set: FP
* gold set, prediction unknown: FN
* gold set, prediction equal (case-insensitive, canonical numeric form): TP
* gold set, prediction set but different: FP and FN (or FP only, configurable)

Per-item F1 is 2TP/(2TP+FP+FN); items with no gold positives and no predicted
positives are excluded from the macro average by default. Micro F1 aggregates
the raw counts first. Both conventions sit behind ScoreConfig because the
reference scorer's internals are not published.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation

from .compiler import CrfRecord, GateTrace
from .errors import DataFormatError
from .ontology import UNKNOWN, Ontology

MISMATCH_FP_AND_FN = "fp_and_fn"
MISMATCH_FP_ONLY = "fp_only"
ZERO_SUPPORT_EXCLUDE = "exclude"
ZERO_SUPPORT_SCORE_AS_ONE = "score_as_one"


@dataclass(frozen=True)
class ScoreConfig:
    mismatch: str = MISMATCH_FP_AND_FN
    zero_support: str = ZERO_SUPPORT_EXCLUDE

    def __post_init__(self) -> None:
        if self.mismatch not in (MISMATCH_FP_AND_FN, MISMATCH_FP_ONLY):
            raise ValueError(f"unknown mismatch convention {self.mismatch!r}")
        if self.zero_support not in (ZERO_SUPPORT_EXCLUDE, ZERO_SUPPORT_SCORE_AS_ONE):
            raise ValueError(f"unknown zero_support convention {self.zero_support!r}")


@dataclass(frozen=True)
class ItemScore:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    support: int
    predicted: int


@dataclass(frozen=True)
class ScoreReport:
    macro_f1: float
    micro_f1: float
    tp: int
    fp: int
    fn: int
    per_item: dict[str, ItemScore]

    def as_dict(self) -> dict:
        return {
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "per_item": {
                item: {
                    "tp": s.tp,
                    "fp": s.fp,
                    "fn": s.fn,
                    "precision": s.precision,
                    "recall": s.recall,
                    "f1": s.f1,
                    "support": s.support,
                    "predicted": s.predicted,
                }
                for item, s in self.per_item.items()
            },
        }


@dataclass(frozen=True)
class DiagnosticsReport:
    top_fn: tuple[tuple[str, int], ...]
    top_fp: tuple[tuple[str, int], ...]
    gate_impact: dict[str, tuple[int, int]] | None = None


@dataclass
class _Tally:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    support: int = 0
    predicted: int = 0


def canonical_value(value: str) -> str:
    """Comparison form: case-folded, numbers in canonical decimal rendering."""
    text = value.strip().casefold()
    try:
        number = Decimal(text)
    except InvalidOperation:
        return text
    from .textnorm import canonical_number

    return canonical_number(number)


def score(
    predictions: list[CrfRecord],
    gold: list[CrfRecord],
    ontology: Ontology,
    config: ScoreConfig = ScoreConfig(),
) -> ScoreReport:
    """Score predictions against gold; document order never matters."""
    pred_by_id = _index_records(predictions, "predictions")
    gold_by_id = _index_records(gold, "gold")
    if set(pred_by_id) != set(gold_by_id):
        only_pred = sorted(set(pred_by_id) - set(gold_by_id))
        only_gold = sorted(set(gold_by_id) - set(pred_by_id))
        raise DataFormatError(
            f"document id mismatch: only in predictions {only_pred}, only in gold {only_gold}"
        )

    item_names = [item.name for item in ontology.items]
    expected = set(item_names)
    for label, records in (("prediction", pred_by_id), ("gold", gold_by_id)):
        for doc_id, record in records.items():
            names = {name for name, _ in record.values}
            if names != expected:
                extra = sorted(names - expected)
                missing = sorted(expected - names)
                raise DataFormatError(
                    f"{label} record {doc_id!r} does not match the ontology item set "
                    f"(extra {extra[:5]}, missing {missing[:5]})"
                )

    tallies = {name: _Tally() for name in item_names}
    for doc_id in sorted(gold_by_id):
        gold_map = gold_by_id[doc_id].as_mapping()
        pred_map = pred_by_id[doc_id].as_mapping()
        for name in item_names:
            _tally_cell(tallies[name], gold_map[name], pred_map[name], config)

    per_item: dict[str, ItemScore] = {}
    included_f1: list[float] = []
    total_tp = total_fp = total_fn = 0
    for name in item_names:
        t = tallies[name]
        total_tp += t.tp
        total_fp += t.fp
        total_fn += t.fn
        precision = t.tp / (t.tp + t.fp) if t.tp + t.fp else 0.0
        recall = t.tp / (t.tp + t.fn) if t.tp + t.fn else 0.0
        denominator = 2 * t.tp + t.fp + t.fn
        f1 = 2 * t.tp / denominator if denominator else 0.0
        per_item[name] = ItemScore(
            tp=t.tp,
            fp=t.fp,
            fn=t.fn,
            precision=precision,
            recall=recall,
            f1=f1,
            support=t.support,
            predicted=t.predicted,
        )
        if t.support > 0 or t.predicted > 0:
            included_f1.append(f1)
        elif config.zero_support == ZERO_SUPPORT_SCORE_AS_ONE:
            included_f1.append(1.0)

    macro_f1 = sum(included_f1) / len(included_f1) if included_f1 else 0.0
    micro_denominator = 2 * total_tp + total_fp + total_fn
    micro_f1 = 2 * total_tp / micro_denominator if micro_denominator else 0.0
    return ScoreReport(
        macro_f1=macro_f1,
        micro_f1=micro_f1,
        tp=total_tp,
        fp=total_fp,
        fn=total_fn,
        per_item=per_item,
    )


def diagnose(
    predictions: list[CrfRecord],
    gold: list[CrfRecord],
    traces: list[GateTrace] | None,
    ontology: Ontology,
    config: ScoreConfig = ScoreConfig(),
) -> DiagnosticsReport:
    """Rank FP/FN sources; with traces, estimate per-item FP before gating.

    fp_before for a gated item adds back the gate-dropped occurrences whose
    gold value is unknown (exactly the drops that prevented false positives).
    """
    report = score(predictions, gold, ontology, config)
    order = ontology.item_order

    def ranked(count_of) -> tuple[tuple[str, int], ...]:
        rows = [(name, count_of(s)) for name, s in report.per_item.items() if count_of(s) > 0]
        rows.sort(key=lambda row: (-row[1], order[row[0]]))
        return tuple(rows)

    gate_impact: dict[str, tuple[int, int]] | None = None
    if traces:
        gold_by_id = {record.doc_id: record.as_mapping() for record in gold}
        prevented: dict[str, int] = {}
        for trace in traces:
            gold_map = gold_by_id.get(trace.doc_id)
            if gold_map is None:
                continue
            for item, _rule_id, _reason in trace.dropped:
                if canonical_value(gold_map.get(item, UNKNOWN)) == UNKNOWN:
                    prevented[item] = prevented.get(item, 0) + 1
        gate_impact = {}
        for item in sorted(prevented, key=lambda name: order[name]):
            fp_after = report.per_item[item].fp
            gate_impact[item] = (fp_after + prevented[item], fp_after)

    return DiagnosticsReport(
        top_fn=ranked(lambda s: s.fn),
        top_fp=ranked(lambda s: s.fp),
        gate_impact=gate_impact,
    )


def _index_records(records: list[CrfRecord], label: str) -> dict[str, CrfRecord]:
    by_id: dict[str, CrfRecord] = {}
    for record in records:
        if record.doc_id in by_id:
            raise DataFormatError(f"duplicate document id {record.doc_id!r} in {label}")
        by_id[record.doc_id] = record
    return by_id


def _tally_cell(tally: _Tally, gold_value: str, pred_value: str, config: ScoreConfig) -> None:
    gold_c = canonical_value(gold_value)
    pred_c = canonical_value(pred_value)
    gold_set = gold_c != UNKNOWN
    pred_set = pred_c != UNKNOWN
    if gold_set:
        tally.support += 1
    if pred_set:
        tally.predicted += 1
    if not gold_set and not pred_set:
        return
    if not gold_set and pred_set:
        tally.fp += 1
    elif gold_set and not pred_set:
        tally.fn += 1
    elif gold_c == pred_c:
        tally.tp += 1
    else:
        tally.fp += 1
        if config.mismatch == MISMATCH_FP_AND_FN:
            tally.fn += 1
