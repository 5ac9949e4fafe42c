"""Prompt construction and per-document summarization orchestration.

Builds the nine-domain extraction prompt, fans a sliced note out to the
completion backend (bounded concurrency), parses each window's output, and
merges the per-window summaries in document window order. Note text is never
logged above debug level.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .backend import CompletionClient
from .errors import BackendError
from .slicing import SliceConfig, slice_with_config
from .summary import (
    SUMMARY_KEYS,
    DomainSummary,
    EMPTY_SUMMARY,
    ParseReport,
    merge_summaries,
    parse_summary,
)

log = logging.getLogger(__name__)

SPARSITY_DIRECTIVE = "include only facts explicitly stated in the note; do not infer or guess"

FORMAT_DIRECTIVE = (
    "Inside each key, write one fact per line as `Name: Value` "
    "(for example `Heart Rate: 105 bpm`)."
)

# Non-normative reconstruction of the per-domain scope text.
DEFAULT_SCOPES: tuple[tuple[str, str], ...] = (
    ("DEMOGRAPHICS", "age, sex, living situation, autonomy, social context"),
    ("VITALS", "vital sign readings: heart rate, blood pressure, respiratory rate, temperature, oxygen saturation, consciousness"),
    ("LABS", "laboratory results and blood gas values with numbers and units"),
    ("PROBLEMS", "past medical history, chronic conditions, known diagnoses"),
    ("SYMPTOMS", "presenting complaints and findings at evaluation"),
    ("MEDICATIONS", "home therapy and drugs administered, one per line"),
    ("PROCEDURES", "diagnostic tests and interventions performed, with outcomes"),
    ("UTILIZATION", "prior admissions, emergency visits, care services involved"),
    ("DISPOSITION", "discharge destination, admission decision, follow-up plan"),
)

DEFAULT_CHECKLISTS: dict[str, tuple[str, ...]] = {
    "VITALS": (
        "heart rate",
        "blood pressure",
        "respiratory rate",
        "body temperature",
        "spo2",
        "level of consciousness",
    ),
    "LABS": ("hemoglobin", "creatinine"),
    "PROBLEMS": (
        "presence of dyspnea",
        "chest pain",
        "heart failure",
        "arrhythmia",
        "acute coronary syndrome",
        "cardiovascular diseases",
        "diffuse vascular disease",
        "active neoplasia",
        "foreign body in the airways",
        "cardiac tamponade",
        "aortic dissection",
        "ab ingestis pneumonia",
    ),
    "SYMPTOMS": ("presence of dyspnea", "chest pain", "agitation"),
    "MEDICATIONS": ("poly-pharmacological therapy", "antihypertensive therapy"),
    "PROCEDURES": ("chest rx", "thoracic ultrasound", "compression ultrasound"),
}

_TEMPLATE = """Summarize the clinical note below into a single JSON object and nothing else.

The object must contain exactly these nine keys, in this order, each holding a plain-text string (empty string when the note says nothing for that domain):

{template_block}

Scope of each key:
{scope_block}

Pay particular attention to these items when the note mentions them:
{checklist_block}

{format_directive}
Sparsity rule: {sparsity_directive}.

CLINICAL NOTE:
{window}
"""


@dataclass(frozen=True)
class PromptSpec:
    """Everything needed to render the extraction prompt deterministically."""

    scopes: tuple[tuple[str, str], ...] = DEFAULT_SCOPES
    checklists: dict[str, tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_CHECKLISTS)
    )
    format_directive: str = FORMAT_DIRECTIVE
    sparsity_directive: str = SPARSITY_DIRECTIVE


def default_prompt_spec() -> PromptSpec:
    return PromptSpec()


def build_prompt(spec: PromptSpec, window: str) -> str:
    """Deterministic render: same spec and window give byte-identical prompts."""
    template_block = "\n".join(f'  "{key}": "..."' for key in SUMMARY_KEYS)
    scope_block = "\n".join(f"- {key}: {text}" for key, text in spec.scopes)
    checklist_lines = []
    for key in SUMMARY_KEYS:
        names = spec.checklists.get(key)
        if names:
            checklist_lines.append(f"- {key}: {', '.join(names)}")
    return _TEMPLATE.format(
        template_block="{\n" + template_block + "\n}",
        scope_block=scope_block,
        checklist_block="\n".join(checklist_lines) or "- (none)",
        format_directive=spec.format_directive,
        sparsity_directive=spec.sparsity_directive,
        window=window,
    )


def summarize_document(
    note_text: str,
    client: CompletionClient,
    spec: PromptSpec,
    slicing: SliceConfig,
    tolerate_window_failure: bool = False,
) -> tuple[DomainSummary, list[ParseReport]]:
    """Slice, summarize each window, parse, and merge in window order.

    A window whose backend call fails aborts the document unless
    tolerate_window_failure is set, in which case it contributes an all-empty
    summary and the report records the backend error.
    """
    windows = slice_with_config(note_text, slicing)
    prompts = [build_prompt(spec, window) for window in windows]
    log.debug("summarizing document over %d window(s)", len(windows))

    raw_outputs: list[str | BackendError] = []
    if len(prompts) == 1 or client.config.max_concurrency == 1:
        for prompt in prompts:
            raw_outputs.append(_complete_or_error(client, prompt))
    else:
        with ThreadPoolExecutor(max_workers=client.config.max_concurrency) as pool:
            futures = [pool.submit(_complete_or_error, client, prompt) for prompt in prompts]
            raw_outputs = [future.result() for future in futures]

    summaries: list[DomainSummary] = []
    reports: list[ParseReport] = []
    for output in raw_outputs:
        if isinstance(output, BackendError):
            if not tolerate_window_failure:
                raise output
            summaries.append(EMPTY_SUMMARY)
            reports.append(
                ParseReport(
                    parse_ok=False,
                    missing_keys=SUMMARY_KEYS,
                    backend_error=str(output),
                )
            )
            continue
        summary, report = parse_summary(output)
        summaries.append(summary)
        reports.append(report)

    return merge_summaries(summaries), reports


def _complete_or_error(client: CompletionClient, prompt: str) -> str | BackendError:
    try:
        return client.complete(prompt).text
    except BackendError as exc:
        return exc
