"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class CrfPipeError(Exception):
    """Base class for all crfpipe errors."""


class OntologyError(CrfPipeError):
    """Ontology config file is malformed or internally inconsistent."""


class ConfigError(CrfPipeError):
    """Runtime configuration is invalid (missing files, unknown profile, ...)."""


class DataFormatError(CrfPipeError):
    """Input records, summaries, or submissions are malformed."""


class BackendError(CrfPipeError):
    """Completion backend failed after exhausting the retry policy."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class EmptyCompletionError(BackendError):
    """Backend replied with an empty completion body."""
