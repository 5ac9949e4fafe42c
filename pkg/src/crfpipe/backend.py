"""Chat-completions backend client with retry, structured-output fallback, and a mock.

One generic HTTP client covers every endpoint speaking the chat-completions
wire format; model-specific quirks travel as opaque extra request fields. The
mock transport serves canned responses keyed by a stable hash of the prompt,
which makes end-to-end runs fully offline and deterministic.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .errors import BackendError, EmptyCompletionError

TRANSIENT_STATUSES = frozenset({429})


@dataclass(frozen=True)
class BackendConfig:
    url: str = ""
    model: str = ""
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 2.0
    structured_output_mode: bool = False
    max_concurrency: int = 1
    token_env_var: str = "CRFPIPE_API_TOKEN"
    extra_fields: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")


@dataclass(frozen=True)
class CompletionOutcome:
    text: str
    attempts: int
    used_structured_mode: bool
    fallback_applied: bool


class TransportHTTPError(Exception):
    """Non-2xx reply from the backend."""

    def __init__(self, status: int, detail: str = ""):
        super().__init__(f"HTTP {status}: {detail}")
        self.status = status


class Transport(Protocol):
    def send(self, prompt: str, structured: bool) -> str: ...


def prompt_key(prompt: str) -> str:
    """Stable fixture key for a prompt."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


class HttpTransport:
    """POSTs a chat-completions body and returns the first choice's content."""

    def __init__(self, config: BackendConfig):
        self.config = config

    def send(self, prompt: str, structured: bool) -> str:
        body: dict = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
        }
        if structured:
            body["response_format"] = {"type": "json_object"}
        body.update(self.config.extra_fields)

        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.token_env_var, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"

        request = urllib.request.Request(
            self.config.url,
            data=json.dumps(body).encode("utf-8"),
            headers=headers,
            method="POST",
        )
        try:
            with urllib.request.urlopen(request, timeout=self.config.timeout) as reply:
                payload = json.loads(reply.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            detail = ""
            try:
                detail = exc.read().decode("utf-8", "replace")[:200]
            except OSError:
                pass
            raise TransportHTTPError(exc.code, detail) from exc
        try:
            content = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportHTTPError(502, f"malformed completion payload: {exc}") from exc
        return content if isinstance(content, str) else ""


class MockTransport:
    """Reads the canned response `<sha16-of-prompt>.txt` from a fixture dir."""

    def __init__(self, fixture_dir: str | Path):
        self.fixture_dir = Path(fixture_dir)

    def send(self, prompt: str, structured: bool) -> str:
        path = self.fixture_dir / f"{prompt_key(prompt)}.txt"
        if not path.exists():
            raise TransportHTTPError(404, f"no fixture {path.name} in {self.fixture_dir}")
        return path.read_text(encoding="utf-8")


class CompletionClient:
    """Applies structured-output fallback and transient-retry policy."""

    def __init__(self, config: BackendConfig, transport: Transport | None = None):
        self.config = config
        self.transport = transport if transport is not None else HttpTransport(config)

    def complete(self, prompt: str) -> CompletionOutcome:
        """One completion for one prompt.

        The first attempt honors structured_output_mode; an HTTP 400 under
        structured mode retries the same prompt in plain mode. Timeouts, 429,
        and 5xx are retried up to max_retries with exponential backoff. Any
        other failure, or retry exhaustion, raises BackendError.
        """
        structured = self.config.structured_output_mode
        fallback_applied = False
        attempts = 0
        retries_left = self.config.max_retries
        last_status: int | None = None

        while True:
            attempts += 1
            try:
                text = self.transport.send(prompt, structured)
            except TransportHTTPError as exc:
                last_status = exc.status
                if exc.status == 400 and structured and not fallback_applied:
                    structured = False
                    fallback_applied = True
                    continue
                if exc.status in TRANSIENT_STATUSES or 500 <= exc.status < 600:
                    if retries_left > 0:
                        self._backoff(self.config.max_retries - retries_left)
                        retries_left -= 1
                        continue
                raise BackendError(
                    f"backend failed after {attempts} attempt(s): {exc}", status=exc.status
                ) from exc
            except (TimeoutError, OSError) as exc:
                if retries_left > 0:
                    self._backoff(self.config.max_retries - retries_left)
                    retries_left -= 1
                    continue
                raise BackendError(
                    f"backend unreachable after {attempts} attempt(s): {exc}",
                    status=last_status,
                ) from exc

            if not text.strip():
                raise EmptyCompletionError("backend returned an empty completion body")
            return CompletionOutcome(
                text=text,
                attempts=attempts,
                used_structured_mode=structured,
                fallback_applied=fallback_applied,
            )

    def _backoff(self, retry_index: int) -> None:
        delay = self.config.backoff_base * (2**retry_index)
        if delay > 0:
            time.sleep(delay)


def complete(client: CompletionClient, prompt: str) -> CompletionOutcome:
    """Module-level convenience wrapper around CompletionClient.complete."""
    return client.complete(prompt)
