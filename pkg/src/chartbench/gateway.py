"""Prompt assembly and transport for a remote vision chat model.

Requests follow the OpenAI-compatible ``/v1/chat/completions`` wire format
with the chart attached as a base64 PNG data URI. The API key is read from
the ``CHARTBENCH_API_KEY`` environment variable only.
"""
from __future__ import annotations

import base64
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Union

import httpx

from .imaging import Image
from .preprocess import RowColAnnotation
from .table import Table, serialize_linearized

log = logging.getLogger(__name__)

API_KEY_ENV = "CHARTBENCH_API_KEY"
DEFAULT_MODEL = "gpt-4o"
DEFAULT_TEMPERATURE = 0.1
DEFAULT_MAX_TOKENS = 1024
DEFAULT_TIMEOUT = 60.0

_ANSWER_RE = re.compile(r"^\s*answer\s*:\s*", re.IGNORECASE)
_ROWS_RE = re.compile(r"^[\s*#>-]*rows\s*\**\s*:\s*\**(.*)$", re.IGNORECASE | re.MULTILINE)
_COLS_RE = re.compile(
    r"^[\s*#>-]*col(?:umn)?s\s*\**\s*:\s*\**(.*)$", re.IGNORECASE | re.MULTILINE
)
_PLACEHOLDER_RE = re.compile(r"\{\{(\w+)\}\}")


class GatewayError(RuntimeError):
    pass


class MissingPlaceholder(GatewayError):
    pass


class AuthError(GatewayError):
    pass


class RateLimited(GatewayError):
    pass


class Timeout(GatewayError):
    pass


class ServerError(GatewayError):
    pass


class Unreachable(GatewayError):
    pass


class MalformedServerReply(GatewayError):
    pass


class EmptyCompletion(GatewayError):
    pass


class UnparseableResponse(GatewayError):
    pass


class OfflineError(GatewayError):
    pass


# ---------------------------------------------------------------------------
# templates


@dataclass(frozen=True)
class Template:
    name: str
    version: str
    body: str

    @property
    def tag(self) -> str:
        return f"{self.name}@{self.version}"


def load_template(name: str) -> Template:
    text = resources.files("chartbench.templates").joinpath(f"{name}.txt").read_text("utf-8")
    meta = {}
    lines = text.splitlines()
    k = 0
    while k < len(lines) and lines[k].startswith("#"):
        key, _, value = lines[k][1:].partition(":")
        meta[key.strip()] = value.strip()
        k += 1
    if "version" not in meta:
        raise MissingPlaceholder(f"template {name!r} has no version header")
    return Template(name, meta["version"], "\n".join(lines[k:]).strip("\n"))


def template_versions() -> dict[str, str]:
    names = ("system", "universal", "bar", "line", "pie", "rowcol")
    return {n: load_template(n).version for n in names}


def fill_template(body: str, values: Mapping[str, str]) -> str:
    """Substitute each ``{{name}}`` exactly once in a single pass.

    Inserted text is never rescanned, so a table containing ``{{question}}``
    stays verbatim.
    """
    found = _PLACEHOLDER_RE.findall(body)
    for name in values:
        if found.count(name) != 1:
            raise MissingPlaceholder(
                f"placeholder {{{{{name}}}}} occurs {found.count(name)} times, expected 1"
            )
    extra = set(found) - set(values)
    if extra:
        raise MissingPlaceholder(f"unfilled placeholders: {sorted(extra)}")
    return _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], body)


# ---------------------------------------------------------------------------
# payloads


@dataclass(frozen=True)
class PromptPayload:
    system_text: str
    user_text: str
    image: Optional[Image] = None
    model_name: str = DEFAULT_MODEL
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    request_id: Optional[str] = field(default=None, compare=False)
    templates: tuple = ()

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if not self.user_text.strip():
            raise ValueError("user_text must be non-empty")

    def image_data_uri(self) -> Optional[str]:
        if self.image is None:
            return None
        return "data:image/png;base64," + base64.b64encode(self.image.to_png()).decode("ascii")

    def to_request(self) -> dict:
        content = [{"type": "text", "text": self.user_text}]
        uri = self.image_data_uri()
        if uri is not None:
            content.append({"type": "image_url", "image_url": {"url": uri}})
        return {
            "model": self.model_name,
            "messages": [
                {"role": "system", "content": self.system_text},
                {"role": "user", "content": content},
            ],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }

    def to_bytes(self) -> bytes:
        return json.dumps(self.to_request(), sort_keys=True, ensure_ascii=False).encode("utf-8")


def build_qa_prompt(
    chart_type: str,
    table_text: str,
    question: str,
    *,
    image: Optional[Image] = None,
    model_name: str = DEFAULT_MODEL,
    temperature: float = DEFAULT_TEMPERATURE,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    request_id: Optional[str] = None,
) -> PromptPayload:
    """Universal chart-reading steps, the chart-type block, the table, the question."""
    system = load_template("system")
    universal = load_template("universal")
    used = [system.tag, universal.tag]
    if chart_type in ("bar", "line", "pie"):
        block = load_template(chart_type)
        used.append(block.tag)
        instructions = block.body
    else:
        instructions = ""
    user = fill_template(
        universal.body,
        {"chart_instructions": instructions, "table": table_text, "question": question},
    )
    return PromptPayload(
        system_text=system.body,
        user_text=user,
        image=image,
        model_name=model_name,
        temperature=temperature,
        max_tokens=max_tokens,
        request_id=request_id,
        templates=tuple(used),
    )


def build_rowcol_prompt(
    image: Image,
    *,
    model_name: str = DEFAULT_MODEL,
    temperature: float = DEFAULT_TEMPERATURE,
    request_id: Optional[str] = None,
) -> PromptPayload:
    tpl = load_template("rowcol")
    return PromptPayload(
        system_text=load_template("system").body,
        user_text=tpl.body,
        image=image,
        model_name=model_name,
        temperature=temperature,
        max_tokens=DEFAULT_MAX_TOKENS,
        request_id=request_id,
        templates=(tpl.tag,),
    )


def format_rowcol(rows, cols) -> str:
    """The two-line completion the row/column prompt asks for."""
    return f"ROWS: {'; '.join(rows)}\nCOLS: {'; '.join(cols)}"


def _split_names(line: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in line.split(";") if s.strip())


def parse_rowcol_response(text: str) -> RowColAnnotation:
    rows = _ROWS_RE.search(text)
    cols = _COLS_RE.search(text)
    if rows is None or cols is None:
        missing = "ROWS" if rows is None else "COLS"
        raise UnparseableResponse(f"no {missing} line in completion")
    return RowColAnnotation(
        _split_names(rows.group(1).rstrip("*")),
        _split_names(cols.group(1).rstrip("*")),
        "lmm_extracted",
    )


def extract_answer(text: str) -> str:
    """Final non-empty line of a completion, without an ``ANSWER:`` prefix."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise EmptyCompletion("completion has no text")
    answer = _ANSWER_RE.sub("", lines[-1]).strip()
    if not answer:
        raise EmptyCompletion("completion ends with an empty answer")
    return answer


# ---------------------------------------------------------------------------
# transport


@dataclass
class ServiceConfig:
    url: str
    model: str = DEFAULT_MODEL
    timeout: float = DEFAULT_TIMEOUT
    max_attempts: int = 3
    backoff: float = 0.5
    max_in_flight: int = 4
    min_interval: float = 0.0
    _slots: threading.BoundedSemaphore = field(init=False, repr=False, compare=False)
    _pace: threading.Lock = field(init=False, repr=False, compare=False)
    _last_start: float = field(init=False, repr=False, compare=False, default=0.0)

    def __post_init__(self):
        self._slots = threading.BoundedSemaphore(self.max_in_flight)
        self._pace = threading.Lock()

    @property
    def completions_url(self) -> str:
        url = self.url.rstrip("/")
        if url.endswith("/chat/completions"):
            return url
        if url.endswith("/v1"):
            return url + "/chat/completions"
        return url + "/v1/chat/completions"

    @classmethod
    def from_file(cls, path: Union[str, Path], **overrides) -> "ServiceConfig":
        doc = json.loads(Path(path).read_text("utf-8"))
        if "api_key" in doc:
            raise ValueError(f"credentials are read from ${API_KEY_ENV}, not config files")
        doc.update({k: v for k, v in overrides.items() if v is not None})
        url = doc.pop("endpoint", None) or doc.pop("url")
        return cls(url=url, **doc)

    def _wait_turn(self):
        if self.min_interval <= 0:
            return
        with self._pace:
            delay = self._last_start + self.min_interval - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            self._last_start = time.monotonic()


class ReplayEndpoint:
    """Serves recorded completions keyed by request id; never opens a socket."""

    def __init__(self, completions: Mapping[str, str]):
        self.completions = dict(completions)
        self.calls: list[str] = []

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ReplayEndpoint":
        doc = json.loads(Path(path).read_text("utf-8"))
        return cls(doc.get("completions", doc))

    def reply(self, p: PromptPayload) -> "LmmResponse":
        if p.request_id not in self.completions:
            raise GatewayError(f"no recorded completion for request {p.request_id!r}")
        self.calls.append(p.request_id)
        return LmmResponse(self.completions[p.request_id], "stop", {}, 0, attempts=0)


Endpoint = Union[ServiceConfig, ReplayEndpoint]


@dataclass(frozen=True)
class LmmResponse:
    text: str
    finish_reason: str
    usage: dict
    latency_ms: int
    attempts: int = 1


def _parse_reply(body: bytes, latency_ms: int, attempts: int) -> LmmResponse:
    try:
        doc = json.loads(body)
        choice = doc["choices"][0]
        content = choice["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise MalformedServerReply(f"unexpected completion body: {body[:200]!r}") from exc
    if isinstance(content, list):
        content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
    if not isinstance(content, str):
        raise MalformedServerReply("completion content is not text")
    usage = doc.get("usage") or {}
    return LmmResponse(
        text=content,
        finish_reason=str(choice.get("finish_reason") or "stop"),
        usage={k: usage[k] for k in sorted(usage) if isinstance(usage[k], int)},
        latency_ms=latency_ms,
        attempts=attempts,
    )


def chat(p: PromptPayload, endpoint: Optional[Endpoint]) -> LmmResponse:
    """Send one chat completion, retrying 429, 5xx and timeouts with backoff."""
    if endpoint is None:
        raise OfflineError("no endpoint configured (use --endpoint or --fixtures)")
    if isinstance(endpoint, ReplayEndpoint):
        return endpoint.reply(p)
    key = os.environ.get(API_KEY_ENV)
    if not key:
        raise AuthError(f"${API_KEY_ENV} is not set")
    headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
    body = p.to_bytes()
    url = endpoint.completions_url
    last: GatewayError = GatewayError("no attempt made")
    with endpoint._slots, httpx.Client(timeout=endpoint.timeout) as client:
        for attempt in range(1, endpoint.max_attempts + 1):
            if attempt > 1:
                time.sleep(endpoint.backoff * 2 ** (attempt - 2))
            endpoint._wait_turn()
            start = time.monotonic()
            try:
                resp = client.post(url, content=body, headers=headers)
            except httpx.TimeoutException as exc:
                log.warning("attempt %d/%d to %s timed out", attempt, endpoint.max_attempts, url)
                last = Timeout(f"request timed out after {endpoint.timeout}s")
                last.__cause__ = exc
                continue
            except httpx.TransportError as exc:
                log.warning("attempt %d/%d to %s failed: %s", attempt, endpoint.max_attempts, url, exc)
                last = Unreachable(str(exc))
                continue
            latency = int(round((time.monotonic() - start) * 1000))
            log.info("attempt %d/%d -> HTTP %d (%d ms)", attempt, endpoint.max_attempts, resp.status_code, latency)
            status = resp.status_code
            if status in (401, 403):
                raise AuthError(f"HTTP {status}: {resp.text[:200]}")
            if status == 429:
                last = RateLimited(f"HTTP 429 after {attempt} attempts")
                continue
            if status >= 500:
                last = ServerError(f"HTTP {status} after {attempt} attempts")
                continue
            if status != 200:
                raise GatewayError(f"HTTP {status}: {resp.text[:200]}")
            return _parse_reply(resp.content, latency, attempt)
    raise last


def answer_question(
    image: Optional[Image],
    table: Table,
    question: str,
    chart_type: str,
    endpoint: Optional[Endpoint],
    *,
    request_id: Optional[str] = None,
    model_name: Optional[str] = None,
) -> str:
    """Ask the model one chart question; returns the extracted answer text."""
    if model_name is None:
        model_name = endpoint.model if isinstance(endpoint, ServiceConfig) else DEFAULT_MODEL
    payload = build_qa_prompt(
        chart_type,
        serialize_linearized(table),
        question,
        image=image,
        model_name=model_name,
        request_id=request_id,
    )
    return extract_answer(chat(payload, endpoint).text)
