"""Pluggable text-generation, embedding, and tool contracts.

The engine never branches on backend kind outside this module: everything
upstream calls ``backend.complete(stage_tag, prompt)`` and receives a
:class:`Completion`. The scripted backend replays canned responses from a
script document and is total and deterministic, which is what makes every
pipeline in the test suite byte-reproducible. The HTTP backend speaks the
de-facto chat-completion convention so locally hosted open models work
unmodified.

Token accounting: scripted completions count whitespace tokens (reproducible,
explicitly not comparable to provider tokenizers); HTTP completions prefer
the provider's reported usage.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field

import httpx

from .domain import Evidence
from .errors import (
    EmbedError,
    FormatError,
    ScriptExhaustedError,
    ToolError,
    TransportError,
)

logger = logging.getLogger(__name__)


def count_tokens(text: str) -> int:
    """Whitespace token count used for all scripted accounting."""
    return len(text.split())


@dataclass(frozen=True)
class Completion:
    """One backend response with its token accounting."""

    text: str
    input_tokens: int
    output_tokens: int


@dataclass
class StageUsage:
    """One ledger row: token and wall-time cost of a single backend call."""

    stage: str
    input_tokens: int
    output_tokens: int
    wall_time: float


class TokenLedger:
    """Per-stage token/latency accounting; totals are always column sums."""

    def __init__(self) -> None:
        self.rows: list[StageUsage] = []
        self._lock = threading.Lock()

    def record(self, stage: str, input_tokens: int, output_tokens: int, wall_time: float) -> None:
        with self._lock:
            self.rows.append(StageUsage(stage, input_tokens, output_tokens, wall_time))

    def totals(self) -> dict:
        return {
            "input_tokens": sum(r.input_tokens for r in self.rows),
            "output_tokens": sum(r.output_tokens for r in self.rows),
            "wall_time": sum(r.wall_time for r in self.rows),
        }

    def total_tokens(self) -> int:
        t = self.totals()
        return t["input_tokens"] + t["output_tokens"]

    def by_stage(self) -> dict:
        """Aggregate rows stage-by-stage, preserving first-seen stage order."""
        agg: dict[str, dict] = {}
        for row in self.rows:
            slot = agg.setdefault(
                row.stage, {"calls": 0, "input_tokens": 0, "output_tokens": 0, "wall_time": 0.0}
            )
            slot["calls"] += 1
            slot["input_tokens"] += row.input_tokens
            slot["output_tokens"] += row.output_tokens
            slot["wall_time"] += row.wall_time
        return agg

    def to_doc(self) -> dict:
        return {
            "rows": [
                {
                    "stage": r.stage,
                    "input_tokens": r.input_tokens,
                    "output_tokens": r.output_tokens,
                    "wall_time": r.wall_time,
                }
                for r in self.rows
            ],
            "totals": self.totals(),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "TokenLedger":
        ledger = cls()
        for row in doc.get("rows", []):
            ledger.record(
                row["stage"], row["input_tokens"], row["output_tokens"], row["wall_time"]
            )
        return ledger


class ModelBackend:
    """Abstract text-generation contract.

    Subclasses implement :meth:`complete`; an optional attached ledger
    receives one row per call.
    """

    kind = "abstract"

    def __init__(self) -> None:
        self.ledger: TokenLedger | None = None
        self.call_count = 0

    def complete(self, stage_tag: str, prompt: str) -> Completion:
        raise NotImplementedError

    def _account(self, stage_tag: str, completion: Completion, wall_time: float) -> None:
        self.call_count += 1
        if self.ledger is not None:
            self.ledger.record(
                stage_tag, completion.input_tokens, completion.output_tokens, wall_time
            )


CONSUMPTION_POLICIES = ("cycle", "exhaust")


@dataclass
class ScriptEntry:
    """One scripted matcher: a stage tag, optional key text, and canned responses.

    Entries are tried in declaration order; an entry matches when its stage
    equals the call's stage tag and its key (if any) occurs in the prompt.
    ``cycle`` wraps around its responses; ``exhaust`` raises once depleted.
    """

    stage: str
    responses: list[str]
    key: str | None = None
    policy: str = "cycle"
    cursor: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        if self.policy not in CONSUMPTION_POLICIES:
            raise FormatError(
                f"script entry for stage {self.stage!r}: unknown policy {self.policy!r}"
            )
        if not self.responses:
            raise FormatError(f"script entry for stage {self.stage!r} has no responses")

    def matches(self, stage_tag: str, prompt: str) -> bool:
        if self.stage != stage_tag:
            return False
        return self.key is None or self.key in prompt

    def next_response(self) -> str:
        if self.cursor >= len(self.responses):
            raise ScriptExhaustedError(
                f"script entry for stage {self.stage!r} exhausted after "
                f"{len(self.responses)} responses"
            )
        text = self.responses[self.cursor]
        self.cursor += 1
        if self.policy == "cycle" and self.cursor >= len(self.responses):
            self.cursor = 0
        return text


class ScriptedBackend(ModelBackend):
    """Deterministic backend replaying a script document.

    Cursor advancement is serialized under a lock so response order is
    globally deterministic given the engine's canonical dispatch order.
    Temperature and retries are ignored: the script is total.
    """

    kind = "scripted"

    def __init__(self, entries: list[ScriptEntry]) -> None:
        super().__init__()
        self.entries = entries
        self.calls: list[tuple[str, str]] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        except OSError as exc:
            raise FormatError(f"{path}: {exc}") from exc
        entries = []
        for i, raw in enumerate(doc.get("entries", [])):
            try:
                entries.append(
                    ScriptEntry(
                        stage=raw["stage"],
                        responses=list(raw["responses"]),
                        key=raw.get("key"),
                        policy=raw.get("policy", "cycle"),
                    )
                )
            except KeyError as exc:
                raise FormatError(f"{path}: entry {i} missing field {exc}") from exc
        return cls(entries)

    def complete(self, stage_tag: str, prompt: str) -> Completion:
        with self._lock:
            self.calls.append((stage_tag, prompt))
            for entry in self.entries:
                if entry.matches(stage_tag, prompt):
                    text = entry.next_response()
                    completion = Completion(
                        text=text,
                        input_tokens=count_tokens(prompt),
                        output_tokens=count_tokens(text),
                    )
                    # Zero wall time keeps scripted ledgers byte-reproducible.
                    self._account(stage_tag, completion, 0.0)
                    return completion
        raise ScriptExhaustedError(f"no script entry matches stage tag {stage_tag!r}")

    def stage_call_count(self, stage_tag: str) -> int:
        return sum(1 for stage, _ in self.calls if stage == stage_tag)

    def missing_stages(self, required_tags) -> list[str]:
        """Stage tags with no matching entry; non-empty means the script is invalid."""
        covered = {e.stage for e in self.entries}
        return [tag for tag in required_tags if tag not in covered]


class HttpBackend(ModelBackend):
    """Chat-completion-convention HTTP backend with retry/backoff."""

    kind = "http"

    def __init__(
        self,
        url: str,
        model: str,
        temperature: float = 0.7,
        max_retries: int = 2,
        timeout: float = 30.0,
        auth_token: str | None = None,
        backoff: float = 0.5,
        client: httpx.Client | None = None,
    ) -> None:
        super().__init__()
        self.url = url.rstrip("/")
        self.model = model
        self.temperature = temperature
        self.max_retries = max_retries
        self.timeout = timeout
        self.auth_token = auth_token
        self.backoff = backoff
        self._client = client if client is not None else httpx.Client()

    def complete(self, stage_tag: str, prompt: str) -> Completion:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        }
        headers = {}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        start = time.monotonic()
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                response = self._client.post(
                    f"{self.url}/chat/completions",
                    json=payload,
                    headers=headers,
                    timeout=self.timeout,
                )
                response.raise_for_status()
                body = response.json()
                text = body["choices"][0]["message"]["content"]
                usage = body.get("usage", {})
                completion = Completion(
                    text=text,
                    input_tokens=usage.get("prompt_tokens", count_tokens(prompt)),
                    output_tokens=usage.get("completion_tokens", count_tokens(text)),
                )
                self._account(stage_tag, completion, time.monotonic() - start)
                return completion
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last_error = exc
                if attempt < self.max_retries:
                    time.sleep(self.backoff * (attempt + 1))
        raise TransportError(
            f"backend call for stage {stage_tag!r} failed after "
            f"{self.max_retries + 1} attempts: {last_error}"
        )


def complete(stage_tag: str, prompt: str, backend: ModelBackend) -> Completion:
    """Functional form of the backend call; identical to backend.complete."""
    return backend.complete(stage_tag, prompt)


# ---------------------------------------------------------------------------
# Embedders


class Embedder:
    """Fixed-dimension text embedding contract."""

    dim: int

    def embed(self, text: str) -> tuple[float, ...]:
        raise NotImplementedError


class HashEmbedder(Embedder):
    """Deterministic token-hash bag-of-words projection.

    Retrieval tests need no model: each token is hashed (sha256) into one of
    ``dim`` buckets and counted. Same text always embeds identically on any
    platform; texts with disjoint, non-colliding token sets are orthogonal.
    """

    def __init__(self, dim: int = 64) -> None:
        if dim < 1:
            raise ValueError("embedding dimension must be >= 1")
        self.dim = dim

    def _bucket(self, token: str) -> int:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "big") % self.dim

    def embed(self, text: str) -> tuple[float, ...]:
        tokens = re.findall(r"[a-z0-9]+", text.lower())
        if not tokens and text.strip():
            tokens = [text.strip().lower()]
        vec = [0.0] * self.dim
        for token in tokens:
            vec[self._bucket(token)] += 1.0
        return tuple(vec)


class HttpEmbedder(Embedder):
    """Calls an external embedding endpoint (OpenAI-style /embeddings shape)."""

    def __init__(
        self,
        url: str,
        model: str = "",
        dim: int = 0,
        timeout: float = 30.0,
        client: httpx.Client | None = None,
    ) -> None:
        self.url = url.rstrip("/")
        self.model = model
        self.dim = dim
        self.timeout = timeout
        self._client = client if client is not None else httpx.Client()

    def embed(self, text: str) -> tuple[float, ...]:
        payload: dict = {"input": text}
        if self.model:
            payload["model"] = self.model
        try:
            response = self._client.post(
                f"{self.url}/embeddings", json=payload, timeout=self.timeout
            )
            response.raise_for_status()
            vector = tuple(float(x) for x in response.json()["data"][0]["embedding"])
        except (httpx.HTTPError, KeyError, ValueError, IndexError) as exc:
            raise EmbedError(f"embedding endpoint failed: {exc}") from exc
        if self.dim and len(vector) != self.dim:
            raise EmbedError(f"endpoint returned dim {len(vector)}, expected {self.dim}")
        return vector


# ---------------------------------------------------------------------------
# Evidence tools

TOOL_NAMES = ("web-search", "literature-search", "guideline-store")


def normalize_query(query: str) -> str:
    """Lowercase and collapse whitespace; fixture keys are matched on this form."""
    return " ".join(query.lower().split())


class ToolProvider:
    """Evidence-retrieval contract over a fixed, individually-toggleable tool set."""

    def __init__(self, enabled: list[str] | None = None) -> None:
        self.enabled = list(enabled) if enabled is not None else list(TOOL_NAMES)

    def query(self, tool: str, query: str) -> list[Evidence]:
        raise NotImplementedError


class FixtureToolProvider(ToolProvider):
    """Offline mode: exact-match lookup over a canned query->evidence mapping."""

    def __init__(self, fixtures: dict, enabled: list[str] | None = None) -> None:
        super().__init__(enabled)
        self.fixtures = fixtures

    @classmethod
    def from_file(cls, path, enabled: list[str] | None = None) -> "FixtureToolProvider":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        except OSError as exc:
            raise FormatError(f"{path}: {exc}") from exc
        return cls(doc.get("tools", doc), enabled)

    def query(self, tool: str, query: str) -> list[Evidence]:
        normalized = normalize_query(query)
        canned = self.fixtures.get(tool, {}).get(normalized, [])
        evidence = []
        for i, raw in enumerate(canned):
            evidence.append(
                Evidence(
                    evidence_id=raw.get("evidence_id", f"{tool}:{normalized}:{i}"),
                    source=tool,
                    query=normalized,
                    snippet=raw["snippet"],
                    provenance=raw.get("provenance", f"fixture:{tool}/{normalized}"),
                )
            )
        return evidence


class HttpToolProvider(ToolProvider):
    """Live mode: one HTTP endpoint per tool; failures surface as ToolError."""

    def __init__(
        self,
        base_url: str,
        enabled: list[str] | None = None,
        timeout: float = 30.0,
        client: httpx.Client | None = None,
    ) -> None:
        super().__init__(enabled)
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._client = client if client is not None else httpx.Client()

    def query(self, tool: str, query: str) -> list[Evidence]:
        try:
            response = self._client.post(
                f"{self.base_url}/tools/{tool}",
                json={"query": query},
                timeout=self.timeout,
            )
            response.raise_for_status()
            results = response.json()["results"]
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise ToolError(f"tool {tool!r} failed: {exc}") from exc
        normalized = normalize_query(query)
        return [
            Evidence(
                evidence_id=raw.get("evidence_id", f"{tool}:{normalized}:{i}"),
                source=tool,
                query=normalized,
                snippet=raw["snippet"],
                provenance=raw.get("provenance", f"{self.base_url}/tools/{tool}"),
            )
            for i, raw in enumerate(results)
        ]


def tool_query(tool: str, query: str, provider: ToolProvider) -> list[Evidence]:
    """Query one tool if enabled; offline misses return an empty list."""
    if tool not in provider.enabled:
        return []
    return provider.query(tool, query)
