"""Engine configuration: loading, validation, and component factories.

A config document is validated in full at load time; any problem refuses
startup with a diagnostic naming every offending key.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .clock import DEFAULT_CLOCK_START, Clock, LogicalClock, SystemClock
from .errors import ConfigError
from .gateway import (
    TOOL_NAMES,
    Embedder,
    FixtureToolProvider,
    HashEmbedder,
    HttpBackend,
    HttpEmbedder,
    HttpToolProvider,
    ModelBackend,
    ScriptedBackend,
    ToolProvider,
)
from .planner import PlannerConfig


@dataclass
class BackendConfig:
    kind: str = "scripted"
    script_path: str | None = None
    url: str = ""
    model: str = ""
    temperature: float = 0.7
    max_retries: int = 2
    timeout: float = 30.0
    auth_token: str | None = None


@dataclass
class ToolsConfig:
    mode: str = "offline"
    fixtures_path: str | None = None
    base_url: str = ""
    enabled: list[str] = field(default_factory=lambda: list(TOOL_NAMES))
    max_evidence: int = 2


@dataclass
class EmbedderConfig:
    kind: str = "hash"
    dim: int = 64
    url: str = ""
    model: str = ""


@dataclass
class AblationFlags:
    """Feature toggles for the degraded engine variants."""

    planner: bool = False
    memory: bool = False
    departments: bool = False
    aggregation: bool = False

    def to_doc(self) -> dict:
        return {
            "planner": self.planner,
            "memory": self.memory,
            "departments": self.departments,
            "aggregation": self.aggregation,
        }


@dataclass
class EngineConfig:
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    exemplar_threshold: float = 0.60
    max_cases: int = 3
    k_max: int = 5
    memory_window: int = 10
    record_dump_chars: int = 2000
    backend: BackendConfig = field(default_factory=BackendConfig)
    tools: ToolsConfig = field(default_factory=ToolsConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    corpus_path: str | None = None
    session_dir: str = "sessions"
    clock_start: str = DEFAULT_CLOCK_START
    auth_token: str | None = None


def _validate(config: EngineConfig) -> list[str]:
    problems = []
    if not -1.0 <= config.exemplar_threshold <= 1.0:
        problems.append(f"exemplar_threshold must be in [-1, 1], got {config.exemplar_threshold}")
    if config.max_cases < 1:
        problems.append("max_cases must be >= 1")
    if config.k_max < 1:
        problems.append("k_max must be >= 1")
    if config.memory_window < 0:
        problems.append("memory_window must be >= 0")
    if config.backend.kind not in ("scripted", "http"):
        problems.append(f"backend.kind must be scripted or http, got {config.backend.kind!r}")
    elif config.backend.kind == "scripted" and not config.backend.script_path:
        problems.append("backend.kind=scripted requires backend.script_path")
    elif config.backend.kind == "http" and not (config.backend.url and config.backend.model):
        problems.append("backend.kind=http requires backend.url and backend.model")
    if config.tools.mode not in ("offline", "live"):
        problems.append(f"tools.mode must be offline or live, got {config.tools.mode!r}")
    elif config.tools.mode == "offline" and config.tools.enabled and not config.tools.fixtures_path:
        problems.append("tools.mode=offline with enabled tools requires tools.fixtures_path")
    elif config.tools.mode == "live" and not config.tools.base_url:
        problems.append("tools.mode=live requires tools.base_url")
    unknown_tools = [t for t in config.tools.enabled if t not in TOOL_NAMES]
    if unknown_tools:
        problems.append(f"unknown tools enabled: {unknown_tools}")
    if config.tools.max_evidence < 1:
        problems.append("tools.max_evidence must be >= 1")
    if config.embedder.kind not in ("hash", "http"):
        problems.append(f"embedder.kind must be hash or http, got {config.embedder.kind!r}")
    elif config.embedder.kind == "http" and not config.embedder.url:
        problems.append("embedder.kind=http requires embedder.url")
    if config.embedder.dim < 1:
        problems.append("embedder.dim must be >= 1")
    return problems


def config_from_doc(doc: dict, base_dir: Path | None = None) -> EngineConfig:
    """Build and validate an EngineConfig from a parsed document.

    Relative paths inside the document resolve against base_dir (usually the
    config file's directory).
    """

    def resolve(value: str | None) -> str | None:
        if value is None or base_dir is None:
            return value
        path = Path(value)
        return str(path if path.is_absolute() else base_dir / path)

    try:
        planner_doc = doc.get("planner", {})
        planner = PlannerConfig(
            max_steps=planner_doc.get("max_steps", 3),
            search_width=planner_doc.get("search_width", 5),
            beam_width=planner_doc.get("beam_width", 2),
            weights=tuple(planner_doc.get("weights", PlannerConfig().weights)),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"planner config invalid: {exc}") from exc

    backend_doc = doc.get("backend", {})
    tools_doc = doc.get("tools", {})
    embedder_doc = doc.get("embedder", {})
    ablation_doc = doc.get("ablation", {})
    config = EngineConfig(
        planner=planner,
        exemplar_threshold=doc.get("exemplar_threshold", 0.60),
        max_cases=doc.get("max_cases", 3),
        k_max=doc.get("k_max", 5),
        memory_window=doc.get("memory_window", 10),
        record_dump_chars=doc.get("record_dump_chars", 2000),
        backend=BackendConfig(
            kind=backend_doc.get("kind", "scripted"),
            script_path=resolve(backend_doc.get("script_path")),
            url=backend_doc.get("url", ""),
            model=backend_doc.get("model", ""),
            temperature=backend_doc.get("temperature", 0.7),
            max_retries=backend_doc.get("max_retries", 2),
            timeout=backend_doc.get("timeout", 30.0),
            auth_token=backend_doc.get("auth_token"),
        ),
        tools=ToolsConfig(
            mode=tools_doc.get("mode", "offline"),
            fixtures_path=resolve(tools_doc.get("fixtures_path")),
            base_url=tools_doc.get("base_url", ""),
            enabled=list(tools_doc.get("enabled", TOOL_NAMES)),
            max_evidence=tools_doc.get("max_evidence", 2),
        ),
        embedder=EmbedderConfig(
            kind=embedder_doc.get("kind", "hash"),
            dim=embedder_doc.get("dim", 64),
            url=embedder_doc.get("url", ""),
            model=embedder_doc.get("model", ""),
        ),
        ablation=AblationFlags(
            planner=ablation_doc.get("planner", False),
            memory=ablation_doc.get("memory", False),
            departments=ablation_doc.get("departments", False),
            aggregation=ablation_doc.get("aggregation", False),
        ),
        corpus_path=resolve(doc.get("corpus_path")),
        session_dir=resolve(doc.get("session_dir", "sessions")),
        clock_start=doc.get("clock_start", DEFAULT_CLOCK_START),
        auth_token=doc.get("auth_token"),
    )
    problems = _validate(config)
    if problems:
        raise ConfigError("invalid engine config:\n  " + "\n  ".join(problems))
    return config


def load_config(path) -> EngineConfig:
    """Read, parse, and validate a config file; refuses startup on any problem."""
    config_path = Path(path)
    try:
        doc = json.loads(config_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config {config_path} is not valid JSON (line {exc.lineno}): {exc.msg}"
        ) from exc
    return config_from_doc(doc, base_dir=config_path.parent)


def build_backend(config: EngineConfig) -> ModelBackend:
    if config.backend.kind == "scripted":
        return ScriptedBackend.from_file(config.backend.script_path)
    return HttpBackend(
        url=config.backend.url,
        model=config.backend.model,
        temperature=config.backend.temperature,
        max_retries=config.backend.max_retries,
        timeout=config.backend.timeout,
        auth_token=config.backend.auth_token,
    )


def build_embedder(config: EngineConfig) -> Embedder:
    if config.embedder.kind == "hash":
        return HashEmbedder(dim=config.embedder.dim)
    return HttpEmbedder(url=config.embedder.url, model=config.embedder.model, dim=config.embedder.dim)


def build_tools(config: EngineConfig) -> ToolProvider:
    if config.tools.mode == "offline":
        if not config.tools.enabled:
            return FixtureToolProvider(fixtures={}, enabled=[])
        return FixtureToolProvider.from_file(
            config.tools.fixtures_path, enabled=config.tools.enabled
        )
    return HttpToolProvider(base_url=config.tools.base_url, enabled=config.tools.enabled)


def build_clock(config: EngineConfig) -> Clock:
    """Scripted backends get the deterministic logical clock."""
    if config.backend.kind == "scripted":
        return LogicalClock(start=config.clock_start)
    return SystemClock()
