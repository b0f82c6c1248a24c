"""Shipped synthetic fixtures: a 3-patient corpus, a full backend script,
and offline tool evidence. Everything the engine needs to run deterministic
offline sessions for demos and tests.
"""

from __future__ import annotations

import json
from pathlib import Path

FIXTURES_DIR = Path(__file__).parent
CORPUS_DIR = FIXTURES_DIR / "corpus"
SCRIPT_PATH = FIXTURES_DIR / "script.json"
TOOLS_PATH = FIXTURES_DIR / "tools.json"


def fixture_path(name: str) -> Path:
    return FIXTURES_DIR / name


def write_engine_config(target_dir, **overrides) -> Path:
    """Write a ready-to-run offline config into target_dir.

    Paths point at the packaged fixtures; the session store lands under
    target_dir. Keyword overrides are merged shallowly into the document.
    """
    target = Path(target_dir)
    target.mkdir(parents=True, exist_ok=True)
    doc = {
        "planner": {
            "max_steps": 3,
            "search_width": 5,
            "beam_width": 2,
            "weights": [0.30, 0.25, 0.20, 0.15, 0.10],
        },
        "exemplar_threshold": 0.60,
        "max_cases": 3,
        "k_max": 5,
        "memory_window": 10,
        "backend": {"kind": "scripted", "script_path": str(SCRIPT_PATH), "temperature": 0.7},
        "tools": {
            "mode": "offline",
            "fixtures_path": str(TOOLS_PATH),
            "enabled": ["web-search", "literature-search", "guideline-store"],
            "max_evidence": 2,
        },
        "embedder": {"kind": "hash", "dim": 64},
        "ablation": {"planner": False, "memory": False, "departments": False, "aggregation": False},
        "corpus_path": str(CORPUS_DIR),
        "session_dir": str(target / "sessions"),
        "clock_start": "2025-01-01T00:00:00+00:00",
    }
    doc.update(overrides)
    path = target / "engine_config.json"
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path
