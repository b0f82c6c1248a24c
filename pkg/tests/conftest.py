"""Shared test fixtures: scripted backends, synthetic patients, fixture engine."""

from __future__ import annotations

import pytest

from periop.config import (
    build_backend,
    build_clock,
    build_embedder,
    build_tools,
    load_config,
)
from periop.domain import PatientProfile
from periop.fixtures import write_engine_config
from periop.gateway import HashEmbedder, ScriptedBackend, ScriptEntry
from periop.memory import load_long_term
from periop.session import SessionState, SessionStore


def make_backend(*entries: ScriptEntry) -> ScriptedBackend:
    return ScriptedBackend(list(entries))


def make_patient(patient_id: str = "PT1", reason: str = "elective procedure") -> PatientProfile:
    return PatientProfile(
        patient_id=patient_id,
        basic_info={
            "age": 50,
            "sex": "female",
            "admission_reason": reason,
            "history_summary": "unremarkable",
            "region": "test region",
            "occupation": "analyst",
            "blood_type": "O+",
        },
    )


@pytest.fixture
def embedder():
    return HashEmbedder(dim=64)


@pytest.fixture
def patient():
    return make_patient()


class FixtureEngine:
    """The shipped corpus/script/tools wired together in a tmp workspace."""

    def __init__(self, tmp_path, **config_overrides):
        self.config_path = write_engine_config(tmp_path, **config_overrides)
        self.config = load_config(self.config_path)
        self.embedder = build_embedder(self.config)
        self.store = load_long_term(self.config.corpus_path, self.embedder)
        self.tools = build_tools(self.config)
        self.session_store = SessionStore(self.config.session_dir)

    def new_backend(self):
        return build_backend(self.config)

    def new_session(self, session_id: str, patient_id: str, task_text: str) -> SessionState:
        return SessionState(
            session_id=session_id,
            patient_id=patient_id,
            task_text=task_text,
            clock=build_clock(self.config),
        )

    def run(self, session_id: str, patient_id: str, task_text: str):
        from periop.pipeline import run_pipeline

        session = self.new_session(session_id, patient_id, task_text)
        final = run_pipeline(
            session,
            self.config,
            self.store,
            self.new_backend(),
            self.tools,
            self.embedder,
            self.session_store,
        )
        return session, final


@pytest.fixture
def fixture_engine(tmp_path):
    return FixtureEngine(tmp_path)


GOLDEN_RUNS = (
    ("golden-P001", "P001", "draft a personalised operative strategy for the bypass candidate"),
    ("golden-P002", "P002", "review the admission notes for missed diagnoses"),
    ("golden-P003", "P003", "design a recovery programme after the appendectomy"),
)
