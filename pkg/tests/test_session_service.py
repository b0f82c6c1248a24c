"""Session state machine, manager command layer, and the HTTP API."""

from __future__ import annotations

import json
import random
import time

import pytest
from fastapi.testclient import TestClient

from periop.aggregation import Feedback, FeedbackDirective
from periop.errors import (
    IllegalTransitionError,
    SessionNotFoundError,
    UnknownPatientError,
)
from periop.service import SessionManager, create_app
from periop.session import Phase, SessionState, SessionStore, TRANSITIONS

from conftest import FixtureEngine


def make_feedback(session_id, feedback_id="fb1", target="plan", action="append", text="extra"):
    directive = (
        FeedbackDirective(target, "strike")
        if action == "strike"
        else FeedbackDirective(target, action, text)
    )
    return Feedback(
        feedback_id=feedback_id,
        session_id=session_id,
        author_role="clinician",
        directives=(directive,),
        submitted_at="2025-01-01T01:00:00+00:00",
    )


class TestStateMachine:
    def test_happy_path_transitions(self):
        session = SessionState("s", "p", "task")
        for phase in (
            Phase.PLANNING,
            Phase.EXECUTING,
            Phase.AGGREGATED,
            Phase.REFLECTED,
            Phase.AWAITING_REVIEW,
            Phase.FINALIZED,
        ):
            session.transition(phase)
        assert session.phase is Phase.FINALIZED

    def test_skipping_phases_is_illegal(self):
        session = SessionState("s", "p", "task")
        with pytest.raises(IllegalTransitionError):
            session.transition(Phase.AGGREGATED)

    def test_failed_reachable_from_every_non_terminal_phase(self):
        order = [
            Phase.CREATED,
            Phase.PLANNING,
            Phase.EXECUTING,
            Phase.AGGREGATED,
            Phase.REFLECTED,
            Phase.AWAITING_REVIEW,
        ]
        for how_far in range(len(order)):
            session = SessionState("s", "p", "task")
            for phase in order[1 : how_far + 1]:
                session.transition(phase)
            session.transition(Phase.FAILED)
            assert session.phase is Phase.FAILED

    def test_terminal_phases_admit_nothing(self):
        for terminal in (Phase.FINALIZED, Phase.FAILED):
            assert TRANSITIONS[terminal] == set()

    def test_transitions_are_audited(self):
        session = SessionState("s", "p", "task")
        session.transition(Phase.PLANNING)
        events = [a for a in session.audit if a["event"] == "phase_transition"]
        assert events[-1]["from"] == "created"
        assert events[-1]["to"] == "planning"

    def test_snapshot_tracks_transitions(self):
        session = SessionState("s", "p", "task")
        assert session.snapshot["phase"] == "created"
        session.transition(Phase.PLANNING)
        assert session.snapshot["phase"] == "planning"


class TestSessionStore:
    def test_save_and_load_round_trip(self, tmp_path):
        store = SessionStore(tmp_path / "sessions")
        session = SessionState("s1", "p", "task")
        session.transition(Phase.PLANNING)
        store.save(session)
        loaded = store.load("s1")
        assert loaded.phase is Phase.PLANNING
        assert loaded.to_doc() == session.to_doc()

    def test_load_unknown_session_raises(self, tmp_path):
        with pytest.raises(SessionNotFoundError):
            SessionStore(tmp_path).load("ghost")


@pytest.fixture
def manager(tmp_path):
    engine = FixtureEngine(tmp_path)
    return SessionManager(engine.config)


class TestManager:
    def test_create_run_reaches_awaiting_review(self, manager):
        session = manager.create_session("P001", "draft a personalised operative strategy", "s1")
        assert session.phase is Phase.CREATED
        manager.run("s1", wait=True)
        assert manager.get_state("s1")["phase"] == "awaiting_review"

    def test_unknown_patient_rejected(self, manager):
        with pytest.raises(UnknownPatientError):
            manager.create_session("P999", "whatever")

    def test_duplicate_session_id_rejected(self, manager):
        manager.create_session("P001", "task", "dup")
        with pytest.raises(IllegalTransitionError):
            manager.create_session("P001", "task", "dup")

    def test_feedback_only_in_awaiting_review(self, manager):
        manager.create_session("P001", "task text", "s1")
        with pytest.raises(IllegalTransitionError):
            manager.submit_feedback("s1", make_feedback("s1"))

    def test_run_twice_rejected(self, manager):
        manager.create_session("P001", "operative strategy please", "s1")
        manager.run("s1", wait=True)
        with pytest.raises(IllegalTransitionError):
            manager.run("s1")

    def test_finalize_is_idempotent(self, manager):
        manager.create_session("P001", "draft operative strategy", "s1")
        manager.run("s1", wait=True)
        first = manager.finalize("s1")
        second = manager.finalize("s1")
        assert first is second
        assert first.to_doc() == second.to_doc()

    def test_feedback_merges_into_final(self, manager):
        manager.create_session("P001", "draft a personalised operative strategy", "s1")
        manager.run("s1", wait=True)
        accepted = manager.submit_feedback(
            "s1", make_feedback("s1", target="plan", action="append", text="hold warfarin")
        )
        assert accepted is True
        duplicate = manager.submit_feedback(
            "s1", make_feedback("s1", target="plan", action="append", text="hold warfarin")
        )
        assert duplicate is False
        final = manager.finalize("s1")
        plan_text = dict(final.final_sections)["plan"]
        assert plan_text.endswith("hold warfarin")
        assert len(final.applied_feedback) == 1

    def test_concurrent_sessions_run_independently(self, manager):
        import time as time_module

        for i, patient in enumerate(("P001", "P002", "P003")):
            manager.create_session(patient, "draft the operative strategy", f"c{i}")
            manager.run(f"c{i}")  # async threads
        deadline = time_module.monotonic() + 20
        while time_module.monotonic() < deadline:
            phases = {manager.get_state(f"c{i}")["phase"] for i in range(3)}
            if phases == {"awaiting_review"}:
                break
            time_module.sleep(0.01)
        assert {manager.get_state(f"c{i}")["phase"] for i in range(3)} == {"awaiting_review"}
        # Each session consumed its own script cursor: identical ledgers.
        ledgers = [manager.sessions[f"c{i}"].ledger.totals() for i in (0, 2)]
        assert ledgers[0]["input_tokens"] > 0

    def test_crash_restart_reconstructs_last_phase(self, tmp_path):
        engine = FixtureEngine(tmp_path)
        first = SessionManager(engine.config)
        first.create_session("P001", "draft a personalised operative strategy", "s1")
        first.run("s1", wait=True)
        first.create_session("P002", "second session", "s2")

        rebuilt = SessionManager(engine.config)
        assert rebuilt.get_state("s1")["phase"] == "awaiting_review"
        assert rebuilt.get_state("s2")["phase"] == "created"
        final = rebuilt.finalize("s1")
        assert rebuilt.get_state("s1")["phase"] == "finalized"
        assert final.final_sections


@pytest.fixture
def client(manager):
    return TestClient(create_app(manager=manager))


def wait_for_phase(client, session_id, phase, timeout=15.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        state = client.get(f"/v1/sessions/{session_id}").json()
        if state["phase"] in (phase, "failed"):
            return state
        time.sleep(0.01)
    raise AssertionError(f"session never reached {phase}")


class TestHttpApi:
    def test_create_run_poll_reaches_awaiting_review(self, client):
        created = client.post(
            "/v1/sessions",
            json={"patient_id": "P001", "task_text": "draft the operative strategy"},
        )
        assert created.status_code == 201
        session_id = created.json()["session_id"]
        ran = client.post(f"/v1/sessions/{session_id}/run")
        assert ran.status_code == 202
        state = wait_for_phase(client, session_id, "awaiting_review")
        assert state["phase"] == "awaiting_review"
        assert state["plan"]

    def test_unknown_patient_404(self, client):
        response = client.post(
            "/v1/sessions", json={"patient_id": "P404", "task_text": "x"}
        )
        assert response.status_code == 404

    def test_unknown_session_404(self, client):
        assert client.get("/v1/sessions/ghost").status_code == 404
        assert client.post("/v1/sessions/ghost/run").status_code == 404

    def test_feedback_in_created_phase_409(self, client):
        client.post(
            "/v1/sessions",
            json={"patient_id": "P001", "task_text": "x", "session_id": "s1"},
        )
        response = client.post(
            "/v1/sessions/s1/feedback",
            json={"directives": [{"target": "plan", "action": "append", "text": "y"}]},
        )
        assert response.status_code == 409

    def test_malformed_feedback_422(self, client):
        client.post(
            "/v1/sessions",
            json={"patient_id": "P001", "task_text": "draft operative strategy", "session_id": "s1"},
        )
        client.post("/v1/sessions/s1/run?wait=true")
        empty = client.post("/v1/sessions/s1/feedback", json={"directives": []})
        assert empty.status_code == 422
        bad_action = client.post(
            "/v1/sessions/s1/feedback",
            json={"directives": [{"target": "plan", "action": "merge", "text": "y"}]},
        )
        assert bad_action.status_code == 422
        bad_target = client.post(
            "/v1/sessions/s1/feedback",
            json={"directives": [{"target": "no such section", "action": "append", "text": "y"}]},
        )
        assert bad_target.status_code == 422

    def test_full_review_flow_with_diff_visible_in_final(self, client):
        client.post(
            "/v1/sessions",
            json={
                "patient_id": "P001",
                "task_text": "draft a personalised operative strategy",
                "session_id": "s1",
            },
        )
        client.post("/v1/sessions/s1/run?wait=true")
        feedback = client.post(
            "/v1/sessions/s1/feedback",
            json={
                "feedback_id": "fb-web",
                "directives": [
                    {"target": "plan", "action": "append", "text": "confirm blood products"},
                    {"target": "contraindications", "action": "strike"},
                ],
            },
        )
        assert feedback.status_code == 202
        final = client.post("/v1/sessions/s1/finalize")
        assert final.status_code == 200
        doc = final.json()
        headings = [s["heading"] for s in doc["final_sections"]]
        assert "contraindications" not in headings
        assert any(
            e["event"] == "directive_applied" and e["action"] == "strike"
            for e in doc["audit_trail"]
        )

    def test_finalized_session_rejects_all_mutation(self, client):
        client.post(
            "/v1/sessions",
            json={"patient_id": "P001", "task_text": "operative strategy", "session_id": "s1"},
        )
        client.post("/v1/sessions/s1/run?wait=true")
        first = client.post("/v1/sessions/s1/finalize")
        again = client.post("/v1/sessions/s1/finalize")
        assert again.status_code == 200  # idempotent, same document
        assert again.json() == first.json()
        feedback = client.post(
            "/v1/sessions/s1/feedback",
            json={"directives": [{"target": "plan", "action": "append", "text": "y"}]},
        )
        assert feedback.status_code == 409
        assert client.post("/v1/sessions/s1/run").status_code == 409

    def test_get_trace(self, client):
        client.post(
            "/v1/sessions",
            json={"patient_id": "P001", "task_text": "operative strategy", "session_id": "s1"},
        )
        client.post("/v1/sessions/s1/run?wait=true")
        trace = client.get("/v1/sessions/s1/trace").json()["trace"]
        assert trace["rounds"]
        assert trace["final_plan"]

    def test_health_and_listings(self, client):
        assert client.get("/v1/health").json()["status"] == "ok"
        patients = client.get("/v1/patients").json()["patients"]
        assert {p["patient_id"] for p in patients} == {"P001", "P002", "P003"}
        client.post(
            "/v1/sessions",
            json={"patient_id": "P001", "task_text": "x", "session_id": "s1"},
        )
        sessions = client.get("/v1/sessions").json()["sessions"]
        assert sessions[0]["session_id"] == "s1"

    def test_citation_lookups_resolve(self, client):
        record = client.get("/v1/records/R001")
        assert record.status_code == 200
        assert record.json()["patient_id"] == "P001"
        case = client.get("/v1/cases/C-CABG")
        assert case.status_code == 200
        assert case.json()["steps"]
        assert client.get("/v1/records/R999").status_code == 404
        assert client.get("/v1/cases/C-NONE").status_code == 404


class TestBearerAuth:
    def test_token_required_when_configured(self, tmp_path):
        engine = FixtureEngine(tmp_path, auth_token="secret-token")
        client = TestClient(create_app(manager=SessionManager(engine.config)))
        denied = client.get("/v1/patients")
        assert denied.status_code == 401
        allowed = client.get(
            "/v1/patients", headers={"Authorization": "Bearer secret-token"}
        )
        assert allowed.status_code == 200


LEGAL = {
    (source.value, target.value) for source, targets in TRANSITIONS.items() for target in targets
}


class TestStateFuzz:
    def test_random_command_sequences_never_leave_the_graph(self, tmp_path):
        engine = FixtureEngine(tmp_path)
        manager = SessionManager(engine.config)
        rng = random.Random(4242)
        operations = ("run", "feedback", "finalize", "state", "run", "finalize")
        for i in range(300):
            session_id = f"fuzz-{i}"
            manager.create_session("P003", "plan the recovery programme", session_id)
            observed = ["created"]

            def note_phase():
                phase = manager.get_state(session_id)["phase"]
                if phase != observed[-1]:
                    observed.append(phase)

            for op in rng.sample(operations, k=rng.randint(1, 6)):
                try:
                    if op == "run":
                        manager.run(session_id, wait=True)
                    elif op == "feedback":
                        manager.submit_feedback(
                            session_id,
                            make_feedback(session_id, f"fb-{i}", target="rehab plan"),
                        )
                    elif op == "finalize":
                        manager.finalize(session_id)
                except IllegalTransitionError:
                    pass
                note_phase()
            # Interpolate the intermediate pipeline phases from the audit log.
            audit = manager.sessions[session_id].audit
            hops = [
                (a["from"], a["to"]) for a in audit if a["event"] == "phase_transition"
            ]
            for hop in hops:
                assert hop in LEGAL, f"undeclared transition {hop}"
