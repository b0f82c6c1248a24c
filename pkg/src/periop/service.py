"""Session lifecycle over HTTP: the manager and the FastAPI application.

The manager owns the corpus, the session registry, and persistence; the
routes are a thin mapping from HTTP onto manager calls with the error
contract 404 (unknown session/patient), 409 (illegal phase transition),
422 (malformed feedback). Sessions run asynchronously to the request by
default; finalized sessions are immutable and finalize itself is idempotent.
"""

from __future__ import annotations

import logging
import threading
import uuid

from fastapi import Depends, FastAPI, HTTPException, Request
from pydantic import BaseModel, Field

from .aggregation import Feedback, FeedbackDirective, FinalOutput
from .config import (
    EngineConfig,
    build_backend,
    build_clock,
    build_embedder,
    build_tools,
    load_config,
)
from .errors import (
    IllegalTransitionError,
    InvalidTargetError,
    SessionNotFoundError,
    UnknownPatientError,
)
from .memory import LongTermMemory, load_long_term
from .pipeline import (
    execute_session,
    finalize_session,
    submit_feedback,
    validate_script_coverage,
)
from .session import Phase, SessionState, SessionStore

logger = logging.getLogger(__name__)


class SessionManager:
    """Command layer behind the HTTP routes (and directly usable in-process)."""

    def __init__(self, config: EngineConfig, store: LongTermMemory | None = None) -> None:
        self.config = config
        self.embedder = build_embedder(config)
        if store is not None:
            self.store = store
        else:
            if not config.corpus_path:
                raise UnknownPatientError("no corpus configured (corpus_path missing)")
            self.store = load_long_term(config.corpus_path, self.embedder)
        self.tools = build_tools(config)
        self.session_store = SessionStore(config.session_dir)
        # Crash recovery: every persisted session comes back at its last
        # completed phase.
        self.sessions: dict[str, SessionState] = self.session_store.load_all()
        for session in self.sessions.values():
            session.set_transition_hook(self.session_store.save)
        self._lock = threading.Lock()
        validate_script_coverage(build_backend(config), config, self.store)

    def _get(self, session_id: str) -> SessionState:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise SessionNotFoundError(f"unknown session {session_id!r}") from None

    def create_session(
        self, patient_id: str, task_text: str, session_id: str | None = None
    ) -> SessionState:
        if self.store.get_patient(patient_id) is None:
            raise UnknownPatientError(f"unknown patient {patient_id!r}")
        if not task_text.strip():
            raise ValueError("task_text must be non-empty")
        sid = session_id or uuid.uuid4().hex[:12]
        with self._lock:
            if sid in self.sessions:
                raise IllegalTransitionError(f"session {sid!r} already exists")
            session = SessionState(
                session_id=sid,
                patient_id=patient_id,
                task_text=task_text,
                clock=build_clock(self.config),
            )
            session.set_transition_hook(self.session_store.save)
            self.sessions[sid] = session
        self.session_store.save(session)
        return session

    def run(self, session_id: str, wait: bool = False) -> SessionState:
        session = self._get(session_id)
        if session.phase != Phase.CREATED:
            raise IllegalTransitionError(
                f"run is only valid in created, session is {session.phase.value}"
            )
        backend = build_backend(self.config)  # per-session script cursors

        def job() -> None:
            try:
                execute_session(
                    session, self.config, self.store, backend, self.tools, self.embedder
                )
            except Exception:
                logger.exception("session %s ended in failure", session_id)

        if wait:
            job()
        else:
            threading.Thread(target=job, daemon=True, name=f"session-{session_id}").start()
        return session

    def get_state(self, session_id: str) -> dict:
        """Non-blocking: returns the last published snapshot."""
        return self._get(session_id).snapshot

    def get_trace(self, session_id: str) -> dict | None:
        return self._get(session_id).trace_doc

    def submit_feedback(self, session_id: str, feedback: Feedback) -> bool:
        session = self._get(session_id)
        accepted = submit_feedback(session, feedback)
        self.session_store.save(session)
        return accepted

    def finalize(self, session_id: str) -> FinalOutput:
        session = self._get(session_id)
        return finalize_session(session)

    def new_feedback_id(self) -> str:
        return uuid.uuid4().hex[:12]


class DirectiveModel(BaseModel):
    target: str
    action: str
    text: str = ""


class FeedbackModel(BaseModel):
    feedback_id: str | None = None
    author_role: str = "clinician"
    directives: list[DirectiveModel] = Field(min_length=1)
    submitted_at: str | None = None


class CreateSessionModel(BaseModel):
    patient_id: str
    task_text: str
    session_id: str | None = None


def create_app(
    config: EngineConfig | None = None,
    config_path: str | None = None,
    manager: SessionManager | None = None,
) -> FastAPI:
    """Build the service; config comes from the argument, an explicit path,
    or the PERIOP_CONFIG environment variable."""
    if manager is None:
        if config is None:
            import os

            path = config_path or os.environ.get("PERIOP_CONFIG")
            if not path:
                raise RuntimeError(
                    "no configuration: pass config/config_path or set PERIOP_CONFIG"
                )
            config = load_config(path)
        manager = SessionManager(config)

    app = FastAPI(title="periop session service", version="0.1.0")
    app.state.manager = manager

    def require_auth(request: Request) -> None:
        token = manager.config.auth_token
        if not token:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    auth = Depends(require_auth)

    @app.exception_handler(SessionNotFoundError)
    async def _session_404(request: Request, exc: SessionNotFoundError):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(UnknownPatientError)
    async def _patient_404(request: Request, exc: UnknownPatientError):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(IllegalTransitionError)
    async def _phase_409(request: Request, exc: IllegalTransitionError):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(InvalidTargetError)
    async def _target_422(request: Request, exc: InvalidTargetError):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.get("/v1/health")
    def health() -> dict:
        return {"status": "ok", "sessions": len(manager.sessions)}

    @app.get("/v1/patients", dependencies=[auth])
    def list_patients() -> dict:
        return {
            "patients": [
                {"patient_id": p.patient_id, "basic_info": p.basic_info}
                for p in manager.store.patients.values()
            ]
        }

    @app.get("/v1/records/{record_id}", dependencies=[auth])
    def get_record(record_id: str) -> dict:
        for record in manager.store.records:
            if record.record_id == record_id:
                return {
                    "record_id": record.record_id,
                    "patient_id": record.patient_id,
                    "date": record.date.isoformat(),
                    "text": record.text,
                }
        raise HTTPException(status_code=404, detail=f"unknown record {record_id!r}")

    @app.get("/v1/cases/{case_id}", dependencies=[auth])
    def get_case(case_id: str) -> dict:
        for case in manager.store.cases:
            if case.case_id == case_id:
                return {
                    "case_id": case.case_id,
                    "summary": case.summary,
                    "steps": list(case.workflow_steps),
                }
        raise HTTPException(status_code=404, detail=f"unknown case {case_id!r}")

    @app.get("/v1/sessions", dependencies=[auth])
    def list_sessions() -> dict:
        return {
            "sessions": [
                {
                    "session_id": s.session_id,
                    "patient_id": s.patient_id,
                    "phase": s.phase.value,
                    "task": s.task.value if s.task else None,
                }
                for s in manager.sessions.values()
            ]
        }

    @app.post("/v1/sessions", status_code=201, dependencies=[auth])
    def create_session(body: CreateSessionModel) -> dict:
        try:
            session = manager.create_session(body.patient_id, body.task_text, body.session_id)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return {"session_id": session.session_id, "phase": session.phase.value}

    @app.post("/v1/sessions/{session_id}/run", status_code=202, dependencies=[auth])
    def run_session(session_id: str, wait: bool = False) -> dict:
        session = manager.run(session_id, wait=wait)
        return {"session_id": session_id, "phase": session.phase.value}

    @app.get("/v1/sessions/{session_id}", dependencies=[auth])
    def get_state(session_id: str) -> dict:
        return manager.get_state(session_id)

    @app.get("/v1/sessions/{session_id}/trace", dependencies=[auth])
    def get_trace(session_id: str) -> dict:
        return {"session_id": session_id, "trace": manager.get_trace(session_id)}

    @app.post("/v1/sessions/{session_id}/feedback", status_code=202, dependencies=[auth])
    def post_feedback(session_id: str, body: FeedbackModel) -> dict:
        session = manager._get(session_id)
        try:
            directives = tuple(
                FeedbackDirective(target=d.target, action=d.action, text=d.text)
                for d in body.directives
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        feedback = Feedback(
            feedback_id=body.feedback_id or manager.new_feedback_id(),
            session_id=session_id,
            author_role=body.author_role,
            directives=directives,
            submitted_at=body.submitted_at or session.clock.now(),
        )
        accepted = manager.submit_feedback(session_id, feedback)
        return {
            "session_id": session_id,
            "feedback_id": feedback.feedback_id,
            "accepted": accepted,
            "duplicate": not accepted,
        }

    @app.post("/v1/sessions/{session_id}/finalize", dependencies=[auth])
    def finalize(session_id: str) -> dict:
        return manager.finalize(session_id).to_doc()

    return app
