"""Session lifecycle: the phase state machine, audit trail, and persistence.

A session moves created -> planning -> executing -> aggregated -> reflected
-> awaiting_review -> finalized, with failed reachable from anywhere and
both terminal phases immutable. The full session document is persisted after
every phase transition so a restarted service reconstructs any non-finalized
session at its last completed phase.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .agents import AgentOutput
from .aggregation import AggregatedSummary, Feedback, FinalOutput, ReflectedSummary
from .clock import Clock, LogicalClock
from .domain import Plan, TaskKind
from .errors import IllegalTransitionError, SessionNotFoundError
from .gateway import TokenLedger
from .memory import WorkingMemory


class Phase(str, Enum):
    CREATED = "created"
    PLANNING = "planning"
    EXECUTING = "executing"
    AGGREGATED = "aggregated"
    REFLECTED = "reflected"
    AWAITING_REVIEW = "awaiting_review"
    FINALIZED = "finalized"
    FAILED = "failed"


# The declared transition graph; anything else is illegal.
TRANSITIONS: dict[Phase, set[Phase]] = {
    Phase.CREATED: {Phase.PLANNING, Phase.FAILED},
    Phase.PLANNING: {Phase.EXECUTING, Phase.FAILED},
    Phase.EXECUTING: {Phase.AGGREGATED, Phase.FAILED},
    Phase.AGGREGATED: {Phase.REFLECTED, Phase.FAILED},
    Phase.REFLECTED: {Phase.AWAITING_REVIEW, Phase.FAILED},
    Phase.AWAITING_REVIEW: {Phase.FINALIZED, Phase.FAILED},
    Phase.FINALIZED: set(),
    Phase.FAILED: set(),
}

TERMINAL_PHASES = {Phase.FINALIZED, Phase.FAILED}


def dump_canonical(doc: dict) -> str:
    """The one JSON form used for every persisted/golden document."""
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


@dataclass
class SessionState:
    """Everything one pipeline run produces, in one auditable object."""

    session_id: str
    patient_id: str
    task_text: str
    clock: Clock = field(default_factory=LogicalClock)
    phase: Phase = Phase.CREATED
    task: TaskKind | None = None
    plan: Plan | None = None
    trace_doc: dict | None = None
    working: WorkingMemory = None  # type: ignore[assignment]
    outputs: list[AgentOutput] = field(default_factory=list)
    lab_runs: list[dict] = field(default_factory=list)
    dept_selections: list[list[str]] = field(default_factory=list)
    aggregated: AggregatedSummary | None = None
    reflected: ReflectedSummary | None = None
    feedback: list[Feedback] = field(default_factory=list)
    final: FinalOutput | None = None
    ledger: TokenLedger = field(default_factory=TokenLedger)
    flags: list[str] = field(default_factory=list)
    audit: list[dict] = field(default_factory=list)
    evidence: dict = field(default_factory=dict)
    failure: str | None = None
    ablation: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.working is None:
            self.working = WorkingMemory(self.session_id, clock=self.clock)
        self._lock = threading.Lock()
        self._on_transition = None
        self.snapshot: dict = self.to_doc()

    def set_transition_hook(self, hook) -> None:
        self._on_transition = hook

    def transition(self, new_phase: Phase) -> None:
        """Move to new_phase if the graph admits it; audit and snapshot."""
        with self._lock:
            if new_phase not in TRANSITIONS[self.phase]:
                raise IllegalTransitionError(
                    f"session {self.session_id}: cannot move {self.phase.value} "
                    f"-> {new_phase.value}"
                )
            previous = self.phase
            self.phase = new_phase
            self.audit.append(
                {
                    "event": "phase_transition",
                    "from": previous.value,
                    "to": new_phase.value,
                    "at": self.clock.now(),
                }
            )
            self.snapshot = self.to_doc()
        if self._on_transition is not None:
            self._on_transition(self)

    def fail(self, reason: str) -> None:
        self.failure = reason
        if self.phase not in TERMINAL_PHASES:
            self.transition(Phase.FAILED)

    def refresh_snapshot(self) -> None:
        with self._lock:
            self.snapshot = self.to_doc()

    def to_doc(self) -> dict:
        return {
            "session_id": self.session_id,
            "patient_id": self.patient_id,
            "task_text": self.task_text,
            "phase": self.phase.value,
            "task": self.task.value if self.task else None,
            "plan": self.plan.step_texts() if self.plan else None,
            "trace": self.trace_doc,
            "working_memory": self.working.to_doc(),
            "outputs": [o.to_doc() for o in self.outputs],
            "lab_runs": self.lab_runs,
            "department_selections": self.dept_selections,
            "aggregated": self.aggregated.to_doc() if self.aggregated else None,
            "reflected": self.reflected.to_doc() if self.reflected else None,
            "feedback": [f.to_doc() for f in self.feedback],
            "final": self.final.to_doc() if self.final else None,
            "ledger": self.ledger.to_doc(),
            "flags": list(self.flags),
            "audit": list(self.audit),
            "evidence": dict(self.evidence),
            "failure": self.failure,
            "ablation": dict(self.ablation),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "SessionState":
        session = cls(
            session_id=doc["session_id"],
            patient_id=doc["patient_id"],
            task_text=doc["task_text"],
        )
        session.phase = Phase(doc["phase"])
        session.task = TaskKind(doc["task"]) if doc.get("task") else None
        if doc.get("plan") is not None and session.task is not None:
            session.plan = Plan.from_texts(doc["plan"], session.task)
        session.trace_doc = doc.get("trace")
        session.working = WorkingMemory.from_doc(doc["working_memory"])
        session.outputs = [AgentOutput.from_doc(o) for o in doc.get("outputs", [])]
        session.lab_runs = doc.get("lab_runs", [])
        session.dept_selections = doc.get("department_selections", [])
        if doc.get("aggregated"):
            session.aggregated = AggregatedSummary.from_doc(doc["aggregated"])
        if doc.get("reflected"):
            session.reflected = ReflectedSummary.from_doc(doc["reflected"])
        session.feedback = [Feedback.from_doc(f) for f in doc.get("feedback", [])]
        if doc.get("final"):
            session.final = FinalOutput.from_doc(doc["final"])
        session.ledger = TokenLedger.from_doc(doc.get("ledger", {}))
        session.flags = list(doc.get("flags", []))
        session.audit = list(doc.get("audit", []))
        session.evidence = dict(doc.get("evidence", {}))
        session.failure = doc.get("failure")
        session.ablation = dict(doc.get("ablation", {}))
        session.snapshot = session.to_doc()
        return session


class SessionStore:
    """One canonical JSON document per session on disk."""

    def __init__(self, directory) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def path_for(self, session_id: str) -> Path:
        return self.directory / f"{session_id}.json"

    def save(self, session: SessionState) -> Path:
        path = self.path_for(session.session_id)
        path.write_text(dump_canonical(session.snapshot), encoding="utf-8")
        return path

    def load(self, session_id: str) -> SessionState:
        path = self.path_for(session_id)
        if not path.exists():
            raise SessionNotFoundError(f"no persisted session {session_id!r}")
        return SessionState.from_doc(json.loads(path.read_text(encoding="utf-8")))

    def load_all(self) -> dict[str, SessionState]:
        sessions = {}
        for path in sorted(self.directory.glob("*.json")):
            session = SessionState.from_doc(json.loads(path.read_text(encoding="utf-8")))
            sessions[session.session_id] = session
        return sessions
