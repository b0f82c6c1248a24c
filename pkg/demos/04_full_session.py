"""A full deterministic session: plan, execute, aggregate, reflect, review.

Runs the whole pipeline on one synthetic patient, submits clinician feedback
while the session awaits review, and prints the final sections with their
audit trail.
"""

import tempfile

from periop.aggregation import Feedback, FeedbackDirective
from periop.config import (
    build_backend,
    build_clock,
    build_embedder,
    build_tools,
    load_config,
)
from periop.fixtures import write_engine_config
from periop.memory import load_long_term
from periop.pipeline import execute_session, finalize_session, submit_feedback
from periop.session import SessionState, SessionStore

workdir = tempfile.mkdtemp(prefix="periop-demo-")
config = load_config(write_engine_config(workdir))
embedder = build_embedder(config)
store = load_long_term(config.corpus_path, embedder)

session = SessionState(
    session_id="demo-session",
    patient_id="P003",
    task_text="design a recovery programme after the appendectomy",
    clock=build_clock(config),
)
session.set_transition_hook(SessionStore(config.session_dir).save)

execute_session(session, config, store, build_backend(config), build_tools(config), embedder)
print(f"task routed to: {session.task.value}")
print(f"plan ({len(session.plan)} steps): {session.plan.step_texts()}")
print(f"working memory entries: {len(session.working)}")
print(f"reflection verdicts: {[(c.dimension, c.verdict) for c in session.reflected.checks]}")
print(f"phase: {session.phase.value}\n")

submit_feedback(
    session,
    Feedback(
        feedback_id="demo-fb",
        session_id="demo-session",
        author_role="clinician",
        directives=(
            FeedbackDirective("rehab plan", "append", "add supervised gait training"),
            FeedbackDirective("lifestyle guidance", "replace", "no heavy lifting for six weeks"),
        ),
        submitted_at=session.clock.now(),
    ),
)
final = finalize_session(session)

print("final sections (after feedback):")
for heading, text in final.final_sections:
    print(f"## {heading}\n{text}\n")

print("audit trail of applied directives:")
for event in final.audit_trail:
    print(f"  {event['feedback_id']}[{event['directive_index']}] "
          f"{event['action']} -> {event['target']}")

totals = session.ledger.totals()
print(f"\ntoken ledger: {totals['input_tokens']} in / {totals['output_tokens']} out "
      f"across {len(session.ledger.rows)} backend calls")
