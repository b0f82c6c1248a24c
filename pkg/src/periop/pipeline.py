"""End-to-end session execution: classify, plan, execute, aggregate, reflect,
review, finalize.

Stage failures degrade per each stage's own contract; anything that still
escapes marks the session failed (the structured failure report) and
re-raises for the caller to log. Ablation flags swap out exactly one stage
each: no planner (one direct generation call), no memory (raw-record
truncation instead of retrieval), no departments (one generic agent, no lab
stage), no task-specific aggregation (agent-grouped concatenation).
"""

from __future__ import annotations

import logging

from .agents import (
    GENERIC_AUTHOR,
    identify_abnormal,
    run_department_agent,
    run_lab_agent,
)
from .aggregation import (
    AggregatedSummary,
    FinalOutput,
    aggregate,
    apply_feedback,
    concatenate_by_agent,
    reflect,
)
from .config import EngineConfig
from .domain import Department, EvidenceCache, Plan, PatientProfile, TaskKind, registry_sorted
from .errors import EmptySearchError, EngineError, IllegalTransitionError
from .gateway import ModelBackend, ScriptedBackend, ToolProvider, Embedder
from .memory import LongTermMemory
from .planner import beam_search_plan, parse_step_suggestions, select_local_agents, select_task_agent
from .session import Phase, SessionState, SessionStore

logger = logging.getLogger(__name__)

_DIRECT_PLAN_PROMPT = (
    "Write a surgical plan of at most {max_steps} steps, one per line, for "
    "this case.\nPATIENT: {basic}\nTASK: {task}"
)


def required_stage_tags(config: EngineConfig, has_labs: bool) -> list[str]:
    """The stage tags a script must cover for this configuration.

    Conservative: includes tags a lucky run might skip (lab selection under
    the cap, the revision pass) so a valid script never exhausts mid-session.
    """
    tags = ["planner.classify", "reflect.check", "reflect.revise"]
    if config.ablation.planner:
        tags.append("plan.direct")
    else:
        tags.extend(["planner.expand", "planner.evaluate"])
    if config.ablation.departments:
        tags.append("agent.generic")
    else:
        tags.extend(["planner.select_departments", "agent.department"])
        if has_labs:
            tags.extend(["agent.lab.select", "agent.lab.analyze"])
    if not config.ablation.memory:
        tags.append("memory.query")
    if not config.ablation.aggregation:
        tags.append("aggregate.synthesize")
    return tags


def validate_script_coverage(
    backend: ModelBackend, config: EngineConfig, store: LongTermMemory
) -> None:
    if not isinstance(backend, ScriptedBackend):
        return
    has_labs = any(store.labs.values())
    missing = backend.missing_stages(required_stage_tags(config, has_labs))
    if missing:
        raise EngineError(f"script does not cover required stage tags: {missing}")


def direct_plan(
    patient: PatientProfile, task: TaskKind, config: EngineConfig, backend: ModelBackend
) -> Plan:
    """Planner-ablated mode: the whole plan from one generation call."""
    prompt = _DIRECT_PLAN_PROMPT.format(
        max_steps=config.planner.max_steps, basic=patient.basic_info_text(), task=task.value
    )
    steps = parse_step_suggestions(backend.complete("plan.direct", prompt).text)
    if not steps:
        raise EmptySearchError("direct plan generation produced no steps")
    return Plan.from_texts(steps[: config.planner.max_steps], task)


def execute_session(
    session: SessionState,
    config: EngineConfig,
    store: LongTermMemory,
    backend: ModelBackend,
    tools: ToolProvider,
    embedder: Embedder,
) -> SessionState:
    """Drive one session from created to awaiting_review."""
    backend.ledger = session.ledger
    session.ablation = config.ablation.to_doc()
    try:
        patient = store.get_patient(session.patient_id)
        if patient is None:
            raise EngineError(f"patient {session.patient_id!r} not in the long-term store")
        session.transition(Phase.PLANNING)
        session.task = select_task_agent(session.task_text, backend)

        if config.ablation.planner:
            session.plan = direct_plan(patient, session.task, config, backend)
            session.trace_doc = None
        else:
            plan, trace = beam_search_plan(patient, session.task, config.planner, backend)
            session.plan = plan
            session.trace_doc = trace.to_doc()
        session.transition(Phase.EXECUTING)

        labs = store.labs_for(session.patient_id)
        cache = EvidenceCache()
        for step in session.plan.steps:
            if config.ablation.departments:
                output = run_department_agent(
                    Department.GENERAL_SURGERY,
                    patient,
                    session.task,
                    step,
                    store,
                    session.working,
                    backend,
                    embedder,
                    threshold=config.exemplar_threshold,
                    max_cases=config.max_cases,
                    memory_window=config.memory_window,
                    memory_enabled=not config.ablation.memory,
                    record_dump_chars=config.record_dump_chars,
                    author=GENERIC_AUTHOR,
                    stage_tag="agent.generic",
                )
                session.outputs.append(output)
                continue
            departments = registry_sorted(select_local_agents(patient, backend))
            session.dept_selections.append([d.value for d in departments])
            for dept in departments:
                output = run_department_agent(
                    dept,
                    patient,
                    session.task,
                    step,
                    store,
                    session.working,
                    backend,
                    embedder,
                    threshold=config.exemplar_threshold,
                    max_cases=config.max_cases,
                    memory_window=config.memory_window,
                    memory_enabled=not config.ablation.memory,
                    record_dump_chars=config.record_dump_chars,
                )
                session.outputs.append(output)
            if labs:
                lab_flags: list[str] = []
                analyses = run_lab_agent(
                    patient,
                    session.task,
                    labs,
                    tools,
                    backend,
                    session.working,
                    k_max=config.k_max,
                    step=step,
                    max_evidence=config.tools.max_evidence,
                    cache=cache,
                    flags=lab_flags,
                )
                session.flags.extend(lab_flags)
                session.lab_runs.append(
                    {
                        "step_index": step.index,
                        "abnormal": [i.name for i in identify_abnormal(labs)],
                        "selected": [a.item.name for a in analyses],
                        "analyses": [a.to_doc() for a in analyses],
                    }
                )

        for evidence_id, evidence in cache.items.items():
            session.evidence[evidence_id] = {
                "evidence_id": evidence.evidence_id,
                "source": evidence.source,
                "query": evidence.query,
                "snippet": evidence.snippet,
                "provenance": evidence.provenance,
            }

        if config.ablation.aggregation:
            session.aggregated = AggregatedSummary(
                task=session.task,
                sections=concatenate_by_agent(session.working),
                source_entry_ids=tuple(session.working.entry_ids()),
                synthesized=False,
                flags=("unified-aggregation",),
            )
        else:
            session.aggregated = aggregate(session.task, session.working, backend)
        session.transition(Phase.AGGREGATED)

        session.reflected = reflect(session.aggregated, backend)
        session.transition(Phase.REFLECTED)
        session.transition(Phase.AWAITING_REVIEW)
        return session
    except Exception as exc:
        logger.exception("session %s failed", session.session_id)
        session.fail(f"{type(exc).__name__}: {exc}")
        raise


def submit_feedback(session: SessionState, feedback) -> bool:
    """Register clinician feedback on a session awaiting review.

    Validates the directives all-or-nothing against the pending final state
    (reflected summary plus feedback already queued). Duplicate feedback ids
    are no-ops; returns False for them, True when queued.
    """
    if session.phase != Phase.AWAITING_REVIEW:
        raise IllegalTransitionError(
            f"feedback is only accepted in awaiting_review, session is {session.phase.value}"
        )
    if any(f.feedback_id == feedback.feedback_id for f in session.feedback):
        session.audit.append(
            {"event": "feedback_duplicate_ignored", "feedback_id": feedback.feedback_id}
        )
        session.refresh_snapshot()
        return False
    # Raises InvalidTargetError if any directive cannot apply.
    apply_feedback(session.reflected, [*session.feedback, feedback], session.session_id)
    session.feedback.append(feedback)
    session.audit.append(
        {
            "event": "feedback_submitted",
            "feedback_id": feedback.feedback_id,
            "at": session.clock.now(),
        }
    )
    session.refresh_snapshot()
    return True


def finalize_session(session: SessionState) -> FinalOutput:
    """Apply all queued feedback and freeze the session. Idempotent."""
    if session.phase == Phase.FINALIZED:
        return session.final
    if session.phase != Phase.AWAITING_REVIEW:
        raise IllegalTransitionError(
            f"finalize is only valid in awaiting_review, session is {session.phase.value}"
        )
    final = apply_feedback(session.reflected, session.feedback, session.session_id)
    session.final = final
    session.working.close()
    session.transition(Phase.FINALIZED)
    return final


def run_pipeline(
    session: SessionState,
    config: EngineConfig,
    store: LongTermMemory,
    backend: ModelBackend,
    tools: ToolProvider,
    embedder: Embedder,
    session_store: SessionStore | None = None,
) -> FinalOutput:
    """Execute a session end to end and finalize it with its queued feedback.

    The review gate is still honored: feedback attached to the session before
    this call is merged; a session finalized with zero feedback is the
    identity on the reflected sections.
    """
    if session_store is not None:
        session.set_transition_hook(session_store.save)
    execute_session(session, config, store, backend, tools, embedder)
    return finalize_session(session)
