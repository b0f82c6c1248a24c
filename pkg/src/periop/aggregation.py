"""Task-level synthesis, reflective checking, and clinician feedback merge.

Aggregation consolidates every working-memory contribution into a sectioned
summary under a task-specific template. Reflection checks consistency,
safety, and completeness with at most one revision pass. Feedback is a list
of append/replace/strike directives applied all-or-nothing per submission,
idempotent per feedback id, with every application recorded in the audit
trail.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

from .domain import TaskKind
from .errors import BackendError, InvalidTargetError, ParseError
from .gateway import ModelBackend
from .memory import WorkingMemory

logger = logging.getLogger(__name__)

# One template per task kind; ablation uses the agent-grouped concatenation
# instead of any of these.
SECTION_TEMPLATES: dict[TaskKind, tuple[str, ...]] = {
    TaskKind.ANALYSIS: ("case overview", "differential considerations", "decision support"),
    TaskKind.SURGERY: ("plan", "contraindications", "perioperative notes"),
    TaskKind.SAFETY: ("risk watchlist", "alert thresholds", "mitigation"),
    TaskKind.RISK: ("complication risks", "preventive measures", "monitoring plan"),
    TaskKind.REHAB: ("rehab plan", "lifestyle guidance", "follow-up schedule"),
}

CHECK_DIMENSIONS = ("consistency", "safety", "completeness")

VERDICT_PASS = "pass"
VERDICT_FAIL = "fail"
VERDICT_UNCHECKED = "unchecked"

ACTIONS = ("append", "replace", "strike")


@dataclass(frozen=True)
class AggregatedSummary:
    """Sectioned task-level synthesis with full entry provenance."""

    task: TaskKind
    sections: tuple[tuple[str, str], ...]
    source_entry_ids: tuple[str, ...]
    synthesized: bool = True
    flags: tuple[str, ...] = ()

    def headings(self) -> list[str]:
        return [h for h, _ in self.sections]

    def to_doc(self) -> dict:
        return {
            "task": self.task.value,
            "sections": [{"heading": h, "text": t} for h, t in self.sections],
            "source_entry_ids": list(self.source_entry_ids),
            "synthesized": self.synthesized,
            "flags": list(self.flags),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "AggregatedSummary":
        return cls(
            task=TaskKind(doc["task"]),
            sections=tuple((s["heading"], s["text"]) for s in doc["sections"]),
            source_entry_ids=tuple(doc.get("source_entry_ids", [])),
            synthesized=doc.get("synthesized", True),
            flags=tuple(doc.get("flags", [])),
        )


@dataclass(frozen=True)
class ReflectionCheck:
    dimension: str
    verdict: str
    note: str = ""

    def to_doc(self) -> dict:
        return {"dimension": self.dimension, "verdict": self.verdict, "note": self.note}


@dataclass(frozen=True)
class ReflectedSummary:
    """Post-reflection summary: final checks, with the pre-image archived on revision."""

    summary: AggregatedSummary
    checks: tuple[ReflectionCheck, ...]
    revised: bool
    initial_checks: tuple[ReflectionCheck, ...] | None = None
    archived_sections: tuple[tuple[str, str], ...] | None = None
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        dims = tuple(c.dimension for c in self.checks)
        if dims != CHECK_DIMENSIONS:
            raise ValueError(f"checks must cover exactly {CHECK_DIMENSIONS}, got {dims}")

    @property
    def sections(self) -> tuple[tuple[str, str], ...]:
        return self.summary.sections

    def to_doc(self) -> dict:
        return {
            "summary": self.summary.to_doc(),
            "checks": [c.to_doc() for c in self.checks],
            "revised": self.revised,
            "initial_checks": (
                [c.to_doc() for c in self.initial_checks] if self.initial_checks else None
            ),
            "archived_sections": (
                [{"heading": h, "text": t} for h, t in self.archived_sections]
                if self.archived_sections is not None
                else None
            ),
            "flags": list(self.flags),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ReflectedSummary":
        return cls(
            summary=AggregatedSummary.from_doc(doc["summary"]),
            checks=tuple(ReflectionCheck(**c) for c in doc["checks"]),
            revised=doc["revised"],
            initial_checks=(
                tuple(ReflectionCheck(**c) for c in doc["initial_checks"])
                if doc.get("initial_checks")
                else None
            ),
            archived_sections=(
                tuple((s["heading"], s["text"]) for s in doc["archived_sections"])
                if doc.get("archived_sections") is not None
                else None
            ),
            flags=tuple(doc.get("flags", [])),
        )


@dataclass(frozen=True)
class FeedbackDirective:
    """One clinician edit: append to, replace, or strike a named section."""

    target: str
    action: str
    text: str = ""

    def __post_init__(self) -> None:
        if self.action not in ACTIONS:
            raise ValueError(f"unknown action {self.action!r}")
        if self.action == "strike" and self.text:
            raise ValueError("strike directives carry no text")
        if self.action in ("append", "replace") and not self.text.strip():
            raise ValueError(f"{self.action} directives require non-empty text")

    def to_doc(self) -> dict:
        return {"target": self.target, "action": self.action, "text": self.text}


@dataclass(frozen=True)
class Feedback:
    feedback_id: str
    session_id: str
    author_role: str
    directives: tuple[FeedbackDirective, ...]
    submitted_at: str

    def to_doc(self) -> dict:
        return {
            "feedback_id": self.feedback_id,
            "session_id": self.session_id,
            "author_role": self.author_role,
            "directives": [d.to_doc() for d in self.directives],
            "submitted_at": self.submitted_at,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Feedback":
        return cls(
            feedback_id=doc["feedback_id"],
            session_id=doc["session_id"],
            author_role=doc["author_role"],
            directives=tuple(FeedbackDirective(**d) for d in doc["directives"]),
            submitted_at=doc["submitted_at"],
        )


@dataclass(frozen=True)
class FinalOutput:
    """The reviewed result: reflected summary plus merged clinician feedback."""

    session_id: str
    final_sections: tuple[tuple[str, str], ...]
    applied_feedback: tuple[Feedback, ...]
    audit_trail: tuple[dict, ...]
    reflected: ReflectedSummary

    def to_doc(self) -> dict:
        return {
            "session_id": self.session_id,
            "final_sections": [{"heading": h, "text": t} for h, t in self.final_sections],
            "applied_feedback": [f.to_doc() for f in self.applied_feedback],
            "audit_trail": list(self.audit_trail),
            "reflected": self.reflected.to_doc(),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "FinalOutput":
        return cls(
            session_id=doc["session_id"],
            final_sections=tuple((s["heading"], s["text"]) for s in doc["final_sections"]),
            applied_feedback=tuple(Feedback.from_doc(f) for f in doc["applied_feedback"]),
            audit_trail=tuple(doc["audit_trail"]),
            reflected=ReflectedSummary.from_doc(doc["reflected"]),
        )


_AGGREGATE_PROMPT = (
    "Synthesize the team's contributions into a {task} summary.\n"
    "Use exactly these section headings, each introduced by '## ':\n{headings}\n"
    "CONTRIBUTIONS:\n{entries}"
)

_REFLECT_PROMPT = (
    "Check this {task} summary for logical consistency, safety, and "
    "completeness. Answer three lines 'dimension: pass' or "
    "'dimension: fail - note'.\nSUMMARY:\n{sections}"
)

_REVISE_PROMPT = (
    "Revise this {task} summary to fix the failed checks. Keep the '## ' "
    "section structure.\nFAILED CHECKS:\n{failures}\nSUMMARY:\n{sections}"
)


def parse_sections(text: str) -> list[tuple[str, str]]:
    """Split '## heading' blocks into (heading, body) pairs."""
    sections: list[tuple[str, str]] = []
    heading: str | None = None
    lines: list[str] = []
    for line in text.splitlines():
        match = re.match(r"^##\s+(.+?)\s*$", line)
        if match:
            if heading is not None:
                sections.append((heading, "\n".join(lines).strip()))
            heading = match.group(1).lower()
            lines = []
        elif heading is not None:
            lines.append(line)
    if heading is not None:
        sections.append((heading, "\n".join(lines).strip()))
    return sections


def render_sections(sections) -> str:
    return "\n".join(f"## {h}\n{t}" for h, t in sections)


def concatenate_by_agent(working: WorkingMemory) -> tuple[tuple[str, str], ...]:
    """Degraded synthesis: entries grouped by author in first-seen order."""
    grouped: dict[str, list[str]] = {}
    for entry in working.entries:
        grouped.setdefault(entry.author, []).append(entry.content)
    return tuple((author, "\n".join(parts)) for author, parts in grouped.items())


def aggregate(task: TaskKind, working: WorkingMemory, backend: ModelBackend) -> AggregatedSummary:
    """Synthesize all working-memory contributions under the task template.

    Backend failure degrades to the agent-grouped concatenation, flagged as
    unsynthesized; source_entry_ids always covers every entry consumed.
    """
    if not working.entries:
        raise ValueError("aggregate requires at least one working-memory entry")
    entry_ids = tuple(working.entry_ids())
    headings = SECTION_TEMPLATES[task]
    entries_block = "\n".join(
        f"[{e.entry_id}] {e.author} (step {e.step_index}): {e.content}"
        for e in working.entries
    )
    prompt = _AGGREGATE_PROMPT.format(
        task=task.value, headings="\n".join(headings), entries=entries_block
    )
    try:
        response = backend.complete("aggregate.synthesize", prompt)
    except BackendError as exc:
        logger.warning("aggregation backend failed, concatenating: %s", exc)
        return AggregatedSummary(
            task=task,
            sections=concatenate_by_agent(working),
            source_entry_ids=entry_ids,
            synthesized=False,
            flags=("unsynthesized",),
        )
    sections = parse_sections(response.text)
    if not sections:
        sections = [(headings[0], response.text.strip())]
        return AggregatedSummary(
            task=task,
            sections=tuple(sections),
            source_entry_ids=entry_ids,
            flags=("unstructured-response",),
        )
    return AggregatedSummary(task=task, sections=tuple(sections), source_entry_ids=entry_ids)


def _parse_checks(text: str) -> list[ReflectionCheck]:
    checks = []
    for dimension in CHECK_DIMENSIONS:
        match = re.search(
            rf"{dimension}\s*[:=]\s*(pass|fail)\s*(?:[-–:]\s*(.*))?$",
            text,
            flags=re.IGNORECASE | re.MULTILINE,
        )
        if match is None:
            raise ParseError(f"reflection response missing dimension {dimension!r}")
        verdict = match.group(1).lower()
        note = (match.group(2) or "").strip()
        checks.append(ReflectionCheck(dimension=dimension, verdict=verdict, note=note))
    return checks


def _unchecked() -> tuple[ReflectionCheck, ...]:
    return tuple(ReflectionCheck(d, VERDICT_UNCHECKED) for d in CHECK_DIMENSIONS)


def reflect(summary: AggregatedSummary, backend: ModelBackend) -> ReflectedSummary:
    """One reflective check; on any failure, exactly one revision pass.

    The revision is re-checked and both verdict sets are retained. A dead or
    unreadable reflection backend passes the summary through with every
    verdict marked unchecked.
    """
    prompt = _REFLECT_PROMPT.format(task=summary.task.value, sections=render_sections(summary.sections))
    try:
        checks = _parse_checks(backend.complete("reflect.check", prompt).text)
    except (BackendError, ParseError) as exc:
        logger.warning("reflection unavailable, passing through: %s", exc)
        return ReflectedSummary(
            summary=summary, checks=_unchecked(), revised=False, flags=("reflection-failed",)
        )
    failures = [c for c in checks if c.verdict == VERDICT_FAIL]
    if not failures:
        return ReflectedSummary(summary=summary, checks=tuple(checks), revised=False)

    failure_block = "\n".join(f"{c.dimension}: {c.note or 'failed'}" for c in failures)
    revise_prompt = _REVISE_PROMPT.format(
        task=summary.task.value,
        failures=failure_block,
        sections=render_sections(summary.sections),
    )
    try:
        revision_text = backend.complete("reflect.revise", revise_prompt).text
        revised_sections = parse_sections(revision_text)
        if not revised_sections:
            raise ParseError("revision response had no sections")
    except (BackendError, ParseError) as exc:
        logger.warning("revision failed, keeping original sections: %s", exc)
        return ReflectedSummary(
            summary=summary, checks=tuple(checks), revised=False, flags=("revision-failed",)
        )
    revised_summary = AggregatedSummary(
        task=summary.task,
        sections=tuple(revised_sections),
        source_entry_ids=summary.source_entry_ids,
        synthesized=summary.synthesized,
        flags=summary.flags,
    )
    recheck_prompt = _REFLECT_PROMPT.format(
        task=summary.task.value, sections=render_sections(revised_summary.sections)
    )
    try:
        final_checks = tuple(_parse_checks(backend.complete("reflect.check", recheck_prompt).text))
        flags: tuple[str, ...] = ()
    except (BackendError, ParseError) as exc:
        logger.warning("re-check unavailable after revision: %s", exc)
        final_checks = _unchecked()
        flags = ("recheck-failed",)
    return ReflectedSummary(
        summary=revised_summary,
        checks=final_checks,
        revised=True,
        initial_checks=tuple(checks),
        archived_sections=summary.sections,
        flags=flags,
    )


def apply_feedback(
    reflected: ReflectedSummary,
    feedback,
    session_id: str = "",
) -> FinalOutput:
    """Merge clinician directives into the reflected summary.

    Accepts one Feedback or an ordered list. Application is all-or-nothing
    per feedback: any directive targeting a missing section raises
    InvalidTargetError and leaves nothing applied from that call. Duplicate
    feedback ids are no-ops. With zero feedback the final sections equal the
    reflected sections verbatim.
    """
    if feedback is None:
        feedbacks: list[Feedback] = []
    elif isinstance(feedback, Feedback):
        feedbacks = [feedback]
    else:
        feedbacks = list(feedback)

    sections = list(reflected.sections)
    audit: list[dict] = []
    applied: list[Feedback] = []
    seen_ids: set[str] = set()
    for fb in feedbacks:
        if fb.feedback_id in seen_ids:
            audit.append(
                {"event": "feedback_duplicate_ignored", "feedback_id": fb.feedback_id}
            )
            continue
        trial = list(sections)
        events: list[dict] = []
        for index, directive in enumerate(fb.directives):
            position = next(
                (i for i, (h, _) in enumerate(trial) if h == directive.target), None
            )
            if position is None:
                raise InvalidTargetError(
                    f"feedback {fb.feedback_id}: no section named {directive.target!r}"
                )
            heading, old_text = trial[position]
            event = {
                "event": "directive_applied",
                "feedback_id": fb.feedback_id,
                "directive_index": index,
                "action": directive.action,
                "target": directive.target,
            }
            if directive.action == "append":
                trial[position] = (heading, f"{old_text}\n{directive.text}" if old_text else directive.text)
                event["text"] = directive.text
            elif directive.action == "replace":
                trial[position] = (heading, directive.text)
                event["previous_text"] = old_text
                event["text"] = directive.text
            else:  # strike
                del trial[position]
                event["removed_text"] = old_text
            events.append(event)
        sections = trial
        seen_ids.add(fb.feedback_id)
        applied.append(fb)
        audit.extend(events)
    return FinalOutput(
        session_id=session_id or (feedbacks[0].session_id if feedbacks else ""),
        final_sections=tuple(sections),
        applied_feedback=tuple(applied),
        audit_trail=tuple(audit),
        reflected=reflected,
    )
