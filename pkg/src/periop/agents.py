"""Department-agent reasoning and the four-stage laboratory workflow.

A department agent composes query generation, best-record retrieval, and
exemplar-case retrieval, reasons over that context, and commits its
recommendation to working memory. The lab agent runs abnormality
identification, selective filtering, evidence retrieval, and synthesis, in
that order, committing one memory entry per analysis. Neither ever aborts a
session: retrieval absence and backend failures degrade to flagged stubs.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

from .domain import (
    Department,
    Evidence,
    EvidenceCache,
    LabItem,
    PatientProfile,
    PlanStep,
    TaskKind,
)
from .errors import BackendError, NoRecordsError, ToolError
from .gateway import TOOL_NAMES, Embedder, ModelBackend, ToolProvider, tool_query
from .memory import (
    DEFAULT_EXEMPLAR_THRESHOLD,
    DEFAULT_MAX_CASES,
    LongTermMemory,
    WorkingMemory,
    generate_query,
    retrieve_best_record,
    retrieve_exemplar_cases,
)

logger = logging.getLogger(__name__)

DEFAULT_K_MAX = 5
DEFAULT_MAX_EVIDENCE = 2
DEFAULT_MEMORY_WINDOW = 10
# Character budget for the memory-ablated mode that stuffs raw records
# into the prompt instead of retrieving.
DEFAULT_RECORD_DUMP_CHARS = 2000

LAB_AUTHOR = "laboratory"
GENERIC_AUTHOR = "generic"


@dataclass
class AgentOutput:
    """One agent's committed contribution for one plan step."""

    agent: str
    step_index: int
    recommendation: str
    query_text: str | None = None
    cited_record_id: str | None = None
    cited_case_ids: tuple[str, ...] = ()
    evidence_ids: tuple[str, ...] = ()
    flags: tuple[str, ...] = ()
    entry_id: str | None = None
    input_tokens: int = 0
    output_tokens: int = 0

    def __post_init__(self) -> None:
        if not self.recommendation.strip():
            raise ValueError("agent recommendation must be non-empty")

    def to_doc(self) -> dict:
        return {
            "agent": self.agent,
            "step_index": self.step_index,
            "recommendation": self.recommendation,
            "query_text": self.query_text,
            "cited_record_id": self.cited_record_id,
            "cited_case_ids": list(self.cited_case_ids),
            "evidence_ids": list(self.evidence_ids),
            "flags": list(self.flags),
            "entry_id": self.entry_id,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "AgentOutput":
        return cls(
            agent=doc["agent"],
            step_index=doc["step_index"],
            recommendation=doc["recommendation"],
            query_text=doc.get("query_text"),
            cited_record_id=doc.get("cited_record_id"),
            cited_case_ids=tuple(doc.get("cited_case_ids", [])),
            evidence_ids=tuple(doc.get("evidence_ids", [])),
            flags=tuple(doc.get("flags", [])),
            entry_id=doc.get("entry_id"),
            input_tokens=doc.get("input_tokens", 0),
            output_tokens=doc.get("output_tokens", 0),
        )


@dataclass
class LabAnalysis:
    """Structured synthesis for one selected abnormal lab item."""

    item: LabItem
    evidence: tuple[Evidence, ...]
    interpretation: str
    entry_id: str | None = None

    def __post_init__(self) -> None:
        if self.item.name.lower() not in self.interpretation.lower():
            raise ValueError(
                f"interpretation must reference the item name {self.item.name!r}"
            )

    def to_doc(self) -> dict:
        return {
            "item": self.item.name,
            "value": self.item.value,
            "evidence_ids": [e.evidence_id for e in self.evidence],
            "interpretation": self.interpretation,
            "entry_id": self.entry_id,
        }


_DEPARTMENT_PROMPT = (
    "You are the {dept} specialist on a perioperative team.\n"
    "PATIENT: {basic}\nTASK: {task}\nCURRENT STEP: {step}\n"
    "MOST RELEVANT RECORD: {record}\n"
    "SIMILAR CASES: {cases}\n"
    "RECENT TEAM NOTES:\n{recent}\n"
    "Give one concise, domain-focused recommendation."
)

_LAB_SELECT_PROMPT = (
    "Rank these abnormal lab items by clinical relevance to the patient and "
    "task; answer with the top {k} names, one per line.\n"
    "PATIENT: {basic}\nTASK: {task}\nABNORMAL ITEMS:\n{items}"
)

_LAB_ANALYZE_PROMPT = (
    "Interpret this abnormal lab result for the team.\n"
    "ITEM: {name} = {value} {unit} (reference {range})\n"
    "EVIDENCE:\n{evidence}\nPATIENT: {basic}\nTASK: {task}"
)


def _render_recent(working: WorkingMemory, window: int) -> str:
    recent = working.tail(window)
    if not recent:
        return "(none)"
    return "\n".join(f"[{e.author} @ step {e.step_index}] {e.content}" for e in recent)


def _record_dump(store: LongTermMemory, patient_id: str, char_budget: int) -> str:
    """Memory-ablated context: concatenate raw records, truncated to budget."""
    blob = "\n".join(
        f"{r.date.isoformat()}: {r.text}" for r in store.records_for(patient_id)
    )
    return blob[:char_budget] if blob else "(no records)"


def run_department_agent(
    dept: Department,
    patient: PatientProfile,
    task: TaskKind,
    step: PlanStep,
    store: LongTermMemory,
    working: WorkingMemory,
    backend: ModelBackend,
    embedder: Embedder,
    threshold: float = DEFAULT_EXEMPLAR_THRESHOLD,
    max_cases: int = DEFAULT_MAX_CASES,
    memory_window: int = DEFAULT_MEMORY_WINDOW,
    memory_enabled: bool = True,
    record_dump_chars: int = DEFAULT_RECORD_DUMP_CHARS,
    author: str | None = None,
    stage_tag: str = "agent.department",
) -> AgentOutput:
    """Query -> retrieve -> reason -> commit for one department at one step.

    Retrieval absence downgrades to reasoning without the record/cases
    (flagged); a dead backend yields a flagged stub so the pipeline continues.
    """
    agent_name = author if author is not None else dept.value
    flags: list[str] = []
    query = None
    record = None
    cases: list = []

    if memory_enabled:
        try:
            query = generate_query(patient, task, step, backend, embedder)
        except BackendError as exc:
            flags.append("query-failed")
            logger.warning("%s: query generation failed: %s", agent_name, exc)
        if query is not None:
            try:
                record = retrieve_best_record(query, store, patient.patient_id)
            except NoRecordsError:
                flags.append("no-history")
            cases = retrieve_exemplar_cases(query, store, threshold, max_cases)
        record_text = record.text if record is not None else "(none)"
    else:
        flags.append("memory-ablated")
        record_text = _record_dump(store, patient.patient_id, record_dump_chars)

    case_block = (
        "; ".join(f"{c.case_id}: {c.summary}" for c in cases) if cases else "(none)"
    )
    prompt = _DEPARTMENT_PROMPT.format(
        dept=agent_name,
        basic=patient.basic_info_text(),
        task=task.value,
        step=step.text,
        record=record_text,
        cases=case_block,
        recent=_render_recent(working, memory_window),
    )
    input_tokens = output_tokens = 0
    try:
        completion = backend.complete(stage_tag, prompt)
        recommendation = completion.text.strip() or "(empty recommendation)"
        input_tokens, output_tokens = completion.input_tokens, completion.output_tokens
    except BackendError as exc:
        flags.append("backend-failed")
        recommendation = f"{agent_name}: recommendation unavailable (backend failed)"
        logger.warning("%s: reasoning backend failed: %s", agent_name, exc)

    output = AgentOutput(
        agent=agent_name,
        step_index=step.index,
        recommendation=recommendation,
        query_text=query.text if query is not None else None,
        cited_record_id=record.record_id if record is not None else None,
        cited_case_ids=tuple(c.case_id for c in cases),
        flags=tuple(flags),
        input_tokens=input_tokens,
        output_tokens=output_tokens,
    )
    entry = working.new_entry(
        author=agent_name,
        step_index=step.index,
        content=recommendation,
        input_tokens=input_tokens,
        output_tokens=output_tokens,
    )
    output.entry_id = entry.entry_id
    return output


def identify_abnormal(labs: list[LabItem]) -> list[LabItem]:
    """Exactly the abnormal-flagged items, original order preserved."""
    return [item for item in labs if item.abnormal]


def select_lab_items(
    abnormal: list[LabItem],
    patient: PatientProfile,
    task: TaskKind,
    k_max: int,
    backend: ModelBackend,
    flags: list[str] | None = None,
) -> list[LabItem]:
    """Cap the abnormal list at k_max, ranking by backend when over budget.

    At or under budget the list passes through untouched with zero backend
    calls. Over budget, backend-ranked names are matched back to items;
    junk names are dropped and any shortfall fills in original order.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if len(abnormal) <= k_max:
        return list(abnormal)
    items_block = "\n".join(f"- {i.name}: {i.value} {i.unit}" for i in abnormal)
    prompt = _LAB_SELECT_PROMPT.format(
        k=k_max, basic=patient.basic_info_text(), task=task.value, items=items_block
    )
    try:
        answer = backend.complete("agent.lab.select", prompt).text
    except BackendError as exc:
        if flags is not None:
            flags.append("lab-select-fallback")
        logger.warning("lab ranking backend failed, keeping first %d: %s", k_max, exc)
        return list(abnormal[:k_max])

    by_name = {}
    for item in abnormal:
        by_name.setdefault(item.name.strip().lower(), item)
    selected: list[LabItem] = []
    for line in answer.splitlines():
        name = re.sub(r"^\s*(?:\d+[.)]\s*|[-*•]\s*)", "", line).strip().lower()
        item = by_name.get(name)
        if item is not None and item not in selected:
            selected.append(item)
        if len(selected) == k_max:
            break
    if len(selected) < k_max:
        for item in abnormal:
            if item not in selected:
                selected.append(item)
            if len(selected) == k_max:
                break
    return selected


def retrieve_evidence(
    item: LabItem,
    tools: ToolProvider,
    max_evidence: int = DEFAULT_MAX_EVIDENCE,
    cache: EvidenceCache | None = None,
    flags: list[str] | None = None,
) -> list[Evidence]:
    """Query each enabled tool with 'name value'; cap snippets per tool.

    Per-tool failures are logged and skipped; finding nothing at all is
    flagged but valid.
    """
    query = f"{item.name} {item.value}".strip()
    collected: list[Evidence] = []
    for tool in TOOL_NAMES:
        if tool not in tools.enabled:
            continue
        try:
            collected.extend(tool_query(tool, query, tools)[:max_evidence])
        except ToolError as exc:
            logger.warning("tool %s failed for %r: %s", tool, query, exc)
    if not collected and flags is not None:
        flags.append(f"no-evidence:{item.name.strip().lower()}")
    if cache is not None:
        for evidence in collected:
            cache.add(evidence)
    return collected


def run_lab_agent(
    patient: PatientProfile,
    task: TaskKind,
    labs: list[LabItem],
    tools: ToolProvider,
    backend: ModelBackend,
    working: WorkingMemory,
    k_max: int = DEFAULT_K_MAX,
    step: PlanStep | None = None,
    max_evidence: int = DEFAULT_MAX_EVIDENCE,
    cache: EvidenceCache | None = None,
    flags: list[str] | None = None,
) -> list[LabAnalysis]:
    """The four lab stages in order: identify, select, retrieve, synthesize.

    Appends one working-memory entry per analysis; an empty abnormal set
    short-circuits the whole pipeline with no writes.
    """
    step_index = step.index if step is not None else 0
    abnormal = identify_abnormal(labs)
    if not abnormal:
        return []
    selected = select_lab_items(abnormal, patient, task, k_max, backend, flags)
    analyses: list[LabAnalysis] = []
    for item in selected:
        evidence = retrieve_evidence(item, tools, max_evidence, cache, flags)
        evidence_block = (
            "\n".join(f"[{e.evidence_id}] {e.snippet}" for e in evidence) or "(none)"
        )
        range_text = (
            f"{item.reference_range[0]}-{item.reference_range[1]}"
            if item.reference_range
            else "n/a"
        )
        prompt = _LAB_ANALYZE_PROMPT.format(
            name=item.name,
            value=item.value,
            unit=item.unit,
            range=range_text,
            evidence=evidence_block,
            basic=patient.basic_info_text(),
            task=task.value,
        )
        input_tokens = output_tokens = 0
        try:
            completion = backend.complete("agent.lab.analyze", prompt)
            text = completion.text.strip()
            input_tokens, output_tokens = completion.input_tokens, completion.output_tokens
        except BackendError as exc:
            if flags is not None:
                flags.append("lab-analyze-failed")
            text = "analysis unavailable (backend failed)"
            logger.warning("lab synthesis failed for %s: %s", item.name, exc)
        if item.name.lower() not in text.lower():
            text = f"{item.name}: {text}"
        analysis = LabAnalysis(item=item, evidence=tuple(evidence), interpretation=text)
        entry = working.new_entry(
            author=LAB_AUTHOR,
            step_index=step_index,
            content=text,
            input_tokens=input_tokens,
            output_tokens=output_tokens,
        )
        analysis.entry_id = entry.entry_id
        analyses.append(analysis)
    return analyses
