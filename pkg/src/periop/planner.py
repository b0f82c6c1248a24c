"""Stepwise plan generation: rubric scoring, beam search, agent allocation.

The planner expands partial plans one step at a time, scores every candidate
with a five-criterion weighted rubric, keeps the top-b per depth, and returns
the best full-depth plan together with a complete search trace (every
candidate, score, and pruning decision — nothing is discarded, so the search
is auditable and replayable).
"""

from __future__ import annotations

import itertools
import logging
import re
from dataclasses import dataclass, field

from .domain import (
    Department,
    Plan,
    PatientProfile,
    TaskKind,
    canonical_department,
)
from .errors import BackendError, ClassificationError, EmptySearchError, ParseError
from .gateway import ModelBackend

logger = logging.getLogger(__name__)

RUBRIC_CRITERIA = (
    "task_alignment",
    "safety_compliance",
    "logical_order",
    "operability",
    "conciseness",
)

# Criterion weights; the per-criterion band maxima coincide with these, so a
# sub-score in [0,1] times its weight reproduces the banded presentation.
DEFAULT_WEIGHTS = (0.30, 0.25, 0.20, 0.15, 0.10)

DEFAULT_MAX_STEPS = 3
DEFAULT_SEARCH_WIDTH = 5
DEFAULT_BEAM_WIDTH = 2

# Fallback priority when a task description is ambiguous: prefer the more
# safety-critical interpretation.
_KIND_PRIORITY = (
    TaskKind.SAFETY,
    TaskKind.RISK,
    TaskKind.SURGERY,
    TaskKind.REHAB,
    TaskKind.ANALYSIS,
)

_KIND_KEYWORDS: dict[TaskKind, frozenset[str]] = {
    TaskKind.SAFETY: frozenset(
        {"safety", "monitor", "monitoring", "intraoperative", "alert", "alerts", "warning", "warnings"}
    ),
    TaskKind.RISK: frozenset({"risk", "risks", "complication", "complications", "adverse"}),
    TaskKind.SURGERY: frozenset({"surgery", "surgical", "operation", "operative", "plan", "planning"}),
    TaskKind.REHAB: frozenset({"rehab", "rehabilitation", "recovery", "exercise", "exercises"}),
    TaskKind.ANALYSIS: frozenset(
        {"analysis", "analyze", "diagnosis", "diagnoses", "diagnostic", "case"}
    ),
}


@dataclass(frozen=True)
class PlannerConfig:
    """Search configuration: depth, per-parent fan-out, beam width, weights."""

    max_steps: int = DEFAULT_MAX_STEPS
    search_width: int = DEFAULT_SEARCH_WIDTH
    beam_width: int = DEFAULT_BEAM_WIDTH
    weights: tuple[float, ...] = DEFAULT_WEIGHTS

    def __post_init__(self) -> None:
        if self.max_steps < 1 or self.search_width < 1 or self.beam_width < 1:
            raise ValueError("max_steps, search_width and beam_width must all be >= 1")
        if len(self.weights) != len(RUBRIC_CRITERIA):
            raise ValueError(f"weights must have {len(RUBRIC_CRITERIA)} entries")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {sum(self.weights)!r}")


@dataclass(frozen=True)
class RubricScore:
    """Five clamped sub-scores and their weighted total."""

    task_alignment: float
    safety_compliance: float
    logical_order: float
    operability: float
    conciseness: float
    total: float
    parse_failed: bool = False

    def sub_scores(self) -> tuple[float, ...]:
        return (
            self.task_alignment,
            self.safety_compliance,
            self.logical_order,
            self.operability,
            self.conciseness,
        )

    def as_dict(self) -> dict:
        doc = {name: value for name, value in zip(RUBRIC_CRITERIA, self.sub_scores())}
        doc["total"] = self.total
        doc["parse_failed"] = self.parse_failed
        return doc


def _clamp(value: float) -> float:
    return max(0.0, min(1.0, value))


def combine_rubric(
    sub_scores, weights: tuple[float, ...] = DEFAULT_WEIGHTS, parse_failed: bool = False
) -> RubricScore:
    """Clamp sub-scores into [0,1] and compute the weighted total ourselves.

    The total is never delegated to backend arithmetic.
    """
    clamped = tuple(_clamp(float(s)) for s in sub_scores)
    if len(clamped) != len(weights):
        raise ValueError("sub-score/weight length mismatch")
    total = sum(w * s for w, s in zip(weights, clamped))
    return RubricScore(*clamped, total=total, parse_failed=parse_failed)


@dataclass(frozen=True)
class PlanNode:
    """One search-tree node: a (partial) plan plus beam bookkeeping."""

    plan: Plan
    score: float
    depth: int
    parent_id: int | None
    origin_rank: int
    node_id: int
    rubric: RubricScore | None = None

    def __post_init__(self) -> None:
        if self.depth != len(self.plan):
            raise ValueError(f"depth {self.depth} != plan length {len(self.plan)}")


@dataclass
class SearchRound:
    """All candidates generated at one depth plus the surviving beam."""

    depth: int
    candidates: list[PlanNode]
    beam_ids: list[int]


@dataclass
class SearchTrace:
    """Full record of one beam search: every candidate, score, and pruning."""

    task: TaskKind
    config: PlannerConfig
    rounds: list[SearchRound] = field(default_factory=list)
    final_node_id: int | None = None
    final_plan: list[str] = field(default_factory=list)
    final_score: float = 0.0
    truncated: bool = False

    def node_count(self) -> int:
        return sum(len(r.candidates) for r in self.rounds)

    def to_doc(self) -> dict:
        return {
            "task": self.task.value,
            "config": {
                "max_steps": self.config.max_steps,
                "search_width": self.config.search_width,
                "beam_width": self.config.beam_width,
                "weights": list(self.config.weights),
            },
            "rounds": [
                {
                    "depth": r.depth,
                    "candidates": [
                        {
                            "node_id": n.node_id,
                            "parent_id": n.parent_id,
                            "origin_rank": n.origin_rank,
                            "depth": n.depth,
                            "step_text": n.plan.steps[-1].text if n.plan.steps else "",
                            "plan_steps": n.plan.step_texts(),
                            "score": n.score,
                            "rubric": n.rubric.as_dict() if n.rubric else None,
                            "kept": n.node_id in r.beam_ids,
                        }
                        for n in r.candidates
                    ],
                    "beam_ids": list(r.beam_ids),
                }
                for r in self.rounds
            ],
            "final_node_id": self.final_node_id,
            "final_plan": list(self.final_plan),
            "final_score": self.final_score,
            "truncated": self.truncated,
        }


def render_plan(plan: Plan) -> str:
    """Canonical numbered rendering used in every planner prompt."""
    if not plan.steps:
        return "(no steps yet)"
    return "\n".join(f"{s.index + 1}. {s.text}" for s in plan.steps)


_EVALUATE_PROMPT = (
    "Score this candidate surgical plan on five criteria, each in [0,1].\n"
    "PATIENT: {basic}\nTASK: {task}\nPLAN UNDER REVIEW:\n{plan}\n"
    "Answer with exactly five lines, 'criterion: value':\n"
    "task_alignment, safety_compliance, logical_order, operability, conciseness."
)

_EXPAND_PROMPT = (
    "Suggest up to {k} distinct next surgical steps, one per line.\n"
    "PATIENT: {basic}\nTASK: {task}\nCURRENT PLAN:\n{plan}"
)

_CLASSIFY_PROMPT = (
    "Classify this clinical request into exactly one task kind from "
    "[analysis, surgery, safety, risk, rehab]. Answer with the kind only.\n"
    "REQUEST: {description}"
)

_SELECT_DEPARTMENTS_PROMPT = (
    "Select the clinical departments that should weigh in on this case, "
    "comma-separated, from this registry:\n{registry}\nPATIENT: {basic}"
)


def _parse_rubric(text: str) -> dict[str, float]:
    scores: dict[str, float] = {}
    for name in RUBRIC_CRITERIA:
        match = re.search(
            rf"{name}\s*[:=]\s*([-+]?[0-9]*\.?[0-9]+)", text, flags=re.IGNORECASE
        )
        if match is None:
            raise ParseError(f"rubric response missing criterion {name!r}")
        scores[name] = float(match.group(1))
    return scores


def evaluate_plan(
    plan: Plan,
    patient: PatientProfile,
    task: TaskKind,
    backend: ModelBackend,
    weights: tuple[float, ...] = DEFAULT_WEIGHTS,
) -> RubricScore:
    """Score one plan with the weighted rubric.

    The evaluator backend supplies the five sub-scores in a structured block;
    an unreadable block earns one reprompt, after which the plan is scored 0
    and flagged rather than aborting the session.
    """
    if not plan.steps:
        raise ValueError("evaluate_plan requires a plan with at least one step")
    prompt = _EVALUATE_PROMPT.format(
        basic=patient.basic_info_text(), task=task.value, plan=render_plan(plan)
    )
    for attempt in range(2):
        response = backend.complete("planner.evaluate", prompt)
        try:
            parsed = _parse_rubric(response.text)
        except ParseError:
            if attempt == 0:
                continue
            logger.warning("rubric response unreadable after reprompt; scoring 0")
            return combine_rubric([0.0] * 5, weights, parse_failed=True)
        return combine_rubric([parsed[name] for name in RUBRIC_CRITERIA], weights)
    raise AssertionError("unreachable")


def parse_step_suggestions(text: str) -> list[str]:
    """Extract step texts from a one-per-line (optionally numbered) response."""
    suggestions = []
    for line in text.splitlines():
        cleaned = re.sub(r"^\s*(?:\d+[.)]\s*|[-*•]\s*)", "", line).strip()
        if cleaned:
            suggestions.append(cleaned)
    return suggestions


def expand_candidates(
    beam: list[PlanNode],
    patient: PatientProfile,
    task: TaskKind,
    config: PlannerConfig,
    backend: ModelBackend,
    id_counter=None,
) -> list[PlanNode]:
    """One-step extensions of every beam node, scored and rank-stamped.

    Each parent contributes at most search_width children; a parent whose
    generation yields nothing is skipped with a warning, not a failure.
    """
    if not beam:
        raise ValueError("expand_candidates requires a non-empty beam")
    depths = {node.depth for node in beam}
    if len(depths) != 1:
        raise ValueError(f"beam nodes must share one depth, got {sorted(depths)}")
    ids = id_counter if id_counter is not None else itertools.count(max(n.node_id for n in beam) + 1)
    candidates: list[PlanNode] = []
    for parent in beam:
        prompt = _EXPAND_PROMPT.format(
            k=config.search_width,
            basic=patient.basic_info_text(),
            task=task.value,
            plan=render_plan(parent.plan),
        )
        suggestions = parse_step_suggestions(backend.complete("planner.expand", prompt).text)
        if not suggestions:
            logger.warning("parent node %d yielded no step suggestions; skipped", parent.node_id)
            continue
        for rank, step_text in enumerate(suggestions[: config.search_width]):
            child_plan = parent.plan.extend(step_text)
            rubric = evaluate_plan(child_plan, patient, task, backend, config.weights)
            candidates.append(
                PlanNode(
                    plan=child_plan,
                    score=rubric.total,
                    depth=parent.depth + 1,
                    parent_id=parent.node_id,
                    origin_rank=rank,
                    node_id=next(ids),
                    rubric=rubric,
                )
            )
    return candidates


def _selection_key(node: PlanNode) -> tuple:
    # Stable Top-b: score descending, then generation order, then parent id.
    parent = node.parent_id if node.parent_id is not None else -1
    return (-node.score, node.origin_rank, parent)


def beam_search_plan(
    patient: PatientProfile,
    task: TaskKind,
    config: PlannerConfig,
    backend: ModelBackend,
) -> tuple[Plan, SearchTrace]:
    """Run max_steps rounds of expand -> score -> Top-b from an empty root.

    Returns the plan of the highest-scoring final-beam node plus the full
    trace. If expansion dies after at least one beam exists, the best plan
    found so far is returned with the trace marked truncated; dying before
    any beam exists raises EmptySearchError.
    """
    root = PlanNode(
        plan=Plan.empty(task), score=0.0, depth=0, parent_id=None, origin_rank=0, node_id=0
    )
    ids = itertools.count(1)
    beam = [root]
    trace = SearchTrace(task=task, config=config)
    for depth in range(1, config.max_steps + 1):
        try:
            candidates = expand_candidates(beam, patient, task, config, backend, id_counter=ids)
        except BackendError as exc:
            if not trace.rounds:
                raise EmptySearchError(f"expansion failed at depth {depth}: {exc}") from exc
            logger.warning("expansion failed at depth %d; truncating search: %s", depth, exc)
            trace.truncated = True
            break
        if not candidates:
            if not trace.rounds:
                raise EmptySearchError(f"no candidates generated at depth {depth}")
            logger.warning("no candidates at depth %d; truncating search", depth)
            trace.truncated = True
            break
        ranked = sorted(candidates, key=_selection_key)
        beam = ranked[: config.beam_width]
        trace.rounds.append(
            SearchRound(
                depth=depth,
                candidates=candidates,
                beam_ids=[n.node_id for n in beam],
            )
        )
    best = min(beam, key=_selection_key)
    trace.final_node_id = best.node_id
    trace.final_plan = best.plan.step_texts()
    trace.final_score = best.score
    return best.plan, trace


def select_task_agent(task_description: str, backend: ModelBackend) -> TaskKind:
    """Route a free-text request to one of the five task kinds.

    A literal kind name in the description short-circuits the backend; an
    off-vocabulary backend answer earns one reprompt, then keyword matching
    (safety-first priority) decides.
    """
    if not task_description.strip():
        raise ValueError("task description must be non-empty")
    words = set(re.findall(r"[a-z]+", task_description.lower()))
    literal_hits = [kind for kind in _KIND_PRIORITY if kind.value in words]
    if literal_hits:
        return literal_hits[0]

    prompt = _CLASSIFY_PROMPT.format(description=task_description)
    for _ in range(2):
        try:
            answer = backend.complete("planner.classify", prompt).text.strip().lower()
        except BackendError:
            break
        answer_words = set(re.findall(r"[a-z]+", answer))
        for kind in _KIND_PRIORITY:
            if answer == kind.value or kind.value in answer_words:
                return kind

    for kind in _KIND_PRIORITY:
        if words & _KIND_KEYWORDS[kind]:
            logger.warning("classifier fell back to keyword match: %s", kind.value)
            return kind
    raise ClassificationError(f"could not classify task description {task_description!r}")


def select_local_agents(patient: PatientProfile, backend: ModelBackend) -> set[Department]:
    """Pick the department subset for this patient; never fails fatally.

    Unknown names from the backend are dropped; an empty result (or backend
    failure) defaults to general surgery + anesthesiology, since every
    surgical case plausibly involves both.
    """
    registry = ", ".join(d.value for d in Department)
    prompt = _SELECT_DEPARTMENTS_PROMPT.format(registry=registry, basic=patient.basic_info_text())
    chosen: set[Department] = set()
    try:
        answer = backend.complete("planner.select_departments", prompt).text
        for raw in re.split(r"[,;\n]+", answer):
            dept = canonical_department(raw)
            if dept is not None:
                chosen.add(dept)
            elif raw.strip():
                logger.warning("dropping unknown department name %r", raw.strip())
    except BackendError as exc:
        logger.warning("department selection backend failed: %s", exc)
    if not chosen:
        logger.warning("no valid departments selected; using default pair")
        return {Department.GENERAL_SURGERY, Department.ANESTHESIOLOGY}
    return chosen
