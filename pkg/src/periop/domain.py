"""Shared domain records: tasks, departments, patients, plans, labs, evidence.

These are the leaf types every subsystem exchanges. Behaviour lives in the
subsystem modules (planner, memory, agents, aggregation); this module only
carries data and the validation its invariants require.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import date
from enum import Enum


class TaskKind(str, Enum):
    """The five perioperative task categories."""

    ANALYSIS = "analysis"
    SURGERY = "surgery"
    SAFETY = "safety"
    RISK = "risk"
    REHAB = "rehab"

    @classmethod
    def from_text(cls, text: str) -> "TaskKind":
        return cls(text.strip().lower())


class Department(str, Enum):
    """The fixed 18-department registry.

    Declaration order is the canonical agent-registry order used whenever
    outputs must be committed deterministically.
    """

    RESPIRATORY_MEDICINE = "respiratory_medicine"
    CARDIOVASCULAR_MEDICINE = "cardiovascular_medicine"
    NEUROLOGY = "neurology"
    GENERAL_SURGERY = "general_surgery"
    CARDIOTHORACIC_SURGERY = "cardiothoracic_surgery"
    NEUROSURGERY = "neurosurgery"
    ORTHOPEDICS = "orthopedics"
    UROLOGY = "urology"
    OB_GYN = "ob_gyn"
    PEDIATRICS = "pediatrics"
    ENT = "ent"
    EMERGENCY = "emergency"
    ICU = "icu"
    PATHOLOGY = "pathology"
    ANESTHESIOLOGY = "anesthesiology"
    ONCOLOGY = "oncology"
    REHABILITATION = "rehabilitation"
    PREVENTIVE_HEALTHCARE = "preventive_healthcare"


REGISTRY_ORDER: list[Department] = list(Department)

# Accepted spellings -> canonical department. Keys are normalized
# (lowercased, non-alphanumerics collapsed to single spaces).
_DEPARTMENT_ALIASES: dict[str, Department] = {
    "respiratory": Department.RESPIRATORY_MEDICINE,
    "respiratory medicine": Department.RESPIRATORY_MEDICINE,
    "cardiovascular": Department.CARDIOVASCULAR_MEDICINE,
    "cardiovascular medicine": Department.CARDIOVASCULAR_MEDICINE,
    "cardiology": Department.CARDIOVASCULAR_MEDICINE,
    "neurology": Department.NEUROLOGY,
    "general surgery": Department.GENERAL_SURGERY,
    "cardiothoracic": Department.CARDIOTHORACIC_SURGERY,
    "cardiothoracic surgery": Department.CARDIOTHORACIC_SURGERY,
    "neurosurgery": Department.NEUROSURGERY,
    "orthopedics": Department.ORTHOPEDICS,
    "orthopaedics": Department.ORTHOPEDICS,
    "urology": Department.UROLOGY,
    "ob gyn": Department.OB_GYN,
    "obgyn": Department.OB_GYN,
    "obstetrics gynecology": Department.OB_GYN,
    "obstetrics and gynecology": Department.OB_GYN,
    "pediatrics": Department.PEDIATRICS,
    "ent": Department.ENT,
    "otolaryngology": Department.ENT,
    "emergency": Department.EMERGENCY,
    "emergency medicine": Department.EMERGENCY,
    "icu": Department.ICU,
    "intensive care": Department.ICU,
    "pathology": Department.PATHOLOGY,
    "anesthesiology": Department.ANESTHESIOLOGY,
    "anesthesia": Department.ANESTHESIOLOGY,
    "oncology": Department.ONCOLOGY,
    "rehabilitation": Department.REHABILITATION,
    "rehab": Department.REHABILITATION,
    "preventive healthcare": Department.PREVENTIVE_HEALTHCARE,
    "preventive": Department.PREVENTIVE_HEALTHCARE,
}


def canonical_department(name: str) -> Department | None:
    """Map a free-text department name onto the registry, or None if unknown."""
    key = re.sub(r"[^a-z0-9]+", " ", name.strip().lower()).strip()
    if not key:
        return None
    if key in _DEPARTMENT_ALIASES:
        return _DEPARTMENT_ALIASES[key]
    underscored = key.replace(" ", "_")
    try:
        return Department(underscored)
    except ValueError:
        return None


def registry_sorted(departments) -> list[Department]:
    """Order a collection of departments by the canonical registry order."""
    return sorted(departments, key=REGISTRY_ORDER.index)


# Canonical rendering order for patient basic-info fields.
_BASIC_INFO_FIELDS = (
    "age",
    "sex",
    "admission_reason",
    "history_summary",
    "region",
    "occupation",
    "blood_type",
)


@dataclass(frozen=True)
class PatientProfile:
    """Ingested patient identity plus the structured basic-info block."""

    patient_id: str
    basic_info: dict

    def basic_info_text(self) -> str:
        """Render basic info as one deterministic 'key: value' line."""
        parts = []
        for key in _BASIC_INFO_FIELDS:
            if key in self.basic_info:
                parts.append(f"{key}: {self.basic_info[key]}")
        for key in sorted(self.basic_info):
            if key not in _BASIC_INFO_FIELDS:
                parts.append(f"{key}: {self.basic_info[key]}")
        return " | ".join(parts)


@dataclass(frozen=True)
class PlanStep:
    """One surgical step of a plan; index is the 0-based position."""

    text: str
    index: int

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("plan step text must be non-empty")
        if self.index < 0:
            raise ValueError("plan step index must be non-negative")


@dataclass(frozen=True)
class Plan:
    """An ordered sequence of surgical steps for one task."""

    steps: tuple[PlanStep, ...]
    task: TaskKind

    def __post_init__(self) -> None:
        for position, step in enumerate(self.steps):
            if step.index != position:
                raise ValueError(
                    f"step index {step.index} does not match position {position}"
                )

    @classmethod
    def empty(cls, task: TaskKind) -> "Plan":
        return cls(steps=(), task=task)

    @classmethod
    def from_texts(cls, texts, task: TaskKind) -> "Plan":
        steps = tuple(PlanStep(text=t, index=i) for i, t in enumerate(texts))
        return cls(steps=steps, task=task)

    def extend(self, text: str) -> "Plan":
        """Return a new plan with one appended step (prefix property holds)."""
        return Plan(
            steps=self.steps + (PlanStep(text=text, index=len(self.steps)),),
            task=self.task,
        )

    def step_texts(self) -> list[str]:
        return [s.text for s in self.steps]

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class ClinicalRecord:
    """One dated longitudinal record for a patient."""

    record_id: str
    patient_id: str
    date: date
    text: str
    embedding: tuple[float, ...]


@dataclass(frozen=True)
class ExemplarCase:
    """A prior case with a standardized workflow, retrievable cross-patient."""

    case_id: str
    summary: str
    workflow_steps: tuple[str, ...]
    embedding: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.workflow_steps:
            raise ValueError(f"exemplar case {self.case_id} has no workflow steps")


@dataclass(frozen=True)
class LabItem:
    """A single laboratory result row.

    When a numeric value and a reference range are both present the abnormal
    flag must agree with the range arithmetic (strictly outside [low, high]).
    """

    name: str
    value: float | str
    unit: str
    reference_range: tuple[float, float] | None
    abnormal: bool

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise ValueError("lab item name must be non-empty")
        if self.reference_range is not None and isinstance(self.value, (int, float)):
            low, high = self.reference_range
            expected = self.value < low or self.value > high
            if self.abnormal != expected:
                raise ValueError(
                    f"lab item {self.name!r}: abnormal flag {self.abnormal} "
                    f"contradicts value {self.value} vs range [{low}, {high}]"
                )


@dataclass(frozen=True)
class Evidence:
    """A retrieved literature/guideline snippet with provenance."""

    evidence_id: str
    source: str
    query: str
    snippet: str
    provenance: str

    def __post_init__(self) -> None:
        if not self.snippet.strip():
            raise ValueError("evidence snippet must be non-empty")
        if not self.provenance.strip():
            raise ValueError("evidence provenance locator must be present")


@dataclass(frozen=True)
class MemoryEntry:
    """One append-only working-memory entry."""

    entry_id: str
    author: str
    step_index: int
    content: str
    timestamp: str
    input_tokens: int = 0
    output_tokens: int = 0

    def __post_init__(self) -> None:
        if not self.content.strip():
            raise ValueError("memory entry content must be non-empty")
        if self.step_index < 0:
            raise ValueError("memory entry step index must be non-negative")


@dataclass
class EvidenceCache:
    """Session-scoped registry of retrieved evidence, keyed by evidence id."""

    items: dict[str, Evidence] = field(default_factory=dict)

    def add(self, evidence: Evidence) -> None:
        self.items[evidence.evidence_id] = evidence

    def __contains__(self, evidence_id: str) -> bool:
        return evidence_id in self.items
