"""Dual-memory store: session working memory and the persistent long-term store.

Working memory is an append-only log of agent outputs within one session.
The long-term store is immutable after load and holds patient profiles,
dated clinical records, lab tables, and exemplar cases with precomputed
embeddings. Retrieval is a linear scan by cosine similarity — that is the
contract at desk scale, and it is what the brute-force oracles in the test
suite check against.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

from .clock import Clock, LogicalClock
from .domain import (
    ClinicalRecord,
    ExemplarCase,
    LabItem,
    MemoryEntry,
    PatientProfile,
    PlanStep,
    TaskKind,
)
from .errors import FormatError, NoRecordsError, SessionClosedError
from .gateway import Embedder, ModelBackend

logger = logging.getLogger(__name__)

DEFAULT_EXEMPLAR_THRESHOLD = 0.60
DEFAULT_MAX_CASES = 3


def cosine_similarity(a, b) -> float:
    """Plain cosine over two equal-length vectors; callers guarantee non-zero."""
    dot = 0.0
    norm_a = 0.0
    norm_b = 0.0
    for x, y in zip(a, b):
        dot += x * y
        norm_a += x * x
        norm_b += y * y
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return dot / math.sqrt(norm_a * norm_b)


@dataclass(frozen=True)
class Query:
    """A retrieval query generated from (basic info, task, current step)."""

    text: str
    embedding: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("query text must be non-empty")


class WorkingMemory:
    """Append-only session log; closed (immutable) once the session finalizes."""

    def __init__(self, session_id: str, clock: Clock | None = None) -> None:
        self.session_id = session_id
        self.clock = clock if clock is not None else LogicalClock()
        self.entries: list[MemoryEntry] = []
        self.closed = False
        self._last_step_by_author: dict[str, int] = {}

    def new_entry(
        self,
        author: str,
        step_index: int,
        content: str,
        input_tokens: int = 0,
        output_tokens: int = 0,
    ) -> MemoryEntry:
        """Create, timestamp, id, and append one entry in a single call."""
        entry = MemoryEntry(
            entry_id=f"e{len(self.entries) + 1:04d}",
            author=author,
            step_index=step_index,
            content=content,
            timestamp=self.clock.now(),
            input_tokens=input_tokens,
            output_tokens=output_tokens,
        )
        self.append(entry)
        return entry

    def append(self, entry: MemoryEntry) -> "WorkingMemory":
        if self.closed:
            raise SessionClosedError(
                f"session {self.session_id} is finalized; working memory is closed"
            )
        last = self._last_step_by_author.get(entry.author)
        if last is not None and entry.step_index < last:
            raise ValueError(
                f"author {entry.author!r} step index {entry.step_index} "
                f"regressed below {last}"
            )
        self.entries.append(entry)
        self._last_step_by_author[entry.author] = entry.step_index
        return self

    def close(self) -> None:
        self.closed = True

    def tail(self, n: int) -> list[MemoryEntry]:
        return self.entries[-n:] if n > 0 else []

    def entry_ids(self) -> list[str]:
        return [e.entry_id for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def to_doc(self) -> dict:
        return {
            "session_id": self.session_id,
            "closed": self.closed,
            "entries": [
                {
                    "entry_id": e.entry_id,
                    "author": e.author,
                    "step_index": e.step_index,
                    "content": e.content,
                    "timestamp": e.timestamp,
                    "input_tokens": e.input_tokens,
                    "output_tokens": e.output_tokens,
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "WorkingMemory":
        memory = cls(doc["session_id"])
        for raw in doc.get("entries", []):
            memory.append(MemoryEntry(**raw))
        memory.closed = doc.get("closed", False)
        return memory


def append_working(memory: WorkingMemory, entry: MemoryEntry) -> WorkingMemory:
    """Append one entry; prior entries are never mutated or removed."""
    return memory.append(entry)


@dataclass
class LongTermMemory:
    """Immutable-after-load persistent store (profiles, records, cases, labs)."""

    patients: dict[str, PatientProfile] = field(default_factory=dict)
    records: list[ClinicalRecord] = field(default_factory=list)
    cases: list[ExemplarCase] = field(default_factory=list)
    labs: dict[str, list[LabItem]] = field(default_factory=dict)
    diagnostics: list[str] = field(default_factory=list, compare=False)

    def records_for(self, patient_id: str) -> list[ClinicalRecord]:
        return [r for r in self.records if r.patient_id == patient_id]

    def labs_for(self, patient_id: str) -> list[LabItem]:
        return list(self.labs.get(patient_id, []))

    def get_patient(self, patient_id: str) -> PatientProfile | None:
        return self.patients.get(patient_id)

    def case_ids(self) -> set[str]:
        return {c.case_id for c in self.cases}

    def record_ids(self) -> set[str]:
        return {r.record_id for r in self.records}


QUERY_PROMPT = (
    "Write one focused retrieval query for the patient's history.\n"
    "PATIENT: {basic}\nTASK: {task}\nCURRENT STEP: {step}\n"
    "Answer with the query text only."
)


def generate_query(
    patient: PatientProfile,
    task: TaskKind,
    step: PlanStep,
    backend: ModelBackend,
    embedder: Embedder,
) -> Query:
    """Produce a retrieval query from (basic info, task, current step).

    Empty backend responses get one reprompt; a second empty response falls
    back to the concatenated context text so retrieval can still proceed.
    """
    basic = patient.basic_info_text()
    prompt = QUERY_PROMPT.format(basic=basic, task=task.value, step=step.text)
    text = backend.complete("memory.query", prompt).text.strip()
    if not text:
        text = backend.complete("memory.query", prompt).text.strip()
    if not text:
        text = f"{basic} | {task.value} | {step.text}"
        logger.warning("query generator returned empty text twice; using fallback")
    return Query(text=text, embedding=embedder.embed(text))


def retrieve_best_record(
    query: Query, store: LongTermMemory, patient_id: str
) -> ClinicalRecord:
    """Argmax cosine similarity over the patient's own records.

    Ties break to the earliest date, then the lexicographically smallest
    record id, so retrieval is deterministic for identical embeddings.
    """
    records = store.records_for(patient_id)
    if not records:
        raise NoRecordsError(f"patient {patient_id!r} has no clinical records")
    scored = [
        (-cosine_similarity(query.embedding, r.embedding), r.date, r.record_id, r)
        for r in records
    ]
    scored.sort(key=lambda item: item[:3])
    return scored[0][3]


def retrieve_exemplar_cases(
    query: Query,
    store: LongTermMemory,
    threshold: float,
    max_cases: int = DEFAULT_MAX_CASES,
) -> list[ExemplarCase]:
    """All cases at or above the similarity threshold, best first, capped.

    The cap bounds prompt length; raising the threshold can only shrink the
    result set.
    """
    if not -1.0 <= threshold <= 1.0:
        raise ValueError(f"similarity threshold must be in [-1, 1], got {threshold}")
    matches = [
        (sim, case)
        for case in store.cases
        if (sim := cosine_similarity(query.embedding, case.embedding)) >= threshold
    ]
    matches.sort(key=lambda item: (-item[0], item[1].case_id))
    return [case for _, case in matches[:max_cases]]


# ---------------------------------------------------------------------------
# Corpus ingestion and persistence

_CORPUS_FILES = ("patients.json", "records.json", "labs.json", "cases.json")


def _read_json_list(path: Path) -> list:
    if not path.exists():
        return []
    raw = path.read_text(encoding="utf-8")
    if not raw.strip():
        return []
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path.name}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, list):
        raise FormatError(f"{path.name}: expected a top-level list")
    return doc


def _require(raw: dict, key: str, where: str) -> object:
    if key not in raw:
        raise FormatError(f"{where} missing required field {key!r}")
    return raw[key]


def _parse_date(value: object, where: str) -> date:
    try:
        return date.fromisoformat(str(value))
    except ValueError as exc:
        raise FormatError(f"{where}: date {value!r} is not ISO-8601") from exc


def _lab_item_from_row(row: dict, where: str) -> LabItem:
    name = str(_require(row, "name", where)).strip()
    if not name:
        raise FormatError(f"{where}: empty lab name")
    value = _require(row, "value", where)
    if not isinstance(value, (int, float, str)):
        raise FormatError(f"{where}: value must be numeric or text")
    low, high = row.get("range_low"), row.get("range_high")
    if (low is None) != (high is None):
        raise FormatError(f"{where}: range_low/range_high must appear together")
    reference_range = None
    if low is not None:
        try:
            reference_range = (float(low), float(high))
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{where}: non-numeric reference range") from exc
    abnormal = row.get("abnormal")
    if abnormal is None:
        if reference_range is not None and isinstance(value, (int, float)):
            abnormal = value < reference_range[0] or value > reference_range[1]
        else:
            raise FormatError(f"{where}: abnormal flag absent and not derivable")
    if not isinstance(abnormal, bool):
        raise FormatError(f"{where}: abnormal must be a boolean")
    try:
        return LabItem(
            name=name,
            value=value,
            unit=str(row.get("unit", "")),
            reference_range=reference_range,
            abnormal=abnormal,
        )
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from exc


def _embedding_for(raw: dict, text: str, embedder: Embedder, where: str) -> tuple[float, ...]:
    if "embedding" in raw:
        vector = tuple(float(x) for x in raw["embedding"])
        if not vector:
            raise FormatError(f"{where}: empty embedding")
        return vector
    return embedder.embed(text)


def load_long_term(corpus_path, embedder: Embedder) -> LongTermMemory:
    """Ingest a corpus directory (or a persisted store file) into memory.

    A directory holds patients.json / records.json / labs.json / cases.json;
    missing or empty files yield empty stores. Embeddings are precomputed at
    ingestion unless the document already carries them (persisted stores do,
    which makes persist -> load the identity).
    """
    path = Path(corpus_path)
    if path.is_file():
        raw = path.read_text(encoding="utf-8")
        if not raw.strip():
            return LongTermMemory()
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path.name}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        return _store_from_parts(
            doc.get("patients", []),
            doc.get("records", []),
            doc.get("labs", []),
            doc.get("cases", []),
            embedder,
        )
    if not path.is_dir():
        raise FormatError(f"corpus path {path} is neither a file nor a directory")
    patients, records, labs, cases = (
        _read_json_list(path / name) for name in _CORPUS_FILES
    )
    return _store_from_parts(patients, records, labs, cases, embedder)


def _store_from_parts(
    patients_raw: list, records_raw: list, labs_raw: list, cases_raw: list, embedder: Embedder
) -> LongTermMemory:
    store = LongTermMemory()
    for i, raw in enumerate(patients_raw):
        where = f"patients.json: entry {i}"
        pid = str(_require(raw, "patient_id", where))
        if pid in store.patients:
            raise FormatError(f"{where}: duplicate patient_id {pid!r}")
        basic = _require(raw, "basic_info", where)
        if not isinstance(basic, dict):
            raise FormatError(f"{where}: basic_info must be a mapping")
        store.patients[pid] = PatientProfile(patient_id=pid, basic_info=dict(basic))

    seen_records = set()
    for i, raw in enumerate(records_raw):
        rid = str(raw.get("record_id", f"<entry {i}>"))
        where = f"records.json: record {rid}"
        rid = str(_require(raw, "record_id", where))
        if rid in seen_records:
            raise FormatError(f"{where}: duplicate record_id")
        seen_records.add(rid)
        text = str(_require(raw, "text", where))
        if not text.strip():
            raise FormatError(f"{where}: empty record text")
        store.records.append(
            ClinicalRecord(
                record_id=rid,
                patient_id=str(_require(raw, "patient_id", where)),
                date=_parse_date(_require(raw, "date", where), where),
                text=text,
                embedding=_embedding_for(raw, text, embedder, where),
            )
        )

    for i, raw in enumerate(labs_raw):
        where = f"labs.json: entry {i}"
        pid = str(_require(raw, "patient_id", where))
        rows = _require(raw, "items", where)
        if not isinstance(rows, list):
            raise FormatError(f"{where}: items must be a list")
        kept = store.labs.setdefault(pid, [])
        for j, row in enumerate(rows):
            row_where = f"labs.json: patient {pid} row {j}"
            try:
                kept.append(_lab_item_from_row(row, row_where))
            except FormatError as exc:
                # Partial data is the clinical norm: drop the row, keep the file.
                store.diagnostics.append(str(exc))
                logger.warning("rejected lab row: %s", exc)

    seen_cases = set()
    for i, raw in enumerate(cases_raw):
        cid = str(raw.get("case_id", f"<entry {i}>"))
        where = f"cases.json: case {cid}"
        cid = str(_require(raw, "case_id", where))
        if cid in seen_cases:
            raise FormatError(f"{where}: duplicate case_id")
        seen_cases.add(cid)
        summary = str(_require(raw, "summary", where))
        steps = _require(raw, "steps", where)
        if not isinstance(steps, list) or not steps:
            raise FormatError(f"{where}: steps must be a non-empty list")
        store.cases.append(
            ExemplarCase(
                case_id=cid,
                summary=summary,
                workflow_steps=tuple(str(s) for s in steps),
                embedding=_embedding_for(raw, summary, embedder, where),
            )
        )
    return store


def store_to_doc(store: LongTermMemory) -> dict:
    """Normalized single-document form of the store, embeddings included."""
    return {
        "patients": [
            {"patient_id": p.patient_id, "basic_info": p.basic_info}
            for p in store.patients.values()
        ],
        "records": [
            {
                "record_id": r.record_id,
                "patient_id": r.patient_id,
                "date": r.date.isoformat(),
                "text": r.text,
                "embedding": list(r.embedding),
            }
            for r in store.records
        ],
        "labs": [
            {
                "patient_id": pid,
                "items": [
                    {
                        "name": item.name,
                        "value": item.value,
                        "unit": item.unit,
                        "range_low": item.reference_range[0] if item.reference_range else None,
                        "range_high": item.reference_range[1] if item.reference_range else None,
                        "abnormal": item.abnormal,
                    }
                    for item in items
                ],
            }
            for pid, items in store.labs.items()
        ],
        "cases": [
            {
                "case_id": c.case_id,
                "summary": c.summary,
                "steps": list(c.workflow_steps),
                "embedding": list(c.embedding),
            }
            for c in store.cases
        ],
    }


def persist_long_term(store: LongTermMemory, path) -> Path:
    """Write the normalized store document; load_long_term inverts it exactly."""
    target = Path(path)
    target.write_text(
        json.dumps(store_to_doc(store), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return target
