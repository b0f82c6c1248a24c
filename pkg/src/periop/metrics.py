"""Evaluation metrics as pure functions plus a corpus-level harness.

Set metrics use normalized exact string matching (lowercase, trim); rate
metrics with zero denominators raise and are excluded-and-counted by the
harness rather than treated as 0, which would bias means.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    DimensionMismatchError,
    EmptyReferenceError,
    WeightError,
    ZeroDenominatorError,
    ZeroVectorError,
)

DEFAULT_FEASIBILITY_WEIGHTS = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)

METRIC_NAMES = ("dc", "mar", "pfs", "gar", "ews", "far", "recall", "sim")


def _normalize_set(items) -> set[str]:
    return {str(x).strip().lower() for x in items}


def _coverage(detected, reference, what: str) -> float:
    ref = _normalize_set(reference)
    if not ref:
        raise EmptyReferenceError(f"{what}: reference set is empty")
    det = _normalize_set(detected)
    return len(det & ref) / len(ref)


def diagnostic_coverage(detected, reference) -> float:
    """|detected ∩ reference| / |reference| over normalized diagnosis strings."""
    return _coverage(detected, reference, "diagnostic_coverage")


def misdiagnosis_avoidance(avoided, potential) -> float:
    """|avoided ∩ potential| / |potential| over normalized strings."""
    return _coverage(avoided, potential, "misdiagnosis_avoidance")


def complication_recall(detected, reference) -> float:
    """|detected ∩ reference| / |reference| over normalized complication strings."""
    return _coverage(detected, reference, "complication_recall")


def plan_feasibility(
    personalization: float,
    rationality: float,
    safety: float,
    weights: tuple[float, float, float] = DEFAULT_FEASIBILITY_WEIGHTS,
) -> float:
    """Weighted sum of the three feasibility dimensions (default 1/3 each)."""
    if abs(sum(weights) - 1.0) > 1e-9:
        raise WeightError(f"feasibility weights must sum to 1, got {sum(weights)!r}")
    return (
        weights[0] * personalization + weights[1] * rationality + weights[2] * safety
    )


def guideline_adherence(aligned_steps: int, total_steps: int) -> float:
    """Fraction of plan steps aligned with guidelines."""
    if total_steps < 1:
        raise ZeroDenominatorError("guideline_adherence: total_steps must be >= 1")
    if not 0 <= aligned_steps <= total_steps:
        raise ValueError("aligned_steps must be between 0 and total_steps")
    return aligned_steps / total_steps


def early_warning_sensitivity(tp: int, fn: int) -> float:
    """TP / (TP + FN)."""
    if tp + fn < 1:
        raise ZeroDenominatorError("early_warning_sensitivity: TP + FN is zero")
    return tp / (tp + fn)


def false_alarm_rate(fp: int, tp: int) -> float:
    """FP / (TP + FP)."""
    if tp + fp < 1:
        raise ZeroDenominatorError("false_alarm_rate: TP + FP is zero")
    return fp / (tp + fp)


def rehab_similarity(a, b) -> float:
    """Cosine similarity between guidance and reference embeddings."""
    a = tuple(float(x) for x in a)
    b = tuple(float(x) for x in b)
    if len(a) != len(b):
        raise DimensionMismatchError(f"dimensions differ: {len(a)} vs {len(b)}")
    norm_a = math.sqrt(sum(x * x for x in a))
    norm_b = math.sqrt(sum(x * x for x in b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVectorError("cosine of a zero vector is undefined")
    return sum(x * y for x, y in zip(a, b)) / (norm_a * norm_b)


@dataclass
class EvalRecord:
    """One session's predictions and fixture ground truth.

    Only the fields relevant to the session's task need be present; the
    harness computes whichever metrics have inputs.
    """

    session_id: str
    task: str = ""
    detected_diagnoses: list[str] | None = None
    reference_diagnoses: list[str] | None = None
    avoided_misdiagnoses: list[str] | None = None
    potential_misdiagnoses: list[str] | None = None
    feasibility: tuple[float, float, float] | None = None
    aligned_steps: int | None = None
    total_steps: int | None = None
    warning_tp: int | None = None
    warning_fn: int | None = None
    warning_fp: int | None = None
    detected_complications: list[str] | None = None
    reference_complications: list[str] | None = None
    guidance_embedding: list[float] | None = None
    reference_embedding: list[float] | None = None

    @classmethod
    def from_doc(cls, doc: dict) -> "EvalRecord":
        data = dict(doc)
        if data.get("feasibility") is not None:
            data["feasibility"] = tuple(data["feasibility"])
        return cls(**data)


@dataclass
class CorpusReport:
    """Per-session metric rows plus per-metric means and undefined counts."""

    rows: list[dict] = field(default_factory=list)
    means: dict = field(default_factory=dict)
    undefined_counts: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {
            "rows": self.rows,
            "means": self.means,
            "undefined_counts": self.undefined_counts,
        }

    def to_table(self) -> str:
        """Plot-ready TSV: one row per session, one trailing summary row."""
        header = ["session_id", "task", *METRIC_NAMES]
        lines = ["\t".join(header)]
        for row in self.rows:
            cells = [row["session_id"], row.get("task", "")]
            for name in METRIC_NAMES:
                value = row["metrics"].get(name)
                cells.append("" if value is None else f"{value:.6f}")
            lines.append("\t".join(cells))
        summary = ["MEAN", ""]
        for name in METRIC_NAMES:
            value = self.means.get(name)
            summary.append("" if value is None else f"{value:.6f}")
        lines.append("\t".join(summary))
        return "\n".join(lines) + "\n"


def _session_metrics(record: EvalRecord, undefined: dict) -> dict:
    metrics: dict = {name: None for name in METRIC_NAMES}

    def undefined_bump(name: str) -> None:
        undefined[name] = undefined.get(name, 0) + 1

    if record.detected_diagnoses is not None and record.reference_diagnoses is not None:
        try:
            metrics["dc"] = diagnostic_coverage(
                record.detected_diagnoses, record.reference_diagnoses
            )
        except EmptyReferenceError:
            undefined_bump("dc")
    if record.avoided_misdiagnoses is not None and record.potential_misdiagnoses is not None:
        try:
            metrics["mar"] = misdiagnosis_avoidance(
                record.avoided_misdiagnoses, record.potential_misdiagnoses
            )
        except EmptyReferenceError:
            undefined_bump("mar")
    if record.feasibility is not None:
        metrics["pfs"] = plan_feasibility(*record.feasibility)
    if record.aligned_steps is not None and record.total_steps is not None:
        try:
            metrics["gar"] = guideline_adherence(record.aligned_steps, record.total_steps)
        except ZeroDenominatorError:
            undefined_bump("gar")
    if record.warning_tp is not None and record.warning_fn is not None:
        try:
            metrics["ews"] = early_warning_sensitivity(record.warning_tp, record.warning_fn)
        except ZeroDenominatorError:
            undefined_bump("ews")
    if record.warning_fp is not None and record.warning_tp is not None:
        try:
            metrics["far"] = false_alarm_rate(record.warning_fp, record.warning_tp)
        except ZeroDenominatorError:
            undefined_bump("far")
    if (
        record.detected_complications is not None
        and record.reference_complications is not None
    ):
        try:
            metrics["recall"] = complication_recall(
                record.detected_complications, record.reference_complications
            )
        except EmptyReferenceError:
            undefined_bump("recall")
    if record.guidance_embedding is not None and record.reference_embedding is not None:
        try:
            metrics["sim"] = rehab_similarity(
                record.guidance_embedding, record.reference_embedding
            )
        except (ZeroVectorError, DimensionMismatchError):
            undefined_bump("sim")
    return metrics


def evaluate_corpus(records: list[EvalRecord]) -> CorpusReport:
    """Compute every available metric per session plus per-metric means."""
    report = CorpusReport()
    for record in records:
        metrics = _session_metrics(record, report.undefined_counts)
        report.rows.append(
            {"session_id": record.session_id, "task": record.task, "metrics": metrics}
        )
    for name in METRIC_NAMES:
        values = [
            row["metrics"][name] for row in report.rows if row["metrics"][name] is not None
        ]
        report.means[name] = sum(values) / len(values) if values else None
    return report


def load_eval_records(directory) -> list[EvalRecord]:
    """Read every *.json eval record in a directory, sorted by filename."""
    records = []
    for path in sorted(Path(directory).glob("*.json")):
        with open(path, encoding="utf-8") as fh:
            records.append(EvalRecord.from_doc(json.load(fh)))
    return records


def write_report(report: CorpusReport, out_prefix) -> tuple[Path, Path]:
    """Emit the tabular file and the structured document side by side."""
    prefix = Path(out_prefix)
    tsv_path = prefix.with_suffix(".tsv")
    json_path = prefix.with_suffix(".json")
    tsv_path.write_text(report.to_table(), encoding="utf-8")
    json_path.write_text(
        json.dumps(report.to_doc(), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return tsv_path, json_path
