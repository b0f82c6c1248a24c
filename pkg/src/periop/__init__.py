"""Perioperative decision-support orchestration engine.

Subsystems: beam-searched stepwise planning with a weighted rubric, a
dual-memory store (append-only working memory plus a persistent retrieval
store), department and laboratory agents, reflective task-level aggregation
with clinician feedback merge, deterministic scripted model backends, an
evaluation-metric harness, and a session service with CLI.
"""

from .aggregation import (
    AggregatedSummary,
    Feedback,
    FeedbackDirective,
    FinalOutput,
    ReflectedSummary,
    aggregate,
    apply_feedback,
    reflect,
)
from .agents import (
    AgentOutput,
    LabAnalysis,
    identify_abnormal,
    retrieve_evidence,
    run_department_agent,
    run_lab_agent,
    select_lab_items,
)
from .config import EngineConfig, load_config
from .domain import (
    Department,
    Evidence,
    ExemplarCase,
    ClinicalRecord,
    LabItem,
    MemoryEntry,
    PatientProfile,
    Plan,
    PlanStep,
    TaskKind,
)
from .gateway import (
    Completion,
    HashEmbedder,
    HttpBackend,
    ModelBackend,
    ScriptedBackend,
    ScriptEntry,
    TokenLedger,
)
from .memory import (
    LongTermMemory,
    Query,
    WorkingMemory,
    append_working,
    generate_query,
    load_long_term,
    persist_long_term,
    retrieve_best_record,
    retrieve_exemplar_cases,
)
from .metrics import (
    EvalRecord,
    complication_recall,
    diagnostic_coverage,
    early_warning_sensitivity,
    evaluate_corpus,
    false_alarm_rate,
    guideline_adherence,
    misdiagnosis_avoidance,
    plan_feasibility,
    rehab_similarity,
)
from .pipeline import execute_session, finalize_session, run_pipeline, submit_feedback
from .planner import (
    PlannerConfig,
    PlanNode,
    RubricScore,
    SearchTrace,
    beam_search_plan,
    evaluate_plan,
    expand_candidates,
    select_local_agents,
    select_task_agent,
)
from .session import Phase, SessionState, SessionStore

__version__ = "0.1.0"
