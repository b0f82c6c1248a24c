// Wire types mirroring the /v1 session documents. The console renders these
// verbatim: it never derives scores or verdicts client-side.

export type Phase =
  | 'created'
  | 'planning'
  | 'executing'
  | 'aggregated'
  | 'reflected'
  | 'awaiting_review'
  | 'finalized'
  | 'failed';

export interface SectionDoc {
  heading: string;
  text: string;
}

export interface RubricDoc {
  task_alignment: number;
  safety_compliance: number;
  logical_order: number;
  operability: number;
  conciseness: number;
  total: number;
  parse_failed: boolean;
}

export interface TraceCandidate {
  node_id: number;
  parent_id: number | null;
  origin_rank: number;
  depth: number;
  step_text: string;
  plan_steps: string[];
  score: number;
  rubric: RubricDoc | null;
  kept: boolean;
}

export interface TraceRound {
  depth: number;
  candidates: TraceCandidate[];
  beam_ids: number[];
}

export interface TraceDoc {
  task: string;
  config: {
    max_steps: number;
    search_width: number;
    beam_width: number;
    weights: number[];
  };
  rounds: TraceRound[];
  final_node_id: number | null;
  final_plan: string[];
  final_score: number;
  truncated: boolean;
}

export interface MemoryEntryDoc {
  entry_id: string;
  author: string;
  step_index: number;
  content: string;
  timestamp: string;
  input_tokens: number;
  output_tokens: number;
}

export interface AgentOutputDoc {
  agent: string;
  step_index: number;
  recommendation: string;
  query_text: string | null;
  cited_record_id: string | null;
  cited_case_ids: string[];
  evidence_ids: string[];
  flags: string[];
  entry_id: string | null;
}

export interface CheckDoc {
  dimension: string;
  verdict: 'pass' | 'fail' | 'unchecked';
  note: string;
}

export interface AggregatedDoc {
  task: string;
  sections: SectionDoc[];
  source_entry_ids: string[];
  synthesized: boolean;
  flags: string[];
}

export interface ReflectedDoc {
  summary: AggregatedDoc;
  checks: CheckDoc[];
  revised: boolean;
  initial_checks: CheckDoc[] | null;
  archived_sections: SectionDoc[] | null;
  flags: string[];
}

export interface DirectiveDoc {
  target: string;
  action: 'append' | 'replace' | 'strike';
  text: string;
}

export interface FeedbackDoc {
  feedback_id: string;
  session_id: string;
  author_role: string;
  directives: DirectiveDoc[];
  submitted_at: string;
}

export interface AuditEventDoc {
  event: string;
  [key: string]: unknown;
}

export interface FinalOutputDoc {
  session_id: string;
  final_sections: SectionDoc[];
  applied_feedback: FeedbackDoc[];
  audit_trail: AuditEventDoc[];
  reflected: ReflectedDoc;
}

export interface EvidenceDoc {
  evidence_id: string;
  source: string;
  query: string;
  snippet: string;
  provenance: string;
}

export interface LabRunDoc {
  step_index: number;
  abnormal: string[];
  selected: string[];
  analyses: {
    item: string;
    value: number | string;
    evidence_ids: string[];
    interpretation: string;
    entry_id: string | null;
  }[];
}

export interface LedgerDoc {
  rows: { stage: string; input_tokens: number; output_tokens: number; wall_time: number }[];
  totals: { input_tokens: number; output_tokens: number; wall_time: number };
}

// The read projection of one session, straight from GET /v1/sessions/{id}.
export interface SessionView {
  session_id: string;
  patient_id: string;
  task_text: string;
  phase: Phase;
  task: string | null;
  plan: string[] | null;
  trace: TraceDoc | null;
  working_memory: { session_id: string; closed: boolean; entries: MemoryEntryDoc[] };
  outputs: AgentOutputDoc[];
  lab_runs: LabRunDoc[];
  department_selections: string[][];
  aggregated: AggregatedDoc | null;
  reflected: ReflectedDoc | null;
  feedback: FeedbackDoc[];
  final: FinalOutputDoc | null;
  ledger: LedgerDoc;
  flags: string[];
  audit: AuditEventDoc[];
  evidence: Record<string, EvidenceDoc>;
  failure: string | null;
  ablation: Record<string, boolean>;
}

export interface FeedbackRequest {
  feedback_id?: string;
  author_role?: string;
  directives: DirectiveDoc[];
  submitted_at?: string;
}

export interface FeedbackAck {
  session_id: string;
  feedback_id: string;
  accepted: boolean;
  duplicate: boolean;
}

export interface RecordDoc {
  record_id: string;
  patient_id: string;
  date: string;
  text: string;
}

export interface CaseDoc {
  case_id: string;
  summary: string;
  steps: string[];
}
