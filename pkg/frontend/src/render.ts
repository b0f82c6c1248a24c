// Pure HTML renderers. Every value shown comes from an API document passed
// in; nothing is computed client-side beyond layout, and nothing is ever
// fabricated when data is missing or stale.

import type { SectionDiff } from './diff.js';
import type {
  AgentOutputDoc,
  MemoryEntryDoc,
  ReflectedDoc,
  SessionView,
  TraceDoc,
} from './types.js';

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;')
    .replace(/'/g, '&#39;');
}

export function renderPlanTree(trace: TraceDoc | null): string {
  if (!trace) {
    return '<section class="plan-tree"><p class="empty">no search trace (planner ablated or not run)</p></section>';
  }
  const rounds = trace.rounds
    .map((round) => {
      const nodes = round.candidates
        .map((node) => {
          const cls = node.kept ? 'kept' : 'pruned';
          const rubric = node.rubric
            ? ` title="task ${node.rubric.task_alignment}, safety ${node.rubric.safety_compliance}, logic ${node.rubric.logical_order}, operability ${node.rubric.operability}, conciseness ${node.rubric.conciseness}"`
            : '';
          return (
            `<li class="node ${cls}" data-node-id="${node.node_id}"${rubric}>` +
            `<span class="score">${node.score.toFixed(3)}</span> ` +
            `${escapeHtml(node.step_text)}</li>`
          );
        })
        .join('');
      return `<div class="round"><h4>depth ${round.depth}</h4><ul>${nodes}</ul></div>`;
    })
    .join('');
  const truncated = trace.truncated ? '<p class="warning">search truncated before max depth</p>' : '';
  return `<section class="plan-tree"><h3>plan search (beam ${trace.config.beam_width}, width ${trace.config.search_width})</h3>${rounds}${truncated}</section>`;
}

export function renderMemoryTimeline(entries: MemoryEntryDoc[]): string {
  const items = entries
    .map(
      (entry) =>
        `<li class="memory-entry" data-entry-id="${entry.entry_id}">` +
        `<span class="step">step ${entry.step_index}</span> ` +
        `<span class="author">${escapeHtml(entry.author)}</span> ` +
        `${escapeHtml(entry.content)}</li>`,
    )
    .join('');
  return `<section class="memory-timeline"><h3>working memory (${entries.length})</h3><ol>${items}</ol></section>`;
}

export function renderOutputs(outputs: AgentOutputDoc[], view: SessionView): string {
  const items = outputs
    .map((output) => {
      const record = output.cited_record_id
        ? `<a class="citation record" data-record-id="${escapeHtml(output.cited_record_id)}">${escapeHtml(output.cited_record_id)}</a>`
        : '<span class="no-citation">no record</span>';
      const cases = output.cited_case_ids
        .map((id) => `<a class="citation case" data-case-id="${escapeHtml(id)}">${escapeHtml(id)}</a>`)
        .join(' ');
      const evidence = output.evidence_ids
        .map((id) => {
          const known = view.evidence[id];
          const title = known ? ` title="${escapeHtml(known.snippet)}"` : '';
          return `<a class="citation evidence" data-evidence-id="${escapeHtml(id)}"${title}>${escapeHtml(id)}</a>`;
        })
        .join(' ');
      const flags = output.flags.length
        ? `<span class="flags">${escapeHtml(output.flags.join(', '))}</span>`
        : '';
      return (
        `<li class="agent-output" data-agent="${escapeHtml(output.agent)}">` +
        `<strong>${escapeHtml(output.agent)}</strong> (step ${output.step_index}): ` +
        `${escapeHtml(output.recommendation)} ` +
        `<span class="citations">${record} ${cases} ${evidence}</span>${flags}</li>`
      );
    })
    .join('');
  return `<section class="agent-outputs"><h3>agent outputs (${outputs.length})</h3><ul>${items}</ul></section>`;
}

export function renderLabRuns(view: SessionView): string {
  if (!view.lab_runs.length) {
    return '';
  }
  const runs = view.lab_runs
    .map((run) => {
      const rows = run.analyses
        .map((analysis) => {
          const evidence = analysis.evidence_ids
            .map((id) => {
              const known = view.evidence[id];
              const title = known ? ` title="${escapeHtml(known.snippet)}"` : '';
              return `<a class="citation evidence" data-evidence-id="${escapeHtml(id)}"${title}>${escapeHtml(id)}</a>`;
            })
            .join(' ');
          return (
            `<li class="lab-analysis" data-item="${escapeHtml(analysis.item)}">` +
            `<strong>${escapeHtml(analysis.item)}</strong> = ${escapeHtml(String(analysis.value))}: ` +
            `${escapeHtml(analysis.interpretation)} ` +
            `<span class="citations">${evidence}</span></li>`
          );
        })
        .join('');
      return (
        `<div class="lab-run" data-step="${run.step_index}">` +
        `<h4>step ${run.step_index}: ${run.selected.length} of ${run.abnormal.length} abnormal analyzed</h4>` +
        `<ul>${rows}</ul></div>`
      );
    })
    .join('');
  return `<section class="lab-runs"><h3>laboratory analyses</h3>${runs}</section>`;
}

export function renderSummary(reflected: ReflectedDoc | null): string {
  if (!reflected) {
    return '<section class="summary"><p class="empty">no reflected summary yet</p></section>';
  }
  const verdicts = reflected.checks
    .map(
      (check) =>
        `<span class="verdict ${check.verdict}" data-dimension="${check.dimension}">` +
        `${check.dimension}: ${check.verdict}${check.note ? ` (${escapeHtml(check.note)})` : ''}</span>`,
    )
    .join(' ');
  const sections = reflected.summary.sections
    .map(
      (section) =>
        `<div class="section" data-heading="${escapeHtml(section.heading)}">` +
        `<h4>${escapeHtml(section.heading)}</h4><p>${escapeHtml(section.text)}</p></div>`,
    )
    .join('');
  const revised = reflected.revised
    ? '<p class="revised-note">revised once after a failed check; original archived</p>'
    : '';
  return `<section class="summary"><h3>reflected summary</h3><div class="verdicts">${verdicts}</div>${sections}${revised}</section>`;
}

export function renderFeedbackPanel(view: SessionView): string {
  const enabled = view.phase === 'awaiting_review';
  const targets = (view.reflected?.summary.sections ?? [])
    .map((s) => `<option value="${escapeHtml(s.heading)}">${escapeHtml(s.heading)}</option>`)
    .join('');
  const disabledAttr = enabled ? '' : ' disabled';
  const note = enabled
    ? ''
    : `<p class="gating-note">feedback is only accepted while the session awaits review (phase: ${view.phase})</p>`;
  return (
    `<section class="feedback-panel${enabled ? '' : ' disabled'}">` +
    `<h3>clinician feedback</h3>${note}` +
    `<select class="target"${disabledAttr}>${targets}</select>` +
    `<select class="action"${disabledAttr}><option>append</option><option>replace</option><option>strike</option></select>` +
    `<textarea class="text"${disabledAttr}></textarea>` +
    `<button class="add-directive"${disabledAttr}>add</button>` +
    `<button class="submit-feedback" disabled>submit</button>` +
    `</section>`
  );
}

export function renderDiff(diff: SectionDiff[]): string {
  const rows = diff
    .map((entry) => {
      const before = entry.before === null ? '' : `<del>${escapeHtml(entry.before)}</del>`;
      const after = entry.after === null ? '' : `<ins>${escapeHtml(entry.after)}</ins>`;
      const body = entry.kind === 'unchanged' ? `<p>${escapeHtml(entry.after ?? '')}</p>` : `${before}${after}`;
      return (
        `<div class="diff-section ${entry.kind}" data-heading="${escapeHtml(entry.heading)}">` +
        `<h4>${escapeHtml(entry.heading)} <span class="kind">${entry.kind}</span></h4>${body}</div>`
      );
    })
    .join('');
  return `<section class="final-diff"><h3>final output vs reflected summary</h3>${rows}</section>`;
}

export interface RenderOptions {
  stale?: boolean;
}

// The whole session view. `stale` renders the connection-loss banner over
// the last known data rather than inventing anything fresher.
export function renderSession(view: SessionView, options: RenderOptions = {}): string {
  const banner = options.stale
    ? '<div class="stale-banner">connection lost: showing last known state</div>'
    : '';
  const failure = view.failure
    ? `<div class="failure">session failed: ${escapeHtml(view.failure)}</div>`
    : '';
  const header =
    `<header><h2>session ${escapeHtml(view.session_id)}</h2>` +
    `<span class="phase ${view.phase}">${view.phase}</span> ` +
    `<span class="patient">${escapeHtml(view.patient_id)}</span> ` +
    `<span class="task">${escapeHtml(view.task ?? '(unclassified)')}</span></header>`;
  return (
    `<div class="session-view" data-phase="${view.phase}">` +
    banner +
    header +
    failure +
    renderPlanTree(view.trace) +
    renderMemoryTimeline(view.working_memory.entries) +
    renderOutputs(view.outputs, view) +
    renderLabRuns(view) +
    renderSummary(view.reflected) +
    renderFeedbackPanel(view) +
    '</div>'
  );
}
