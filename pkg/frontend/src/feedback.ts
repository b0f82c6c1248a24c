// Directive composition with client-side validation: a directive that the
// engine would reject (unknown target, empty edit text, text on a strike)
// cannot be constructed here at all.

import type { DirectiveDoc, FeedbackRequest, SectionDoc } from './types.js';

export type DirectiveDraft = {
  target: string;
  action: 'append' | 'replace' | 'strike';
  text?: string;
};

export function validateDirective(
  draft: DirectiveDraft,
  availableTargets: string[],
): string | null {
  if (!availableTargets.includes(draft.target)) {
    return `no section named "${draft.target}"`;
  }
  const text = (draft.text ?? '').trim();
  if (draft.action === 'strike') {
    if (text) return 'strike directives carry no text';
    return null;
  }
  if (draft.action === 'append' || draft.action === 'replace') {
    if (!text) return `${draft.action} requires non-empty text`;
    return null;
  }
  return `unknown action "${(draft as { action: string }).action}"`;
}

// Builds one feedback submission. Tracks which sections remain targetable
// as strikes accumulate, mirroring the engine's in-order application.
export class FeedbackComposer {
  private readonly directives: DirectiveDoc[] = [];
  private live: string[];

  constructor(sections: SectionDoc[]) {
    this.live = sections.map((s) => s.heading);
  }

  availableTargets(): string[] {
    return [...this.live];
  }

  add(draft: DirectiveDraft): void {
    const problem = validateDirective(draft, this.live);
    if (problem) throw new Error(problem);
    this.directives.push({
      target: draft.target,
      action: draft.action,
      text: draft.action === 'strike' ? '' : (draft.text ?? '').trim(),
    });
    if (draft.action === 'strike') {
      this.live = this.live.filter((heading) => heading !== draft.target);
    }
  }

  count(): number {
    return this.directives.length;
  }

  // An empty directive list needs no submission; the submit control stays
  // disabled until something is composed.
  canSubmit(): boolean {
    return this.directives.length > 0;
  }

  build(feedbackId?: string, authorRole = 'clinician'): FeedbackRequest {
    if (!this.canSubmit()) {
      throw new Error('nothing to submit: no directives composed');
    }
    const request: FeedbackRequest = {
      author_role: authorRole,
      directives: [...this.directives],
    };
    if (feedbackId) request.feedback_id = feedbackId;
    return request;
  }
}
