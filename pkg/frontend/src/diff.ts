// Section-level diff between the reflected summary and the final output,
// so a reviewer sees exactly what their directives changed.

import type { SectionDoc } from './types.js';

export type DiffKind = 'unchanged' | 'changed' | 'removed' | 'added';

export interface SectionDiff {
  heading: string;
  kind: DiffKind;
  before: string | null;
  after: string | null;
}

export function sectionDiff(before: SectionDoc[], after: SectionDoc[]): SectionDiff[] {
  const afterByHeading = new Map(after.map((s) => [s.heading, s.text]));
  const beforeHeadings = new Set(before.map((s) => s.heading));
  const diff: SectionDiff[] = [];
  for (const section of before) {
    const afterText = afterByHeading.get(section.heading);
    if (afterText === undefined) {
      diff.push({ heading: section.heading, kind: 'removed', before: section.text, after: null });
    } else if (afterText === section.text) {
      diff.push({ heading: section.heading, kind: 'unchanged', before: section.text, after: afterText });
    } else {
      diff.push({ heading: section.heading, kind: 'changed', before: section.text, after: afterText });
    }
  }
  for (const section of after) {
    if (!beforeHeadings.has(section.heading)) {
      diff.push({ heading: section.heading, kind: 'added', before: null, after: section.text });
    }
  }
  return diff;
}
