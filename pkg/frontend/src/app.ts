// Browser bootstrap: poll the session, render, and wire the feedback panel.
// State changes at human pace during review, so polling is plenty.

import { ApiError, HttpReviewApi, type ReviewApi } from './api.js';
import { sectionDiff } from './diff.js';
import { FeedbackComposer } from './feedback.js';
import { renderDiff, renderSession } from './render.js';
import type { SessionView } from './types.js';

const POLL_MS = 2000;

interface ConsoleState {
  view: SessionView | null;
  stale: boolean;
  composer: FeedbackComposer | null;
}

export function startConsole(
  root: HTMLElement,
  api: ReviewApi,
  sessionId: string,
): { stop: () => void } {
  const state: ConsoleState = { view: null, stale: false, composer: null };

  async function poll(): Promise<void> {
    try {
      const view = await api.getState(sessionId);
      state.stale = false;
      const phaseChanged = state.view?.phase !== view.phase;
      state.view = view;
      if (phaseChanged) {
        state.composer =
          view.phase === 'awaiting_review' && view.reflected
            ? new FeedbackComposer(view.reflected.summary.sections)
            : null;
      }
    } catch {
      // Never fabricate state: keep the last view, show the banner.
      state.stale = true;
    }
    draw();
  }

  function draw(): void {
    if (!state.view) {
      root.innerHTML = state.stale
        ? '<div class="stale-banner">connection lost</div>'
        : '<p>loading…</p>';
      return;
    }
    root.innerHTML = renderSession(state.view, { stale: state.stale });
    wireFeedback();
    wireCitations();
  }

  function wireCitations(): void {
    root.querySelectorAll<HTMLElement>('a.citation.record').forEach((link) => {
      link.addEventListener('click', async () => {
        const record = await api.getRecord(link.dataset.recordId ?? '');
        window.alert(`${record.record_id} (${record.date})\n\n${record.text}`);
      });
    });
    root.querySelectorAll<HTMLElement>('a.citation.case').forEach((link) => {
      link.addEventListener('click', async () => {
        const caseDoc = await api.getCase(link.dataset.caseId ?? '');
        window.alert(`${caseDoc.case_id}: ${caseDoc.summary}\n\n- ${caseDoc.steps.join('\n- ')}`);
      });
    });
    root.querySelectorAll<HTMLElement>('a.citation.evidence').forEach((link) => {
      link.addEventListener('click', () => {
        const evidence = state.view?.evidence[link.dataset.evidenceId ?? ''];
        if (evidence) window.alert(`${evidence.evidence_id}\n\n${evidence.snippet}\n\n${evidence.provenance}`);
      });
    });
  }

  function wireFeedback(): void {
    const panel = root.querySelector<HTMLElement>('.feedback-panel');
    if (!panel || !state.composer) return;
    const composer = state.composer;
    const addButton = panel.querySelector<HTMLButtonElement>('.add-directive');
    const submitButton = panel.querySelector<HTMLButtonElement>('.submit-feedback');
    const targetSelect = panel.querySelector<HTMLSelectElement>('.target');
    const actionSelect = panel.querySelector<HTMLSelectElement>('.action');
    const textArea = panel.querySelector<HTMLTextAreaElement>('.text');
    if (!addButton || !submitButton || !targetSelect || !actionSelect || !textArea) return;

    addButton.addEventListener('click', () => {
      try {
        composer.add({
          target: targetSelect.value,
          action: actionSelect.value as 'append' | 'replace' | 'strike',
          text: textArea.value,
        });
        textArea.value = '';
        // Strikes shrink the targetable set so removed sections cannot be hit.
        targetSelect.innerHTML = composer
          .availableTargets()
          .map((heading) => `<option>${heading}</option>`)
          .join('');
        submitButton.disabled = !composer.canSubmit();
      } catch (error) {
        window.alert(String(error));
      }
    });

    submitButton.addEventListener('click', async () => {
      try {
        const before = state.view?.reflected?.summary.sections ?? [];
        await api.submitFeedback(sessionId, composer.build());
        const final = await api.finalize(sessionId);
        const diffPanel = document.createElement('div');
        diffPanel.innerHTML = renderDiff(sectionDiff(before, final.final_sections));
        root.appendChild(diffPanel);
        await poll();
      } catch (error) {
        // Surface the service's 409/422 verbatim.
        if (error instanceof ApiError) window.alert(error.message);
        else throw error;
      }
    });
  }

  void poll();
  const timer = setInterval(() => void poll(), POLL_MS);
  return { stop: () => clearInterval(timer) };
}

export function main(): void {
  const params = new URLSearchParams(window.location.search);
  const sessionId = params.get('session') ?? '';
  const baseUrl = params.get('api') ?? 'http://127.0.0.1:8000';
  const root = document.getElementById('console-root');
  if (!root) throw new Error('missing #console-root element');
  if (!sessionId) {
    root.innerHTML = '<p>pass ?session=&lt;id&gt; (and optionally ?api=&lt;base URL&gt;)</p>';
    return;
  }
  startConsole(root, new HttpReviewApi(baseUrl), sessionId);
}
