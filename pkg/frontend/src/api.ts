// Typed client for the /v1 session API. All console state comes through
// this interface; tests substitute a fixture-backed implementation.

import type {
  CaseDoc,
  FeedbackAck,
  FeedbackRequest,
  FinalOutputDoc,
  RecordDoc,
  SessionView,
  TraceDoc,
} from './types.js';

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = 'ApiError';
  }
}

export interface ReviewApi {
  getState(sessionId: string): Promise<SessionView>;
  getTrace(sessionId: string): Promise<TraceDoc | null>;
  submitFeedback(sessionId: string, feedback: FeedbackRequest): Promise<FeedbackAck>;
  finalize(sessionId: string): Promise<FinalOutputDoc>;
  getRecord(recordId: string): Promise<RecordDoc>;
  getCase(caseId: string): Promise<CaseDoc>;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class HttpReviewApi implements ReviewApi {
  private readonly base: string;

  constructor(
    baseUrl: string,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
    private readonly authToken?: string,
  ) {
    this.base = baseUrl.replace(/\/+$/, '');
  }

  private headers(json: boolean): Record<string, string> {
    const headers: Record<string, string> = {};
    if (json) headers['Content-Type'] = 'application/json';
    if (this.authToken) headers['Authorization'] = `Bearer ${this.authToken}`;
    return headers;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.base}${path}`, init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { detail?: unknown };
        if (body.detail !== undefined) detail = JSON.stringify(body.detail);
      } catch {
        // keep statusText
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  getState(sessionId: string): Promise<SessionView> {
    return this.request(`/v1/sessions/${sessionId}`, { headers: this.headers(false) });
  }

  async getTrace(sessionId: string): Promise<TraceDoc | null> {
    const body = await this.request<{ trace: TraceDoc | null }>(
      `/v1/sessions/${sessionId}/trace`,
      { headers: this.headers(false) },
    );
    return body.trace;
  }

  submitFeedback(sessionId: string, feedback: FeedbackRequest): Promise<FeedbackAck> {
    return this.request(`/v1/sessions/${sessionId}/feedback`, {
      method: 'POST',
      headers: this.headers(true),
      body: JSON.stringify(feedback),
    });
  }

  finalize(sessionId: string): Promise<FinalOutputDoc> {
    return this.request(`/v1/sessions/${sessionId}/finalize`, {
      method: 'POST',
      headers: this.headers(false),
    });
  }

  getRecord(recordId: string): Promise<RecordDoc> {
    return this.request(`/v1/records/${recordId}`, { headers: this.headers(false) });
  }

  getCase(caseId: string): Promise<CaseDoc> {
    return this.request(`/v1/cases/${caseId}`, { headers: this.headers(false) });
  }
}
