/** Typed client for the annotation service. Uses only the five documented endpoints. */

import type { Choice, NextResponse, Position, Progress, SkillView, SubmitAck } from './types';

export class ApiError extends Error {
  constructor(
    message: string,
    public readonly status: number,
    public readonly detail?: unknown,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly token: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: {
        Authorization: `Bearer ${this.token}`,
        ...(body !== undefined ? { 'Content-Type': 'application/json' } : {}),
      },
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    if (!response.ok) {
      let detail: unknown;
      try {
        detail = (await response.json()).detail;
      } catch {
        detail = await response.text().catch(() => undefined);
      }
      throw new ApiError(`${method} ${path} failed: ${response.status}`, response.status, detail);
    }
    return (await response.json()) as T;
  }

  createSession(annotatorId: string, round: 'round1' | 'round2'): Promise<Progress> {
    return this.request<Progress>('POST', '/sessions', { annotator_id: annotatorId, round });
  }

  next(sessionId: string): Promise<NextResponse> {
    return this.request<NextResponse>('GET', `/sessions/${sessionId}/next`);
  }

  submit(sessionId: string, position: Position, choice: Choice): Promise<SubmitAck> {
    const body =
      'label' in choice
        ? { ...position, label: choice.label }
        : { ...position, not_assessable: true };
    return this.request<SubmitAck>('POST', `/sessions/${sessionId}/labels`, body);
  }

  progress(sessionId: string): Promise<Progress> {
    return this.request<Progress>('GET', `/sessions/${sessionId}/progress`);
  }

  skill(skillId: string): Promise<{ api_version: string; skill: SkillView }> {
    return this.request('GET', `/schema/${skillId}`);
  }
}
