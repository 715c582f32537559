// Thin typed wrapper over the annotation service JSON API.
// The fetch implementation is injectable so tests can run against an
// in-process stub server.

import type { Choice, NextTaskResult, SubmitResult, TaskView } from './types.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly token: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
    private readonly baseUrl: string = '',
  ) {}

  private headers(): Record<string, string> {
    return {
      'Content-Type': 'application/json',
      Authorization: `Bearer ${this.token}`,
    };
  }

  async nextTask(): Promise<NextTaskResult> {
    const response = await this.fetchImpl(`${this.baseUrl}/api/tasks/next`, {
      headers: this.headers(),
    });
    if (response.status === 401) return { kind: 'unauthorized' };
    if (response.status === 204) return { kind: 'empty' };
    if (!response.ok) throw new Error(`next task failed: HTTP ${response.status}`);
    return { kind: 'task', task: (await response.json()) as TaskView };
  }

  async submitJudgment(taskId: string, choice: Choice): Promise<SubmitResult> {
    let response: Response;
    try {
      response = await this.fetchImpl(`${this.baseUrl}/api/judgments`, {
        method: 'POST',
        headers: this.headers(),
        body: JSON.stringify({ task_id: taskId, choice }),
      });
    } catch (error) {
      return { kind: 'error', message: String(error) };
    }
    if (response.status === 401) return { kind: 'unauthorized' };
    if (response.status === 409) return { kind: 'conflict' };
    if (!response.ok) return { kind: 'error', message: `HTTP ${response.status}` };
    return { kind: 'ok', ack: await response.json() };
  }
}
