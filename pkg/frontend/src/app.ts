// Session state machine: fetch a task, render it, record exactly one
// choice, advance only after the server acknowledges. At most one
// submission is ever in flight (double clicks are dropped), and a conflict
// (task already judged) skips forward with a notice.

import { ApiClient } from './client.js';
import { renderDone, renderErrorBanner, renderLogin, renderNotice, renderTask } from './render.js';
import type { Choice, TaskView } from './types.js';

export type Phase = 'idle' | 'loading' | 'task' | 'submitting' | 'done' | 'login';

export interface View {
  show(html: string): void;
  showBanner(html: string): void;
  clearBanner(): void;
}

export class AnnotationApp {
  phase: Phase = 'idle';
  current: TaskView | null = null;
  completed = 0;
  total = 0;

  constructor(
    private readonly api: ApiClient,
    private readonly view: View,
  ) {}

  async start(): Promise<void> {
    await this.advance();
  }

  async advance(): Promise<void> {
    this.phase = 'loading';
    this.current = null;
    let result;
    try {
      result = await this.api.nextTask();
    } catch (error) {
      this.phase = 'task';
      this.view.showBanner(renderErrorBanner(`Could not reach the server: ${error}`));
      return;
    }
    this.view.clearBanner();
    if (result.kind === 'unauthorized') {
      this.phase = 'login';
      this.view.show(renderLogin());
      return;
    }
    if (result.kind === 'empty') {
      this.phase = 'done';
      this.view.show(renderDone(this.completed, this.total));
      return;
    }
    this.current = result.task;
    this.completed = result.task.progress.done;
    this.total = result.task.progress.total;
    this.phase = 'task';
    this.view.show(renderTask(result.task));
  }

  async choose(choice: Choice): Promise<void> {
    if (this.phase !== 'task' || this.current === null) {
      return; // ignores double clicks and keystrokes between tasks
    }
    const task = this.current;
    this.phase = 'submitting';
    const result = await this.api.submitJudgment(task.task_id, choice);
    switch (result.kind) {
      case 'ok':
        this.completed = result.ack.progress.done;
        this.total = result.ack.progress.total;
        await this.advance();
        return;
      case 'conflict':
        this.view.showBanner(renderNotice('This task was already judged; moving on.'));
        await this.advance();
        return;
      case 'unauthorized':
        this.phase = 'login';
        this.view.show(renderLogin());
        return;
      case 'error':
        this.phase = 'task'; // stay on the task so the choice can be retried
        this.view.showBanner(renderErrorBanner(`Submission failed: ${result.message}`));
        return;
    }
  }
}
