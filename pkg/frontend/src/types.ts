// Mirrors the server payloads exactly; see docs/http_api.md.

export interface Progress {
  done: number;
  total: number;
}

export interface TaskView {
  task_id: string;
  image_url: string;
  context: string;
  outcome: string;
  option_a: string;
  option_b: string;
  progress: Progress;
}

export type Choice = 'a' | 'b';

export interface JudgmentAck {
  status: string;
  task_id: string;
  progress: Progress;
}

export type NextTaskResult =
  | { kind: 'task'; task: TaskView }
  | { kind: 'empty' }
  | { kind: 'unauthorized' };

export type SubmitResult =
  | { kind: 'ok'; ack: JudgmentAck }
  | { kind: 'conflict' }
  | { kind: 'unauthorized' }
  | { kind: 'error'; message: string };
