// Pure payload -> HTML mapping. Options are labeled only "A" and "B";
// nothing beyond the server payload and fixed chrome ever reaches the DOM,
// which is what the blindness snapshot tests pin down.

import type { TaskView } from './types.js';

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;')
    .replace(/'/g, '&#39;');
}

export function renderTask(task: TaskView): string {
  const progress = `${task.progress.done} / ${task.progress.total}`;
  return [
    `<div class="task" data-task-id="${escapeHtml(task.task_id)}">`,
    `  <div class="progress">Completed: ${escapeHtml(progress)}</div>`,
    `  <img class="scene" src="${escapeHtml(task.image_url)}" alt="scene under judgment">`,
    `  <p class="context"><strong>Context:</strong> ${escapeHtml(task.context)}</p>`,
    `  <p class="outcome"><strong>Outcome:</strong> ${escapeHtml(task.outcome)}</p>`,
    `  <p class="question">Which explanation is more appropriate? (press A or B)</p>`,
    `  <div class="options">`,
    `    <button class="option" id="choose-a"><span class="label">A</span>` +
      `<span class="text">${escapeHtml(task.option_a)}</span></button>`,
    `    <button class="option" id="choose-b"><span class="label">B</span>` +
      `<span class="text">${escapeHtml(task.option_b)}</span></button>`,
    `  </div>`,
    `</div>`,
  ].join('\n');
}

export function renderDone(done: number, total: number): string {
  return [
    `<div class="done">`,
    `  <h2>All done</h2>`,
    `  <p>You completed ${done} of ${total} available judgments. Thank you!</p>`,
    `</div>`,
  ].join('\n');
}

export function renderLogin(): string {
  return [
    `<div class="login">`,
    `  <h2>Sign in</h2>`,
    `  <p>Your access token was not accepted. Enter the token you were given:</p>`,
    `  <input id="token-input" type="password" autocomplete="off">`,
    `  <button id="token-submit">Continue</button>`,
    `</div>`,
  ].join('\n');
}

export function renderErrorBanner(message: string): string {
  return `<div class="banner error">${escapeHtml(message)} <button id="retry">Retry</button></div>`;
}

export function renderNotice(message: string): string {
  return `<div class="banner notice">${escapeHtml(message)}</div>`;
}
