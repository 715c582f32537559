// Browser bootstrap: wires the state machine to the DOM and the real
// fetch. Kept as thin as possible; all logic lives in app.ts/render.ts.

import { AnnotationApp } from './app.js';
import { ApiClient } from './client.js';
import type { View } from './app.js';

const TOKEN_KEY = 'annotation-token';

function domView(root: HTMLElement, banner: HTMLElement): View {
  return {
    show: (html) => {
      root.innerHTML = html;
    },
    showBanner: (html) => {
      banner.innerHTML = html;
    },
    clearBanner: () => {
      banner.innerHTML = '';
    },
  };
}

function boot(): void {
  const root = document.getElementById('root');
  const banner = document.getElementById('banner');
  if (!root || !banner) throw new Error('index.html is missing #root/#banner');

  const token = sessionStorage.getItem(TOKEN_KEY) ?? '';
  const app = new AnnotationApp(new ApiClient(token), domView(root, banner));

  root.addEventListener('click', (event) => {
    const target = event.target as HTMLElement;
    const button = target.closest('button');
    if (!button) return;
    if (button.id === 'choose-a') void app.choose('a');
    if (button.id === 'choose-b') void app.choose('b');
    if (button.id === 'token-submit') {
      const input = document.getElementById('token-input') as HTMLInputElement | null;
      if (input && input.value) {
        sessionStorage.setItem(TOKEN_KEY, input.value);
        location.reload();
      }
    }
  });
  banner.addEventListener('click', (event) => {
    const target = event.target as HTMLElement;
    if (target.id === 'retry') void app.advance();
  });
  document.addEventListener('keydown', (event) => {
    if (event.key === 'a' || event.key === 'A') void app.choose('a');
    if (event.key === 'b' || event.key === 'B') void app.choose('b');
  });

  void app.start();
}

boot();
