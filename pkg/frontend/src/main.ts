import { ApiClient } from './api.js';
import { ReviewApp } from './app.js';

function reviewerIdFromPage(): string {
  const params = new URLSearchParams(window.location.search);
  const fromUrl = params.get('reviewer');
  if (fromUrl && fromUrl.trim()) {
    return fromUrl.trim();
  }
  let id = window.localStorage.getItem('labelsift-reviewer') ?? '';
  while (!id.trim()) {
    id = window.prompt('Reviewer id:') ?? '';
  }
  window.localStorage.setItem('labelsift-reviewer', id.trim());
  return id.trim();
}

const app = new ReviewApp(new ApiClient(''), reviewerIdFromPage());
app.start().catch((err) => {
  const status = document.getElementById('status');
  if (status) {
    status.textContent = `failed to start: ${err}`;
  }
});
