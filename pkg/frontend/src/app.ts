import { ApiClient } from './api.js';
import { ReviewSession } from './session.js';
import type { Suspect } from './types.js';

interface Elements {
  rank: HTMLElement;
  thumb: HTMLImageElement;
  given: HTMLElement;
  proposed: HTMLElement;
  scores: HTMLElement;
  group: HTMLElement;
  progressBar: HTMLElement;
  progressText: HTMLElement;
  pendingBadge: HTMLElement;
  labelPicker: HTMLElement;
  status: HTMLElement;
  reviewPane: HTMLElement;
  summaryPane: HTMLElement;
  summaryBody: HTMLElement;
}

function grab(): Elements {
  const byId = (id: string) => {
    const el = document.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el;
  };
  return {
    rank: byId('rank'),
    thumb: byId('thumb') as HTMLImageElement,
    given: byId('given-label'),
    proposed: byId('proposed-label'),
    scores: byId('scores'),
    group: byId('group-info'),
    progressBar: byId('progress-bar'),
    progressText: byId('progress-text'),
    pendingBadge: byId('pending-badge'),
    labelPicker: byId('label-picker'),
    status: byId('status'),
    reviewPane: byId('review-pane'),
    summaryPane: byId('summary-pane'),
    summaryBody: byId('summary-body'),
  };
}

/** Keyboard-first review loop: c = correct, m = mislabel (then a digit picks
 * the revised class), arrows navigate. Retry of unacknowledged verdicts runs
 * in the background; nothing is lost on transient network failures. */
export class ReviewApp {
  private session: ReviewSession;
  private els: Elements;
  private pickingLabel = false;
  private retryTimer: number | undefined;

  constructor(private readonly api: ApiClient, reviewerId: string) {
    this.session = new ReviewSession(api, reviewerId);
    this.els = grab();
  }

  async start(): Promise<void> {
    await this.session.start();
    document.addEventListener('keydown', (ev) => void this.onKey(ev));
    this.retryTimer = window.setInterval(() => void this.retryPending(), 3000);
    this.render();
  }

  private classLabel(index: number): string {
    const names = this.session.meta?.class_names ?? [];
    return names[index] ?? `class ${index}`;
  }

  private async onKey(ev: KeyboardEvent): Promise<void> {
    const key = ev.key.toLowerCase();
    if (this.pickingLabel) {
      if (/^[0-9]$/.test(key)) {
        const label = Number(key);
        if (label < (this.session.meta?.num_classes ?? 0)) {
          this.pickingLabel = false;
          await this.submitSafe('mislabel', label);
        }
      } else if (key === 'escape') {
        this.pickingLabel = false;
      }
      this.render();
      return;
    }
    switch (key) {
      case 'c':
        await this.submitSafe('correct');
        break;
      case 'm':
        this.pickingLabel = true;
        break;
      case 'arrowright':
        await this.session.advance();
        break;
      case 'arrowleft':
        await this.session.back();
        break;
      default:
        return;
    }
    this.render();
  }

  private async submitSafe(verdict: 'correct' | 'mislabel', label?: number): Promise<void> {
    try {
      await this.session.submit(verdict, label);
    } catch (err) {
      this.els.status.textContent = String(err);
    }
    await this.session.refreshProgress();
    if (this.session.allSubmitted()) {
      await this.showSummary();
    }
  }

  private async retryPending(): Promise<void> {
    if (this.session.pendingSubmissions().length === 0) {
      return;
    }
    await this.session.flush();
    await this.session.refreshProgress();
    this.render();
  }

  private render(): void {
    const suspect: Suspect | undefined = this.session.current();
    if (!suspect) {
      return;
    }
    this.els.rank.textContent = `#${suspect.rank} of ${this.session.total}`;
    this.els.thumb.src = this.api.thumbnailUrl(suspect.sample_id);
    this.els.thumb.alt = suspect.sample_id;
    this.els.given.textContent = this.classLabel(suspect.given_label);
    this.els.proposed.textContent = this.classLabel(suspect.proposed_label);
    this.els.scores.textContent =
      `noise reduction ${suspect.noise_reduction.toFixed(3)} / ` +
      `p(noise) ${suspect.p_noise.toFixed(3)}`;
    this.els.group.textContent = `${suspect.group_id} @ frame ${suspect.frame_index}`;
    const pct = this.session.total
      ? Math.round((100 * this.session.done) / this.session.total) : 0;
    this.els.progressBar.style.width = `${pct}%`;
    this.els.progressText.textContent = `${this.session.done} / ${this.session.total}`;
    const pending = this.session.pendingSubmissions().length;
    this.els.pendingBadge.textContent = pending > 0 ? `${pending} unsent (retrying)` : '';
    this.els.labelPicker.hidden = !this.pickingLabel;
    if (this.pickingLabel) {
      const names = this.session.meta?.class_names ?? [];
      this.els.labelPicker.textContent =
        'new label: ' + names.map((n, i) => `[${i}] ${n}`).join('  ');
    }
    this.els.status.textContent = this.session.hasAnswered(suspect.sample_id)
      ? 'answered' : '';
  }

  private async showSummary(): Promise<void> {
    const summary = await this.session.finalSummary();
    this.els.reviewPane.hidden = true;
    this.els.summaryPane.hidden = false;
    const mislabels = summary.consensus.filter((c) => c.final_verdict === 'mislabel').length;
    const precisionText = summary.precision === null
      ? 'pending (awaiting the other reviewers)'
      : summary.precision.toFixed(1);
    this.els.summaryBody.innerHTML = `
      <p>Consensus resolved for ${summary.consensus.length} suspects;
         ${mislabels} confirmed mislabels.</p>
      <p class="precision">Precision@${summary.k}:
         <strong data-role="precision">${precisionText}</strong></p>`;
    if (this.retryTimer !== undefined) {
      window.clearInterval(this.retryTimer);
    }
  }
}
