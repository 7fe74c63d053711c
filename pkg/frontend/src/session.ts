import type { ApiClient } from './api.js';
import type { ConsensusEntry, Meta, Progress, Suspect, Verdict } from './types.js';

export interface PendingSubmission {
  sample_id: string;
  verdict: Verdict;
  revised_label?: number;
  attempts: number;
}

export interface FinalSummary {
  consensus: ConsensusEntry[];
  precision: number | null; // null until every top-k suspect has full coverage
  k: number;
}

const PAGE_SIZE = 50;

/**
 * Review session state for one reviewer: a cursor over the ranked suspect
 * list, lazily fetched pages, and a durable outbox of verdicts awaiting
 * server acknowledgment.
 *
 * A verdict enters `pending` on submit and leaves it only when the server
 * acknowledges it; failed flushes keep the entry queued for retry, and
 * resubmitting the same sample replaces the queued verdict, so each
 * (reviewer, sample) pair reaches the server at most once per revision.
 */
export class ReviewSession {
  meta: Meta | null = null;
  total = 0;
  cursor = 0;
  done = 0;
  private suspects = new Map<number, Suspect>();
  private pending = new Map<string, PendingSubmission>();
  private submitted = new Set<string>();

  constructor(
    private readonly api: ApiClient,
    readonly reviewerId: string,
    private readonly pageSize: number = PAGE_SIZE,
  ) {
    if (!reviewerId.trim()) {
      throw new Error('reviewer id must be nonempty');
    }
  }

  async start(): Promise<void> {
    this.meta = await this.api.meta();
    this.total = this.meta.total_suspects;
    await this.ensureFetched(0);
    await this.refreshProgress();
  }

  /** Suspect under the cursor; undefined while the page is still loading. */
  current(): Suspect | undefined {
    return this.suspects.get(this.cursor);
  }

  suspectAt(index: number): Suspect | undefined {
    return this.suspects.get(index);
  }

  pendingSubmissions(): PendingSubmission[] {
    return [...this.pending.values()];
  }

  hasAnswered(sampleId: string): boolean {
    return this.submitted.has(sampleId) || this.pending.has(sampleId);
  }

  async ensureFetched(index: number): Promise<void> {
    if (index < 0 || (this.total > 0 && index >= this.total)) {
      return;
    }
    if (this.suspects.has(index)) {
      return;
    }
    const offset = Math.floor(index / this.pageSize) * this.pageSize;
    const page = await this.api.suspects(offset, this.pageSize);
    this.total = page.total;
    page.items.forEach((item, i) => this.suspects.set(offset + i, item));
  }

  private clampCursor(index: number): number {
    const last = Math.max(this.total - 1, 0);
    return Math.min(Math.max(index, 0), last);
  }

  async moveTo(index: number): Promise<void> {
    this.cursor = this.clampCursor(index);
    await this.ensureFetched(this.cursor);
  }

  async advance(): Promise<void> {
    await this.moveTo(this.cursor + 1);
  }

  async back(): Promise<void> {
    await this.moveTo(this.cursor - 1);
  }

  atEnd(): boolean {
    return this.total > 0 && this.cursor >= this.total - 1;
  }

  /**
   * Record a verdict for the current suspect, advance optimistically, and
   * attempt to flush the outbox. Returns once the flush attempt settles;
   * unacknowledged verdicts stay queued.
   */
  async submit(verdict: Verdict, revisedLabel?: number): Promise<void> {
    const suspect = this.current();
    if (!suspect) {
      throw new Error('no suspect under cursor');
    }
    if (verdict === 'mislabel' && revisedLabel === undefined) {
      throw new Error('mislabel verdicts need a revised label');
    }
    const entry: PendingSubmission = {
      sample_id: suspect.sample_id,
      verdict,
      attempts: 0,
    };
    if (verdict === 'mislabel') {
      entry.revised_label = revisedLabel;
    }
    this.pending.set(suspect.sample_id, entry);
    if (!this.atEnd()) {
      await this.advance();
    }
    await this.flush();
  }

  /**
   * Push queued verdicts to the server in submission order. Stops at the
   * first transport failure (the remainder retries on the next flush).
   */
  async flush(): Promise<void> {
    for (const entry of [...this.pending.values()]) {
      entry.attempts += 1;
      let accepted = false;
      try {
        accepted = await this.api.submitAdjudication({
          sample_id: entry.sample_id,
          reviewer_id: this.reviewerId,
          verdict: entry.verdict,
          ...(entry.revised_label !== undefined ? { revised_label: entry.revised_label } : {}),
        });
      } catch (err) {
        if (err instanceof Error && err.message.startsWith('adjudication rejected')) {
          throw err; // permanent rejection: do not spin on it
        }
        accepted = false;
      }
      if (!accepted) {
        return;
      }
      this.pending.delete(entry.sample_id);
      this.submitted.add(entry.sample_id);
    }
  }

  async refreshProgress(): Promise<Progress> {
    const progress = await this.api.progress(this.reviewerId);
    this.done = progress.done;
    return progress;
  }

  allSubmitted(): boolean {
    return this.pending.size === 0 && this.done >= this.total && this.total > 0;
  }

  /**
   * Consensus and precision@k as reported by the service. The UI displays
   * these values verbatim; nothing is computed client-side.
   */
  async finalSummary(k?: number): Promise<FinalSummary> {
    const topK = k ?? this.total;
    const consensus = await this.api.consensus();
    let precision: number | null = null;
    try {
      precision = (await this.api.precision(topK)).precision;
    } catch {
      precision = null; // coverage incomplete: other reviewers still working
    }
    return { consensus, precision, k: topK };
  }
}
