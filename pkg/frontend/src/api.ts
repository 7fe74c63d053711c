import type {
  AdjudicationBody, ConsensusEntry, Meta, PrecisionResult, Progress, SuspectsPage,
} from './types.js';

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin typed client over the review service HTTP+JSON API. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchImpl: FetchLike = (input, init) => globalThis.fetch(input, init),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await this.fetchImpl(this.baseUrl + path);
    if (!resp.ok) {
      throw new Error(`GET ${path} failed: ${resp.status}`);
    }
    return (await resp.json()) as T;
  }

  meta(): Promise<Meta> {
    return this.getJson<Meta>('/api/meta');
  }

  suspects(offset: number, limit: number): Promise<SuspectsPage> {
    return this.getJson<SuspectsPage>(`/api/suspects?offset=${offset}&limit=${limit}`);
  }

  progress(reviewerId: string): Promise<Progress> {
    return this.getJson<Progress>(`/api/progress?reviewer_id=${encodeURIComponent(reviewerId)}`);
  }

  consensus(): Promise<ConsensusEntry[]> {
    return this.getJson<ConsensusEntry[]>('/api/consensus');
  }

  precision(k: number): Promise<PrecisionResult> {
    return this.getJson<PrecisionResult>(`/api/precision?k=${k}`);
  }

  thumbnailUrl(sampleId: string): string {
    return `${this.baseUrl}/api/samples/${encodeURIComponent(sampleId)}/thumbnail`;
  }

  /** Resolves true when the server acknowledged the adjudication. */
  async submitAdjudication(body: AdjudicationBody): Promise<boolean> {
    const resp = await this.fetchImpl(`${this.baseUrl}/api/adjudications`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
    if (resp.status >= 400 && resp.status < 500) {
      // Malformed or rejected submissions will never succeed; surface loudly.
      const detail = await resp.text();
      throw new Error(`adjudication rejected (${resp.status}): ${detail}`);
    }
    if (!resp.ok) {
      return false;
    }
    const parsed = (await resp.json()) as { accepted?: boolean };
    return parsed.accepted === true;
  }
}
