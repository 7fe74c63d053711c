import { beforeEach, describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api.js';
import { ReviewSession } from '../src/session.js';
import { MockService } from './mock_service.js';

let service: MockService;
let session: ReviewSession;

beforeEach(() => {
  service = new MockService(100);
  session = new ReviewSession(new ApiClient('http://mock', service.fetch), 'rev1', 20);
});

describe('session start and navigation', () => {
  it('loads meta and the first page', async () => {
    await session.start();
    expect(session.total).toBe(100);
    expect(session.current()?.rank).toBe(1);
  });

  it('keeps the cursor inside the fetched range while paging', async () => {
    await session.start();
    for (let i = 0; i < 55; i++) {
      await session.advance();
      expect(session.current()).toBeDefined();
      expect(session.cursor).toBe(Math.min(i + 1, 99));
    }
  });

  it('clamps at both ends', async () => {
    await session.start();
    await session.back();
    expect(session.cursor).toBe(0);
    await session.moveTo(10_000);
    expect(session.cursor).toBe(99);
    expect(session.atEnd()).toBe(true);
  });
});

describe('verdict submission', () => {
  it('adjudicating 10 suspects reports done = 10', async () => {
    await session.start();
    for (let i = 0; i < 10; i++) {
      await session.submit('correct');
    }
    const progress = await session.refreshProgress();
    expect(progress.done).toBe(10);
    expect(progress.pending).toBe(90);
    expect(session.pendingSubmissions()).toHaveLength(0);
  });

  it('advances optimistically after submit', async () => {
    await session.start();
    await session.submit('correct');
    expect(session.cursor).toBe(1);
  });

  it('requires a revised label for mislabel verdicts', async () => {
    await session.start();
    await expect(session.submit('mislabel')).rejects.toThrow(/revised label/);
  });

  it('sends the revised label with mislabel verdicts', async () => {
    await session.start();
    await session.submit('mislabel', 0);
    expect(service.log).toHaveLength(1);
    expect(service.log[0]).toMatchObject({ verdict: 'mislabel', revised_label: 0 });
  });
});

describe('offline queueing and retry', () => {
  it('queues while offline and resends exactly once on reconnect', async () => {
    await session.start();
    const firstId = session.current()!.sample_id;

    service.offline = true;
    await session.submit('correct');
    expect(session.pendingSubmissions()).toHaveLength(1);
    expect(session.cursor).toBe(1); // optimistic advance despite failure
    expect(service.log).toHaveLength(0);

    await session.flush(); // still offline: retry fails, stays queued
    expect(session.pendingSubmissions()).toHaveLength(1);

    service.offline = false;
    await session.flush();
    expect(session.pendingSubmissions()).toHaveLength(0);
    const entries = service.log.filter((e) => e.sample_id === firstId);
    expect(entries).toHaveLength(1);
    expect(session.hasAnswered(firstId)).toBe(true);
  });

  it('a submission leaves pending only on acknowledgment', async () => {
    await session.start();
    service.offline = true;
    await session.submit('correct');
    await session.submit('correct');
    expect(session.pendingSubmissions()).toHaveLength(2);
    service.offline = false;
    await session.flush();
    expect(session.pendingSubmissions()).toHaveLength(0);
    expect(service.log).toHaveLength(2);
  });

  it('re-answering the same sample replaces the queued verdict', async () => {
    await session.start();
    service.offline = true;
    await session.submit('correct');
    await session.back();
    await session.submit('mislabel', 1);
    expect(session.pendingSubmissions()).toHaveLength(1);
    service.offline = false;
    await session.flush();
    expect(service.log).toHaveLength(1);
    expect(service.log[0].verdict).toBe('mislabel');
  });

  it('permanent rejections surface instead of spinning', async () => {
    await session.start();
    // direct API misuse: unknown sample is a 400, not a retryable failure
    const api = new ApiClient('http://mock', service.fetch);
    await expect(
      api.submitAdjudication({ sample_id: 'zzz', reviewer_id: 'rev1', verdict: 'correct' }),
    ).rejects.toThrow(/rejected/);
  });
});

describe('final summary', () => {
  it('shows only service-provided consensus and precision', async () => {
    service = new MockService(4);
    const reviewers = ['r1', 'r2', 'r3'].map(
      (r) => new ReviewSession(new ApiClient('http://mock', service.fetch), r, 20),
    );
    for (const reviewer of reviewers) {
      await reviewer.start();
      for (let i = 0; i < 4; i++) {
        // first two suspects get unanimous mislabel votes, rest correct
        if (i < 2) {
          await reviewer.submit('mislabel', 0);
        } else {
          await reviewer.submit('correct');
        }
      }
    }
    const summary = await reviewers[0].finalSummary(4);
    expect(summary.consensus).toEqual(service.consensus());
    expect(summary.precision).toBe(50.0);
  });

  it('reports precision as pending when coverage is incomplete', async () => {
    await session.start();
    await session.submit('correct');
    const summary = await session.finalSummary(10);
    expect(summary.precision).toBeNull();
  });
});
