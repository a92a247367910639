import { describe, expect, it } from 'vitest';

import type { ApiClient } from '../src/api';
import { runAnnotationFlow } from '../src/flow';
import type { Choice, NextCell, Position, Progress } from '../src/types';

const SKILL = {
  skill_id: 'S1',
  name: 'Shape',
  level: 'lexical',
  labels: ['circle', 'square'],
  rules: ['pick the drawn shape'],
  examples: [],
  applicability: null,
  not_assessable_allowed: true,
};

/** In-memory stand-in for the service: a queue plus an answered set. */
class FakeService {
  answered = new Map<string, Choice>();
  flakyNextFailures = 0;

  constructor(private readonly queue: Position[]) {}

  private progress(): Progress {
    return {
      api_version: '1',
      session_id: 'fake',
      round: 'round1',
      answered: this.answered.size,
      total: this.queue.length,
      fraction: this.queue.length ? this.answered.size / this.queue.length : 1,
      complete: this.answered.size === this.queue.length,
      per_skill: {},
    };
  }

  client(): ApiClient {
    const self = this;
    return {
      async createSession() {
        return self.progress();
      },
      async next() {
        if (self.flakyNextFailures > 0) {
          self.flakyNextFailures -= 1;
          throw new TypeError('fetch failed'); // network-style failure
        }
        const pending = self.queue.find(
          (p) => !self.answered.has(`${p.instance_id}|${p.skill_id}`),
        );
        if (!pending) {
          return { api_version: '1', done: true, progress: self.progress() };
        }
        const cell: NextCell = {
          api_version: '1',
          done: false,
          position: pending,
          index: self.answered.size,
          total: self.queue.length,
          instance: {
            instance_id: pending.instance_id,
            text: 'one round thing',
            span: [4, 9],
            marked_text: 'one ⟦round⟧ thing',
          },
          skill: SKILL,
          round: 'round1',
          progress: self.progress(),
        };
        return cell;
      },
      async submit(_session: string, position: Position, choice: Choice) {
        if ('label' in choice && !SKILL.labels.includes(choice.label)) {
          const { ApiError } = await import('../src/api');
          throw new ApiError('422', 422, { legal_labels: SKILL.labels });
        }
        self.answered.set(`${position.instance_id}|${position.skill_id}`, choice);
        return { api_version: '1', accepted: true, progress: self.progress() };
      },
      async progress() {
        return self.progress();
      },
      async skill() {
        return { api_version: '1', skill: SKILL };
      },
    } as unknown as ApiClient;
  }
}

const queue = (n: number): Position[] =>
  Array.from({ length: n }, (_, i) => ({ instance_id: `i${i}`, skill_id: 'S1' }));

describe('runAnnotationFlow', () => {
  it('completes a session and answers every queued cell', async () => {
    const service = new FakeService(queue(5));
    const seen: string[] = [];
    const result = await runAnnotationFlow(
      service.client(),
      'mei',
      'round1',
      (cell) => {
        seen.push(cell.position.instance_id);
        return { label: 'circle' };
      },
    );
    expect(result.complete).toBe(true);
    expect(service.answered.size).toBe(5);
    expect(seen).toEqual(['i0', 'i1', 'i2', 'i3', 'i4']);
  });

  it('only offers the skill labels to the chooser (no free text path)', async () => {
    const service = new FakeService(queue(2));
    await runAnnotationFlow(service.client(), 'mei', 'round1', (cell) => {
      expect(cell.skill.labels).toEqual(['circle', 'square']);
      return { label: cell.skill.labels[1] };
    });
    for (const choice of service.answered.values()) {
      expect('label' in choice && SKILL.labels.includes(choice.label)).toBe(true);
    }
  });

  it('supports not-assessable choices', async () => {
    const service = new FakeService(queue(1));
    await runAnnotationFlow(service.client(), 'mei', 'round1', () => ({ notAssessable: true }));
    expect([...service.answered.values()][0]).toEqual({ notAssessable: true });
  });

  it('retries transient network failures and resumes from the server cursor', async () => {
    const service = new FakeService(queue(3));
    service.flakyNextFailures = 2;
    const result = await runAnnotationFlow(
      service.client(),
      'mei',
      'round1',
      () => ({ label: 'circle' }),
      { retryDelayMs: 1, maxRetries: 5 },
    );
    expect(result.complete).toBe(true);
    expect(service.answered.size).toBe(3);
  });

  it('does not retry server-side rejections', async () => {
    const service = new FakeService(queue(1));
    const attempt = runAnnotationFlow(
      service.client(),
      'mei',
      'round1',
      () => ({ label: 'not-a-label' }),
      { retryDelayMs: 1 },
    );
    await expect(attempt).rejects.toMatchObject({ status: 422 });
    expect(service.answered.size).toBe(0);
  });

  it('finishes immediately on an already-complete session', async () => {
    const service = new FakeService([]);
    const result = await runAnnotationFlow(service.client(), 'mei', 'round2', () => {
      throw new Error('chooser must not run for an empty queue');
    });
    expect(result.complete).toBe(true);
  });
});
