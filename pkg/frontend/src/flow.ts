/** Session driver: iterate next -> choose -> submit until the server reports done.
 *
 * The server is the source of truth for the cursor: after any network loss the
 * loop simply re-asks for the next unanswered cell, so no local state can be
 * lost or diverge.
 */

import { ApiError, type ApiClient } from './api';
import type { Choice, NextCell, Progress } from './types';

export type Chooser = (cell: NextCell) => Choice | Promise<Choice>;

export interface FlowOptions {
  onCell?: (cell: NextCell) => void;
  onProgress?: (progress: Progress) => void;
  /** Retries for transient network failures; API errors (4xx) are never retried. */
  maxRetries?: number;
  retryDelayMs?: number;
}

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

async function withRetries<T>(call: () => Promise<T>, options: FlowOptions): Promise<T> {
  const maxRetries = options.maxRetries ?? 5;
  let attempt = 0;
  for (;;) {
    try {
      return await call();
    } catch (error) {
      if (error instanceof ApiError) throw error; // server spoke; not a network loss
      attempt += 1;
      if (attempt > maxRetries) throw error;
      await sleep(options.retryDelayMs ?? 500);
    }
  }
}

export async function runAnnotationFlow(
  client: ApiClient,
  annotatorId: string,
  round: 'round1' | 'round2',
  choose: Chooser,
  options: FlowOptions = {},
): Promise<Progress> {
  const session = await withRetries(() => client.createSession(annotatorId, round), options);
  let progress = session;
  while (!progress.complete) {
    const next = await withRetries(() => client.next(session.session_id), options);
    if (next.done) {
      progress = next.progress;
      break;
    }
    options.onCell?.(next);
    const choice = await choose(next);
    const ack = await withRetries(
      () => client.submit(session.session_id, next.position, choice),
      options,
    );
    progress = ack.progress;
    options.onProgress?.(progress);
  }
  return progress;
}
