/** Scripted two-annotator session against the real service over HTTP.
 *
 * Spawns the Python service on a scratch store, completes Round 1 for both
 * annotators through the workbench flow (one planted dispute), verifies the
 * Round-2 queue serves only the disputed cell, reconciles it, and checks that
 * the gold builder reports a nonzero reconciliation rate.
 */

import { spawn, execFileSync, type ChildProcess } from 'node:child_process';
import { mkdtempSync, writeFileSync, readFileSync } from 'node:fs';
import { createServer } from 'node:net';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api';
import { runAnnotationFlow } from '../src/flow';
import type { NextCell } from '../src/types';

const PYTHON = process.env.SKILLGATE_PYTHON ?? 'python3';
const TOKENS = { mei: 'tok-mei', zhao: 'tok-zhao' };

const SCHEMA = `version: live-test
skills:
  - {id: S1, name: Shape, level: lexical, labels: [circle, square, triangle]}
  - {id: S2, name: Size, level: syntactic, labels: ["1", "2", "3"]}
  - {id: S3, name: Shade, level: semantic, labels: [light, dark]}
`;

const DISPUTED = { instance_id: 'i03', skill_id: 'S2' };

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const server = createServer();
    server.listen(0, '127.0.0.1', () => {
      const address = server.address();
      if (address && typeof address === 'object') {
        const port = address.port;
        server.close(() => resolve(port));
      } else {
        reject(new Error('no port'));
      }
    });
  });
}

function cli(args: string[], cwd: string): string {
  return execFileSync(PYTHON, ['-m', 'skillgate.cli', ...args], { cwd, encoding: 'utf-8' });
}

async function waitForService(base: string, token: string, timeoutMs = 20000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const response = await fetch(`${base}/schema/S1`, {
        headers: { Authorization: `Bearer ${token}` },
      });
      if (response.ok) return;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) throw new Error('service did not come up');
    await new Promise((r) => setTimeout(r, 200));
  }
}

describe('live API session', () => {
  let work: string;
  let storeDir: string;
  let base: string;
  let server: ChildProcess | undefined;

  beforeAll(async () => {
    work = mkdtempSync(join(tmpdir(), 'workbench-live-'));
    storeDir = join(work, 'store');
    writeFileSync(join(work, 'schema.yaml'), SCHEMA);

    const mapRows = ['instance_id,target_lexeme,color'];
    const corpusRows = ['instance_id,text,span_start,span_end'];
    for (let i = 0; i < 10; i += 1) {
      const id = `i${String(i).padStart(2, '0')}`;
      mapRows.push(`${id},lex${i % 2},red`);
      corpusRows.push(`${id},sample line ${i} with token inside,12,17`);
    }
    writeFileSync(join(work, 'map.csv'), mapRows.join('\n') + '\n');
    writeFileSync(join(work, 'corpus.csv'), corpusRows.join('\n') + '\n');
    writeFileSync(join(work, 'serve.yaml'), `tokens:\n  mei: ${TOKENS.mei}\n  zhao: ${TOKENS.zhao}\n`);

    cli(['ingest', '--store', storeDir, '--source', 'schema', '--file', join(work, 'schema.yaml')], work);
    cli(['ingest', '--store', storeDir, '--source', 'target_map', '--file', join(work, 'map.csv')], work);
    cli(['ingest', '--store', storeDir, '--source', 'corpus', '--file', join(work, 'corpus.csv')], work);

    const port = await freePort();
    base = `http://127.0.0.1:${port}`;
    server = spawn(
      PYTHON,
      ['-m', 'skillgate.cli', 'serve', '--store', storeDir, '--config', join(work, 'serve.yaml'),
       '--port', String(port)],
      { cwd: work, stdio: 'ignore' },
    );
    await waitForService(base, TOKENS.mei);
  }, 60000);

  afterAll(() => {
    server?.kill();
  });

  it('completes round 1, serves only the dispute in round 2, and reconciles it', async () => {
    const mei = new ApiClient(base, TOKENS.mei);
    const zhao = new ApiClient(base, TOKENS.zhao);

    // Round 1: both pick the first label everywhere; mei deviates on one cell.
    const meiChooser = (cell: NextCell) => {
      const { instance_id, skill_id } = cell.position;
      if (instance_id === DISPUTED.instance_id && skill_id === DISPUTED.skill_id) {
        return { label: cell.skill.labels[1] };
      }
      return { label: cell.skill.labels[0] };
    };
    const meiRound1 = await runAnnotationFlow(mei, 'mei', 'round1', meiChooser);
    expect(meiRound1.complete).toBe(true);
    expect(meiRound1.total).toBe(10 * 3);

    const zhaoRound1 = await runAnnotationFlow(zhao, 'zhao', 'round1', (cell) => ({
      label: cell.skill.labels[0],
    }));
    expect(zhaoRound1.complete).toBe(true);

    // Round 2 queues contain exactly the planted dispute, for both annotators.
    const servedToMei: NextCell[] = [];
    const meiRound2 = await runAnnotationFlow(
      mei,
      'mei',
      'round2',
      (cell) => {
        servedToMei.push(cell);
        return { label: cell.skill.labels[0] };
      },
    );
    expect(meiRound2.total).toBe(1);
    expect(servedToMei.map((c) => c.position)).toEqual([DISPUTED]);
    expect(servedToMei[0].round).toBe('round2');

    const servedToZhao: NextCell[] = [];
    const zhaoRound2 = await runAnnotationFlow(
      zhao,
      'zhao',
      'round2',
      (cell) => {
        servedToZhao.push(cell);
        return { label: cell.skill.labels[0] };
      },
    );
    expect(zhaoRound2.complete).toBe(true);
    expect(servedToZhao.map((c) => c.position)).toEqual([DISPUTED]);

    // The stored cells build a final gold with a nonzero reconciliation rate.
    cli(['gold', '--store', storeDir, '--mode', 'final', '--out', join(work, 'gold')], work);
    const goldTable = readFileSync(join(work, 'gold', 'gold_final.csv'), 'utf-8');
    expect(goldTable).toContain(`${DISPUTED.instance_id},${DISPUTED.skill_id},1,round2_reconciled`);
    const operability = readFileSync(join(work, 'gold', 'operability.csv'), 'utf-8')
      .split('\n')
      .filter((line) => line && !line.startsWith('#'));
    const header = operability[0].split(',');
    const s2 = operability.find((line) => line.startsWith('S2,'))?.split(',');
    expect(s2).toBeDefined();
    const rate = Number(s2![header.indexOf('reconciliation_rate')]);
    expect(rate).toBeGreaterThan(0);
    expect(rate).toBe(1);
    // full gold: 30 cells (29 round-1 agreements + 1 reconciled dispute)
    const goldRows = goldTable.split('\n').filter((l) => l && !l.startsWith('#')).length - 1;
    expect(goldRows).toBe(30);
  }, 60000);
});
