/** Browser entry: wires the API client and flow primitives to the DOM.
 *
 * Label entry is choice-only (buttons or number keys); there is no free-text
 * path, mirroring the server's submit contract. Nothing is persisted client
 * side: a refresh re-opens the server session and resumes at the first
 * unanswered cell.
 */

import { ApiClient, ApiError } from './api';
import { mapKeyToChoice } from './keyboard';
import type { Choice, NextCell, Progress } from './types';

interface Ui {
  connectForm: HTMLFormElement;
  connectPanel: HTMLElement;
  workPanel: HTMLElement;
  roundBadge: HTMLElement;
  focusBanner: HTMLElement;
  sentence: HTMLElement;
  skillTitle: HTMLElement;
  skillMeta: HTMLElement;
  labelList: HTMLElement;
  rulesBox: HTMLDetailsElement;
  rulesList: HTMLElement;
  examplesBox: HTMLDetailsElement;
  examplesList: HTMLElement;
  applicability: HTMLElement;
  progressBar: HTMLProgressElement;
  progressText: HTMLElement;
  perSkill: HTMLElement;
  status: HTMLElement;
  doneScreen: HTMLElement;
}

function grab(): Ui {
  const byId = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;
  return {
    connectForm: byId<HTMLFormElement>('connect-form'),
    connectPanel: byId('connect-panel'),
    workPanel: byId('work-panel'),
    roundBadge: byId('round-badge'),
    focusBanner: byId('focus-banner'),
    sentence: byId('sentence'),
    skillTitle: byId('skill-title'),
    skillMeta: byId('skill-meta'),
    labelList: byId('label-list'),
    rulesBox: byId<HTMLDetailsElement>('rules-box'),
    rulesList: byId('rules-list'),
    examplesBox: byId<HTMLDetailsElement>('examples-box'),
    examplesList: byId('examples-list'),
    applicability: byId('applicability'),
    progressBar: byId<HTMLProgressElement>('progress-bar'),
    progressText: byId('progress-text'),
    perSkill: byId('per-skill'),
    status: byId('status'),
    doneScreen: byId('done-screen'),
  };
}

function renderSentence(ui: Ui, cell: NextCell): void {
  ui.sentence.textContent = '';
  const { text, span } = cell.instance;
  if (span && text) {
    ui.sentence.append(document.createTextNode(text.slice(0, span[0])));
    const mark = document.createElement('mark');
    mark.textContent = text.slice(span[0], span[1]);
    ui.sentence.append(mark, document.createTextNode(text.slice(span[1])));
  } else {
    ui.sentence.textContent = cell.instance.marked_text || text || cell.position.instance_id;
  }
}

function renderProgress(ui: Ui, progress: Progress): void {
  ui.progressBar.max = progress.total || 1;
  ui.progressBar.value = progress.answered;
  ui.progressText.textContent = `${progress.answered} / ${progress.total}`;
  ui.perSkill.textContent = '';
  for (const [skillId, entry] of Object.entries(progress.per_skill)) {
    const row = document.createElement('div');
    row.className = 'per-skill-row';
    row.textContent = `${skillId}: ${entry.answered}/${entry.total}`;
    ui.perSkill.append(row);
  }
}

class Workbench {
  private current: NextCell | null = null;
  private submitting = false;

  constructor(
    private readonly ui: Ui,
    private readonly client: ApiClient,
    private readonly sessionId: string,
  ) {}

  async advance(): Promise<void> {
    const next = await this.client.next(this.sessionId);
    if (next.done) {
      this.current = null;
      this.ui.workPanel.hidden = true;
      this.ui.doneScreen.hidden = false;
      renderProgress(this.ui, next.progress);
      return;
    }
    this.current = next;
    this.render(next);
  }

  private render(cell: NextCell): void {
    const ui = this.ui;
    ui.roundBadge.textContent = cell.round === 'round2' ? 'Round 2' : 'Round 1';
    ui.focusBanner.hidden = cell.round !== 'round2';
    renderSentence(ui, cell);
    ui.skillTitle.textContent = `${cell.skill.skill_id} · ${cell.skill.name}`;
    ui.skillMeta.textContent = cell.skill.level;
    ui.applicability.textContent = cell.skill.applicability ?? '';
    ui.applicability.hidden = !cell.skill.applicability;

    ui.labelList.textContent = '';
    cell.skill.labels.forEach((label, index) => {
      const button = document.createElement('button');
      button.type = 'button';
      button.className = 'label-button';
      button.textContent = index < 9 ? `${index + 1} · ${label}` : label;
      button.addEventListener('click', () => void this.choose({ label }));
      ui.labelList.append(button);
    });
    const na = document.createElement('button');
    na.type = 'button';
    na.className = 'label-button not-assessable';
    na.textContent = '0 · not assessable';
    na.addEventListener('click', () => void this.choose({ notAssessable: true }));
    ui.labelList.append(na);

    // Decision rules stay collapsed by default: schema-only, but on demand.
    ui.rulesList.textContent = '';
    for (const rule of cell.skill.rules) {
      const item = document.createElement('li');
      item.textContent = rule;
      ui.rulesList.append(item);
    }
    ui.rulesBox.hidden = cell.skill.rules.length === 0;
    ui.rulesBox.open = false;

    ui.examplesList.textContent = '';
    for (const example of cell.skill.examples) {
      const item = document.createElement('li');
      item.textContent = `${example.text} → ${example.label}`;
      ui.examplesList.append(item);
    }
    ui.examplesBox.hidden = cell.skill.examples.length === 0;

    renderProgress(ui, cell.progress);
    ui.status.textContent = '';
  }

  async choose(choice: Choice): Promise<void> {
    if (!this.current || this.submitting) return;
    this.submitting = true;
    try {
      const ack = await this.client.submit(this.sessionId, this.current.position, choice);
      renderProgress(this.ui, ack.progress);
      await this.advance();
    } catch (error) {
      this.ui.status.textContent =
        error instanceof ApiError
          ? `rejected: ${JSON.stringify(error.detail)}`
          : 'network problem, retrying is safe (server keeps the cursor)';
    } finally {
      this.submitting = false;
    }
  }

  handleKey(event: KeyboardEvent): void {
    if (!this.current) return;
    if (event.target instanceof HTMLInputElement || event.target instanceof HTMLTextAreaElement) {
      return;
    }
    const choice = mapKeyToChoice(event.key, this.current.skill.labels);
    if (choice) {
      event.preventDefault();
      void this.choose(choice);
    }
  }
}

export function boot(): void {
  const ui = grab();
  ui.connectForm.addEventListener('submit', (event) => {
    event.preventDefault();
    const data = new FormData(ui.connectForm);
    const client = new ApiClient(
      String(data.get('base_url') || '').replace(/\/$/, ''),
      String(data.get('token') || ''),
    );
    const annotator = String(data.get('annotator') || '');
    const round = (String(data.get('round') || 'round1') as 'round1' | 'round2');
    void (async () => {
      try {
        const session = await client.createSession(annotator, round);
        const workbench = new Workbench(ui, client, session.session_id);
        ui.connectPanel.hidden = true;
        ui.workPanel.hidden = false;
        document.addEventListener('keydown', (e) => workbench.handleKey(e));
        await workbench.advance();
      } catch (error) {
        ui.status.textContent =
          error instanceof ApiError ? `cannot open session: ${JSON.stringify(error.detail)}` : String(error);
      }
    })();
  });
}

if (typeof document !== 'undefined' && document.getElementById('connect-form')) {
  boot();
}
