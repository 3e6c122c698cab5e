/**
 * Fine-tuning control room: the live Reasonability Matrix dashboard, a job
 * submission form, and per-job status rows with activation. Jobs are tracked
 * by the ids this session submitted; state comes from polling the service.
 */

import { ApiClient, ApiError } from './api.js';
import type { JobStatus, MatrixView, Quadrant } from './api.js';
import { el, replaceChildrenOf } from './dom.js';
import { QUADRANT_LABELS } from './strings.js';

const MATRIX_ORDER: readonly Quadrant[] = ['RA', 'UA', 'RIA', 'UIA'];
const POLL_MS = 1000;

export interface JobsCallbacks {
  onActivated(modelVersion: number): void;
}

export class JobsView {
  readonly root: HTMLElement;
  private readonly api: ApiClient;
  private readonly callbacks: JobsCallbacks;
  private readonly matrixBox: HTMLElement;
  private readonly jobsBox: HTMLElement;
  private readonly formStatus: HTMLElement;
  private readonly jobs = new Map<string, JobStatus>();
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(api: ApiClient, callbacks: JobsCallbacks) {
    this.api = api;
    this.callbacks = callbacks;
    this.matrixBox = el('div', { class: 'matrix-box', 'data-role': 'matrix' });
    this.jobsBox = el('div', { class: 'jobs-box', 'data-role': 'jobs' });
    this.formStatus = el('p', { class: 'status', 'data-role': 'job-form-status' });
    this.root = el('section', { class: 'jobs-view' }, [
      el('h2', {}, ['Reasonability Matrix']),
      this.matrixBox,
      el('h2', {}, ['Fine-tuning jobs']),
      this.buildForm(),
      this.jobsBox,
    ]);
  }

  async refresh(): Promise<void> {
    await Promise.all([this.refreshMatrix(), this.tick()]);
  }

  async refreshMatrix(): Promise<void> {
    let matrix: MatrixView;
    try {
      matrix = await this.api.getMatrix();
    } catch (err) {
      replaceChildrenOf(this.matrixBox, [
        el('p', { class: 'banner' }, [describeError(err)]),
      ]);
      return;
    }
    this.renderMatrix(matrix);
  }

  private renderMatrix(matrix: MatrixView): void {
    const cells = MATRIX_ORDER.map((q) =>
      el('div', { class: `matrix-cell quadrant-${q.toLowerCase()}`, 'data-quadrant': q }, [
        el('span', { class: 'matrix-count' }, [String(matrix.counts[q])]),
        el('span', { class: 'matrix-label' }, [QUADRANT_LABELS[q] ?? q]),
      ]),
    );
    const children: (HTMLElement | string)[] = [
      el('div', { class: 'matrix-grid' }, cells),
      el('p', { class: 'matrix-meta' }, [
        `${matrix.annotated} of ${matrix.dataset_size} instances have verdicts` +
          (matrix.partial ? ' (matrix is partial)' : ''),
      ]),
    ];
    if (matrix.metrics) {
      children.push(
        el('p', { class: 'matrix-metrics' }, [
          `M1 accuracy ${(matrix.metrics.m1_accuracy * 100).toFixed(2)}% | ` +
            `M2 reasonable+accurate ${(matrix.metrics.m2_ra_performance * 100).toFixed(2)}% | ` +
            `M4 attention accuracy ${(matrix.metrics.m4_attention_accuracy * 100).toFixed(2)}%`,
        ]),
      );
    }
    replaceChildrenOf(this.matrixBox, children);
  }

  private buildForm(): HTMLElement {
    const kind = el('select', { 'data-role': 'job-kind' });
    kind.append(el('option', { value: 'finetune' }, ['finetune']));
    kind.append(el('option', { value: 'evaluate' }, ['evaluate']));
    const condition = el('select', { 'data-role': 'job-condition' });
    for (const c of ['C1', 'C2', 'C3', 'C4']) {
      const opt = el('option', { value: c }, [c]);
      if (c === 'C4') opt.setAttribute('selected', '');
      condition.append(opt);
    }
    const epochs = el('input', { type: 'number', min: '1', value: '10', 'data-role': 'job-epochs' });
    const lr = el('input', {
      type: 'number',
      step: '0.001',
      min: '0',
      value: '0.01',
      'data-role': 'job-lr',
    });
    const submit = el('button', { type: 'submit', class: 'primary' }, ['Submit job']);
    const form = el('form', { class: 'job-form' }, [
      el('label', {}, ['kind ', kind]),
      el('label', {}, ['condition ', condition]),
      el('label', {}, ['epochs ', epochs]),
      el('label', {}, ['learning rate ', lr]),
      submit,
      this.formStatus,
    ]);
    form.addEventListener('submit', (ev) => {
      ev.preventDefault();
      void this.submit(kind.value, {
        condition: condition.value,
        epochs: Number(epochs.value),
        learning_rate: Number(lr.value),
      });
    });
    return form;
  }

  async submit(kind: string, config: Record<string, unknown>): Promise<void> {
    this.formStatus.textContent = '';
    try {
      const status = await this.api.submitJob(kind, config);
      this.jobs.set(status.job_id, status);
      this.renderJobs();
      this.startPolling();
      this.formStatus.textContent = `submitted ${status.job_id}`;
    } catch (err) {
      this.formStatus.textContent = describeError(err);
    }
  }

  /** One polling sweep over every job that has not finished yet. */
  async tick(): Promise<void> {
    const pending = Array.from(this.jobs.values()).filter(
      (j) => j.state === 'queued' || j.state === 'running',
    );
    let finished = false;
    await Promise.all(
      pending.map(async (job) => {
        try {
          const status = await this.api.getJob(job.job_id);
          if (status.state === 'done' || status.state === 'failed') finished = true;
          this.jobs.set(status.job_id, status);
        } catch {
          /* transient poll failure; the next sweep retries */
        }
      }),
    );
    this.renderJobs();
    if (finished) void this.refreshMatrix();
    if (!this.hasPending()) this.stopPolling();
  }

  private hasPending(): boolean {
    for (const job of this.jobs.values()) {
      if (job.state === 'queued' || job.state === 'running') return true;
    }
    return false;
  }

  startPolling(): void {
    if (this.timer !== null) return;
    this.timer = setInterval(() => void this.tick(), POLL_MS);
  }

  stopPolling(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  private renderJobs(): void {
    if (this.jobs.size === 0) {
      replaceChildrenOf(this.jobsBox, [
        el('p', { class: 'empty-state' }, ['No jobs submitted in this session.']),
      ]);
      return;
    }
    const rows = Array.from(this.jobs.values()).map((job) => this.jobRow(job));
    replaceChildrenOf(this.jobsBox, rows);
  }

  private jobRow(job: JobStatus): HTMLElement {
    const bar = el('div', { class: 'progress' }, [
      el('div', {
        class: 'progress-fill',
        style: `width: ${Math.round(job.progress * 100)}%`,
      }),
    ]);
    const activate = el(
      'button',
      { type: 'button', 'data-role': 'activate', 'data-job': job.job_id },
      ['Activate'],
    );
    // Activation only makes sense once the tuned parameters exist.
    if (job.state !== 'done') activate.setAttribute('disabled', '');
    activate.addEventListener('click', () => void this.activate(job.job_id));
    const row = el('div', { class: 'job-row', 'data-job-id': job.job_id }, [
      el('span', { class: 'job-id' }, [`${job.kind} ${job.job_id}`]),
      el('span', { class: `badge state-${job.state}` }, [job.state]),
      bar,
      activate,
    ]);
    if (job.error_message !== null) {
      // Shown exactly as the service reported it.
      row.append(el('pre', { class: 'job-error', 'data-role': 'job-error' }, [job.error_message]));
    }
    if (job.result_ref !== null) {
      row.append(el('span', { class: 'job-ref' }, [job.result_ref]));
    }
    return row;
  }

  async activate(jobId: string): Promise<void> {
    try {
      const res = await this.api.activateJob(jobId);
      this.formStatus.textContent = `activated model v${res.model_version}`;
      await this.refreshMatrix();
      this.callbacks.onActivated(res.model_version);
    } catch (err) {
      this.formStatus.textContent = describeError(err);
    }
  }

  /** Session-tracked jobs, for tests. */
  get trackedJobs(): readonly JobStatus[] {
    return Array.from(this.jobs.values());
  }
}

function describeError(err: unknown): string {
  if (err instanceof ApiError) return `error (${err.code}): ${err.message}`;
  return `error: ${String(err)}`;
}
