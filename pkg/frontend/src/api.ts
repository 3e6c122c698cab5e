/**
 * Typed client for the annotation service. Every number shown in the UI has
 * to come from these endpoints; nothing is recomputed client-side.
 */

export type Split = 'train' | 'validation' | 'test';
export type Quadrant = 'RA' | 'UA' | 'RIA' | 'UIA';

export interface GalleryFilter {
  split?: Split;
  quadrant?: Quadrant;
  annotated?: boolean;
}

export interface InstanceSummary {
  id: string;
  split: Split;
  label: number;
  prediction: number;
  correct: boolean;
  quadrant: Quadrant | null;
  annotated: boolean;
  has_mask: boolean;
  likert: number | null;
}

export interface InstancePage {
  items: InstanceSummary[];
  page: number;
  page_size: number;
  total: number;
  pages: number;
  model_version: number;
}

export interface InstanceDetail extends InstanceSummary {
  width: number;
  height: number;
  probabilities: number[];
  image_png: string;
  overlay_png: string;
  attention_grid: number[][];
  annotations: {
    verdict: { q1: 'yes' | 'no'; q2: 'yes' | 'no' } | null;
    mask_rle: number[] | null;
    likert: number | null;
  };
  model_version: number;
}

export interface MatrixView {
  counts: Record<Quadrant, number>;
  ids: Record<Quadrant, string[]>;
  total: number;
  annotated: number;
  dataset_size: number;
  partial: boolean;
  metrics: {
    m1_accuracy: number;
    m2_ra_performance: number;
    m4_attention_accuracy: number;
  } | null;
}

export interface JobStatus {
  job_id: string;
  kind: string;
  state: 'queued' | 'running' | 'done' | 'failed';
  progress: number;
  result_ref: string | null;
  error_message: string | null;
}

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.name = 'ApiError';
    this.status = status;
    this.code = code;
  }
}

export class ApiClient {
  private readonly baseUrl: string;
  private readonly fetchFn: typeof fetch;

  constructor(baseUrl = '', fetchFn: typeof fetch = globalThis.fetch.bind(globalThis)) {
    this.baseUrl = baseUrl.replace(/\/$/, '');
    this.fetchFn = fetchFn;
  }

  listInstances(filter: GalleryFilter = {}, page = 1, pageSize = 24): Promise<InstancePage> {
    const params = new URLSearchParams();
    if (filter.split !== undefined) params.set('split', filter.split);
    if (filter.quadrant !== undefined) params.set('quadrant', filter.quadrant);
    if (filter.annotated !== undefined) params.set('annotated', String(filter.annotated));
    params.set('page', String(page));
    params.set('page_size', String(pageSize));
    return this.request(`/api/instances?${params.toString()}`);
  }

  getInstance(id: string): Promise<InstanceDetail> {
    return this.request(`/api/instances/${encodeURIComponent(id)}`);
  }

  postVerdict(
    id: string,
    q1: boolean,
    q2: boolean,
    annotatorId: string,
  ): Promise<{ revision: number; quadrant: Quadrant }> {
    return this.request(`/api/instances/${encodeURIComponent(id)}/verdict`, {
      q1: q1 ? 'yes' : 'no',
      q2: q2 ? 'yes' : 'no',
      annotator_id: annotatorId,
    });
  }

  postMask(id: string, rle: number[], annotatorId: string): Promise<{ revision: number }> {
    return this.request(`/api/instances/${encodeURIComponent(id)}/mask`, {
      mask_rle: rle,
      annotator_id: annotatorId,
    });
  }

  postLikert(id: string, rating: number, annotatorId: string): Promise<{ revision: number }> {
    return this.request(`/api/instances/${encodeURIComponent(id)}/likert`, {
      rating,
      annotator_id: annotatorId,
    });
  }

  getMatrix(): Promise<MatrixView> {
    return this.request('/api/matrix');
  }

  submitJob(kind: string, config: Record<string, unknown>): Promise<JobStatus> {
    return this.request('/api/jobs', { kind, config });
  }

  getJob(jobId: string): Promise<JobStatus> {
    return this.request(`/api/jobs/${encodeURIComponent(jobId)}`);
  }

  activateJob(jobId: string): Promise<{ model_version: number }> {
    return this.request('/api/model/activate', { job_id: jobId });
  }

  /** Walk every gallery page in order; used by tests and bulk views. */
  async *allPages(filter: GalleryFilter = {}, pageSize = 24): AsyncGenerator<InstancePage> {
    let page = 1;
    for (;;) {
      const result = await this.listInstances(filter, page, pageSize);
      yield result;
      if (page >= result.pages) return;
      page += 1;
    }
  }

  private async request<T>(path: string, body?: unknown): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, {
        method: body === undefined ? 'GET' : 'POST',
        headers: body === undefined ? undefined : { 'content-type': 'application/json' },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new ApiError(0, 'unreachable', `service unreachable: ${String(err)}`);
    }
    if (!response.ok) {
      let code = 'http_error';
      let message = `HTTP ${response.status}`;
      try {
        const payload = (await response.json()) as { code?: string; message?: string };
        if (payload.code) code = payload.code;
        if (payload.message) message = payload.message;
      } catch {
        /* non-JSON error body; keep the generic message */
      }
      throw new ApiError(response.status, code, message);
    }
    return (await response.json()) as T;
  }
}
