import { describe, expect, it } from 'vitest';

import { ApiClient, ApiError, type InstancePage, type InstanceSummary } from '../src/api.js';

function jsonResponse(payload: unknown, status = 200): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { 'content-type': 'application/json' },
  });
}

function summary(id: string): InstanceSummary {
  return {
    id,
    split: 'validation',
    label: 0,
    prediction: 1,
    correct: false,
    quadrant: 'UIA',
    annotated: true,
    has_mask: false,
    likert: null,
  };
}

describe('request construction', () => {
  it('maps the gallery filter onto query parameters', async () => {
    const urls: string[] = [];
    const client = new ApiClient('http://svc', async (input) => {
      urls.push(String(input));
      return jsonResponse({ items: [], page: 1, page_size: 24, total: 0, pages: 1, model_version: 1 });
    });
    await client.listInstances({ split: 'test', quadrant: 'UA', annotated: true }, 2, 10);
    expect(urls[0]).toBe(
      'http://svc/api/instances?split=test&quadrant=UA&annotated=true&page=2&page_size=10',
    );
    await client.listInstances();
    expect(urls[1]).toBe('http://svc/api/instances?page=1&page_size=24');
  });

  it('posts yes/no strings for verdicts', async () => {
    let body: unknown;
    const client = new ApiClient('', async (_url, init) => {
      body = JSON.parse(String(init?.body));
      return jsonResponse({ revision: 1, quadrant: 'RA' });
    });
    await client.postVerdict('validation-00003', true, false, 'annotator-1');
    expect(body).toEqual({ q1: 'yes', q2: 'no', annotator_id: 'annotator-1' });
  });
});

describe('error handling', () => {
  it('surfaces the service error envelope', async () => {
    const client = new ApiClient('', async () =>
      jsonResponse({ code: 'bad_request', message: 'rating must be an integer in 1..5' }, 400),
    );
    const err = await client.postLikert('x', 9, 'a').catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(400);
    expect((err as ApiError).code).toBe('bad_request');
    expect((err as ApiError).message).toBe('rating must be an integer in 1..5');
  });

  it('wraps transport failures as unreachable', async () => {
    const client = new ApiClient('', async () => {
      throw new TypeError('fetch failed');
    });
    const err = await client.getMatrix().catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).code).toBe('unreachable');
  });
});

describe('pagination traversal', () => {
  it('visits every page once with no duplicate instances', async () => {
    const ids = Array.from({ length: 23 }, (_v, i) => `validation-${String(i).padStart(5, '0')}`);
    const pageSize = 5;
    const pages = Math.ceil(ids.length / pageSize);
    const client = new ApiClient('', async (input) => {
      const url = new URL(String(input), 'http://local');
      const page = Number(url.searchParams.get('page'));
      const slice = ids.slice((page - 1) * pageSize, page * pageSize);
      const payload: InstancePage = {
        items: slice.map(summary),
        page,
        page_size: pageSize,
        total: ids.length,
        pages,
        model_version: 1,
      };
      return jsonResponse(payload);
    });

    const seen: string[] = [];
    let pageCount = 0;
    for await (const page of client.allPages({}, pageSize)) {
      pageCount += 1;
      seen.push(...page.items.map((item) => item.id));
    }
    expect(pageCount).toBe(pages);
    expect(seen).toEqual(ids);
    expect(new Set(seen).size).toBe(ids.length);
  });
});
