import { describe, expect, it } from 'vitest';

import { ApiClient, ApiError, FetchLike } from '../src/api';

function fakeFetch(status: number, payload: unknown): { fetch: FetchLike; seen: { url: string; body?: string }[] } {
  const seen: { url: string; body?: string }[] = [];
  const fetch: FetchLike = async (url, init) => {
    seen.push({ url, body: init?.body });
    return {
      ok: status >= 200 && status < 300,
      status,
      json: async () => payload,
    };
  };
  return { fetch, seen };
}

describe('ApiClient', () => {
  it('lists models', async () => {
    const { fetch, seen } = fakeFetch(200, { models: ['m1', 'm2'] });
    const api = new ApiClient('http://svc', fetch);
    expect(await api.listModels()).toEqual(['m1', 'm2']);
    expect(seen[0].url).toBe('http://svc/models');
  });

  it('posts what-if requests with the wire schema', async () => {
    const { fetch, seen } = fakeFetch(200, { channels: [] });
    const api = new ApiClient('', fetch);
    await api.whatIf('m1', { dt: 15, rates: [1, 2] }, 2, { BPsys: 100 }, ['BPsys']);
    expect(seen[0].url).toBe('/models/m1/whatif');
    const body = JSON.parse(seen[0].body!);
    expect(body).toEqual({
      schema_version: 1,
      protocol: { dt: 15, rates: [1, 2] },
      horizon: 2,
      thresholds: { BPsys: 100 },
      channel_names: ['BPsys'],
    });
  });

  it('raises ApiError with the service detail on non-2xx', async () => {
    const { fetch } = fakeFetch(400, { detail: 'unknown channel: HR' });
    const api = new ApiClient('', fetch);
    await expect(api.listModels()).rejects.toThrowError(ApiError);
    await expect(api.getModel('x')).rejects.toThrow('unknown channel: HR');
  });
});
