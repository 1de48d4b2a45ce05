/**
 * Thin client for the model service's HTTP API — the UI's only backend.
 */

import type { ModelSummary, Thresholds, WhatIfResponse, WireProtocol } from './types.js';

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ ok: boolean; status: number; json(): Promise<unknown> }>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  private async request<T>(path: string, method: string, body?: unknown): Promise<T> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: { 'Content-Type': 'application/json' },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = (await res.json()) as T & { detail?: string };
    if (!res.ok) {
      throw new ApiError(res.status, payload.detail ?? `HTTP ${res.status}`);
    }
    return payload;
  }

  async listModels(): Promise<string[]> {
    const body = await this.request<{ models: string[] }>('/models', 'GET');
    return body.models;
  }

  async getModel(modelId: string): Promise<ModelSummary> {
    return this.request<ModelSummary>(`/models/${modelId}`, 'GET');
  }

  async whatIf(
    modelId: string,
    protocol: WireProtocol,
    horizon: number,
    thresholds: Thresholds,
    channelNames: string[],
  ): Promise<WhatIfResponse> {
    return this.request<WhatIfResponse>(`/models/${modelId}/whatif`, 'POST', {
      schema_version: 1,
      protocol,
      horizon,
      thresholds,
      channel_names: channelNames,
    });
  }
}
