/**
 * Scenario state machine: edits mark the forecast stale, forecasts bind to
 * the protocol version they were requested for, and superseded responses
 * are discarded by request token.
 *
 * Scenario state is client-side only; the service's store holds models,
 * not explorations.
 */

import type { ApiClient } from './api.js';
import type {
  AlertMarker,
  ScenarioView,
  Segment,
  Thresholds,
  WhatIfResponse,
} from './types.js';
import { ProtocolEditor, discretize, stepToMinute } from './protocol.js';

/** Derive alert markers from a forecast's threshold crossings. */
export function alertsFromForecast(
  forecast: WhatIfResponse,
  thresholds: Thresholds,
  dtSeconds: number,
): AlertMarker[] {
  const alerts: AlertMarker[] = [];
  for (const [channel, stepIndex] of Object.entries(forecast.threshold_crossings)) {
    if (stepIndex === null || !(channel in thresholds)) continue;
    alerts.push({
      channel,
      stepIndex,
      minute: stepToMinute(stepIndex, dtSeconds),
      threshold: thresholds[channel],
    });
  }
  return alerts.sort((a, b) => a.stepIndex - b.stepIndex);
}

export class Scenario {
  private editor: ProtocolEditor;
  private protocolVersion = 0;
  private forecastVersion: number | null = null;
  private forecast: WhatIfResponse | null = null;
  private inflightToken = 0;
  thresholds: Thresholds;

  constructor(
    readonly name: string,
    private readonly api: ApiClient,
    private readonly modelId: string,
    private readonly channelNames: string[],
    private readonly dtSeconds: number,
    initialSegments: Segment[] = [],
    thresholds: Thresholds = {},
  ) {
    this.editor = new ProtocolEditor(initialSegments);
    this.thresholds = { ...thresholds };
  }

  /** Apply an edit; the forecast (if any) becomes stale. */
  editProtocol(segments: Segment[]): ScenarioView {
    this.editor.replace(segments);
    this.protocolVersion++;
    return this.view();
  }

  updateSegment(index: number, patch: Partial<Segment>): ScenarioView {
    this.editor.updateSegment(index, patch);
    this.protocolVersion++;
    return this.view();
  }

  undo(): ScenarioView {
    if (this.editor.canUndo) {
      this.editor.undo();
      this.protocolVersion++;
    }
    return this.view();
  }

  setThreshold(channel: string, value: number | null): ScenarioView {
    if (value === null) {
      delete this.thresholds[channel];
    } else {
      this.thresholds[channel] = value;
    }
    // thresholds change which crossings matter, so the forecast is stale
    this.protocolVersion++;
    return this.view();
  }

  /**
   * Request a forecast for the current protocol version. At most one
   * request is live per scenario: a later call supersedes earlier ones,
   * whose responses are dropped when they arrive.
   */
  async requestForecast(): Promise<ScenarioView> {
    const version = this.protocolVersion;
    const token = ++this.inflightToken;
    const wire = discretize(this.editor.segments, this.dtSeconds);
    const response = await this.api.whatIf(
      this.modelId,
      wire,
      Math.max(wire.rates.length, 1),
      this.thresholds,
      this.channelNames,
    );
    if (token !== this.inflightToken) {
      return this.view(); // superseded by a newer request
    }
    this.forecast = response;
    this.forecastVersion = version;
    return this.view();
  }

  view(): ScenarioView {
    const stale =
      this.forecast !== null && this.forecastVersion !== this.protocolVersion;
    return {
      name: this.name,
      segments: this.editor.segments,
      protocolVersion: this.protocolVersion,
      forecastVersion: this.forecastVersion,
      forecast: this.forecast,
      thresholds: { ...this.thresholds },
      alerts: this.forecast
        ? alertsFromForecast(this.forecast, this.thresholds, this.dtSeconds)
        : [],
      staleForecast: stale,
      dirty: this.forecastVersion !== this.protocolVersion,
    };
  }
}
