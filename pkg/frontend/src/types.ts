/**
 * Shared types for the what-if protocol explorer.
 *
 * Every displayed number originates from a service response; the client
 * performs no numerical modeling of its own.
 */

/** One editable piece of a piecewise-constant infusion protocol. */
export interface Segment {
  /** Start time in minutes from the beginning of the scenario. */
  startMinute: number;
  /** Duration in minutes; must be positive. */
  durationMinutes: number;
  /** Infusion rate; must be >= 0. */
  rate: number;
}

/** Wire format of a protocol: step grid at a fixed dt (seconds). */
export interface WireProtocol {
  dt: number;
  rates: number[];
}

/** Per-channel forecast series as returned by POST /models/{id}/whatif. */
export interface WhatIfResponse {
  schema_version: number;
  channels: string[];
  targets: number[];
  means: number[][];
  variances: number[][];
  band_lower: number[][];
  band_upper: number[][];
  threshold_crossings: Record<string, number | null>;
  config_hash: string;
}

/** Model record summary from GET /models/{id}. */
export interface ModelSummary {
  id: string;
  family: string;
  params: { dt: number; [key: string]: unknown };
}

/** Threshold settings per channel name. */
export type Thresholds = Record<string, number>;

/** Alert marker rendered as a badge on the chart. */
export interface AlertMarker {
  channel: string;
  /** Step index of the first threshold crossing. */
  stepIndex: number;
  /** Same instant in minutes (chart axis convention). */
  minute: number;
  threshold: number;
}

/**
 * A named scenario: candidate protocol plus the forecast that was computed
 * for a specific protocol version. `staleForecast` means the protocol was
 * edited after the forecast was requested.
 */
export interface ScenarioView {
  name: string;
  segments: Segment[];
  /** Monotonic version counter bumped on every accepted edit. */
  protocolVersion: number;
  /** Version the current forecast corresponds to, or null if none. */
  forecastVersion: number | null;
  forecast: WhatIfResponse | null;
  thresholds: Thresholds;
  alerts: AlertMarker[];
  staleForecast: boolean;
  /** True when there are edits not yet reflected in any forecast. */
  dirty: boolean;
}
