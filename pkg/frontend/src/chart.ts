/**
 * Chart model: converts service responses into drawable per-channel series.
 * Pure data transformation — time axis in minutes, values verbatim from the
 * service (single source of truth).
 */

import type { AlertMarker, ScenarioView, WhatIfResponse } from './types.js';
import { stepToMinute } from './protocol.js';

export interface ChannelSeries {
  channel: string;
  /** x-coordinates in minutes, one per forecast step. */
  minutes: number[];
  mean: number[];
  bandLower: number[];
  bandUpper: number[];
  threshold: number | null;
  badges: AlertMarker[];
}

export interface ChartModel {
  scenarioName: string;
  stale: boolean;
  series: ChannelSeries[];
}

function column(rows: number[][], j: number): number[] {
  return rows.map((row) => row[j]);
}

export function chartFromForecast(
  name: string,
  forecast: WhatIfResponse,
  thresholds: Record<string, number>,
  alerts: AlertMarker[],
  dtSeconds: number,
  stale: boolean,
): ChartModel {
  const minutes = forecast.targets.map((t) => stepToMinute(t, dtSeconds));
  const series = forecast.channels.map((channel, j) => ({
    channel,
    minutes,
    mean: column(forecast.means, j),
    bandLower: column(forecast.band_lower, j),
    bandUpper: column(forecast.band_upper, j),
    threshold: channel in thresholds ? thresholds[channel] : null,
    badges: alerts.filter((a) => a.channel === channel),
  }));
  return { scenarioName: name, stale, series };
}

export function chartFromScenario(view: ScenarioView, dtSeconds: number): ChartModel | null {
  if (view.forecast === null) return null;
  return chartFromForecast(
    view.name,
    view.forecast,
    view.thresholds,
    view.alerts,
    dtSeconds,
    view.staleForecast,
  );
}

/**
 * Side-by-side comparison: both scenarios' channel series on shared axes.
 * Returns the per-channel union with a shared y-range per channel.
 */
export interface ComparisonRow {
  channel: string;
  series: { scenario: string; data: ChannelSeries }[];
  yMin: number;
  yMax: number;
}

export function compareScenarios(charts: ChartModel[]): ComparisonRow[] {
  const byChannel = new Map<string, { scenario: string; data: ChannelSeries }[]>();
  for (const chart of charts) {
    for (const s of chart.series) {
      const list = byChannel.get(s.channel) ?? [];
      list.push({ scenario: chart.scenarioName, data: s });
      byChannel.set(s.channel, list);
    }
  }
  const rows: ComparisonRow[] = [];
  for (const [channel, series] of byChannel) {
    let yMin = Infinity;
    let yMax = -Infinity;
    for (const { data } of series) {
      for (const v of data.bandLower) yMin = Math.min(yMin, v);
      for (const v of data.bandUpper) yMax = Math.max(yMax, v);
      if (data.threshold !== null) {
        yMin = Math.min(yMin, data.threshold);
        yMax = Math.max(yMax, data.threshold);
      }
    }
    rows.push({ channel, series, yMin, yMax });
  }
  return rows;
}
