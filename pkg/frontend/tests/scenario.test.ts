import { describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api';
import { Scenario, alertsFromForecast } from '../src/scenario';
import { chartFromScenario, compareScenarios } from '../src/chart';
import type { Segment, WhatIfResponse } from '../src/types';

const SEGMENTS: Segment[] = [
  { startMinute: 0, durationMinutes: 15, rate: 2 },
  { startMinute: 15, durationMinutes: 15, rate: 5 },
];

/** Deterministic fake service echoing shapes derived from the request. */
function fakeForecast(T: number, crossing: number | null): WhatIfResponse {
  const channels = ['BPsys', 'BPdia', 'BIS'];
  const row = (base: number) => Array.from({ length: T }, (_, t) => base + t * 0.1);
  return {
    schema_version: 1,
    channels,
    targets: Array.from({ length: T }, (_, t) => t),
    means: Array.from({ length: T }, (_, t) => [120 + t * 0.1, 70, 50]),
    variances: Array.from({ length: T }, () => [4, 4, 4]),
    band_lower: Array.from({ length: T }, (_, t) => [116 + t * 0.1, 66, 46]),
    band_upper: Array.from({ length: T }, (_, t) => [124 + t * 0.1, 74, 54]),
    threshold_crossings: { BPsys: crossing },
    config_hash: 'abc123',
  };
}

interface Call {
  protocolLength: number;
  thresholds: Record<string, number>;
}

function makeClient(
  respond: (call: Call, n: number) => WhatIfResponse | Promise<WhatIfResponse>,
) {
  const calls: Call[] = [];
  const client = {
    whatIf: async (
      _model: string,
      protocol: { rates: number[] },
      _horizon: number,
      thresholds: Record<string, number>,
    ) => {
      const call = { protocolLength: protocol.rates.length, thresholds };
      calls.push(call);
      return respond(call, calls.length);
    },
  } as unknown as ApiClient;
  return { client, calls };
}

function makeScenario(client: ApiClient, thresholds = { BPsys: 125 }) {
  return new Scenario('A', client, 'model1', ['BPsys', 'BPdia', 'BIS'], 15, SEGMENTS, thresholds);
}

describe('edit/forecast lifecycle', () => {
  it('starts dirty, becomes clean after a forecast, stale after an edit', async () => {
    const { client } = makeClient((c) => fakeForecast(c.protocolLength, 10));
    const scenario = makeScenario(client);
    expect(scenario.view().dirty).toBe(true);
    expect(scenario.view().staleForecast).toBe(false); // nothing to be stale

    let view = await scenario.requestForecast();
    expect(view.dirty).toBe(false);
    expect(view.staleForecast).toBe(false);
    expect(view.forecast?.config_hash).toBe('abc123');

    view = scenario.updateSegment(0, { rate: 3 });
    expect(view.dirty).toBe(true);
    expect(view.staleForecast).toBe(true); // chart keeps showing old data
    expect(view.forecast).not.toBeNull();

    view = await scenario.requestForecast();
    expect(view.staleForecast).toBe(false);
  });

  it('sends the discretized protocol for the edited segments', async () => {
    const { client, calls } = makeClient((c) => fakeForecast(c.protocolLength, null));
    const scenario = makeScenario(client);
    await scenario.requestForecast();
    expect(calls[0].protocolLength).toBe(120); // 30 min at 15 s
    scenario.editProtocol([{ startMinute: 0, durationMinutes: 15, rate: 1 }]);
    await scenario.requestForecast();
    expect(calls[1].protocolLength).toBe(60);
  });

  it('threshold changes mark the forecast stale and pass through to the API', async () => {
    const { client, calls } = makeClient((c) => fakeForecast(c.protocolLength, null));
    const scenario = makeScenario(client);
    await scenario.requestForecast();
    const view = scenario.setThreshold('BIS', 40);
    expect(view.staleForecast).toBe(true);
    await scenario.requestForecast();
    expect(calls[1].thresholds).toEqual({ BPsys: 125, BIS: 40 });
  });

  it('a superseded in-flight response is discarded', async () => {
    let release1: (() => void) | null = null;
    const { client } = makeClient(async (c, n) => {
      if (n === 1) {
        await new Promise<void>((resolve) => {
          release1 = resolve;
        });
        return fakeForecast(c.protocolLength, 1); // stale answer
      }
      return fakeForecast(c.protocolLength, 99); // current answer
    });
    const scenario = makeScenario(client);
    const first = scenario.requestForecast();
    const second = scenario.requestForecast();
    release1!();
    await Promise.all([first, second]);
    expect(scenario.view().forecast?.threshold_crossings.BPsys).toBe(99);
  });
});

describe('alerts and chart model', () => {
  it('builds alert badges with minutes from the dt grid', () => {
    const forecast = fakeForecast(120, 40);
    const alerts = alertsFromForecast(forecast, { BPsys: 125 }, 15);
    expect(alerts).toHaveLength(1);
    expect(alerts[0]).toMatchObject({ channel: 'BPsys', stepIndex: 40, minute: 10, threshold: 125 });
  });

  it('no crossing means zero badges', () => {
    const forecast = fakeForecast(120, null);
    expect(alertsFromForecast(forecast, { BPsys: 1e9 }, 15)).toHaveLength(0);
  });

  it('rendered mean series equals the service response values', async () => {
    const { client } = makeClient((c) => fakeForecast(c.protocolLength, 5));
    const scenario = makeScenario(client);
    const view = await scenario.requestForecast();
    const chart = chartFromScenario(view, 15)!;
    const bp = chart.series.find((s) => s.channel === 'BPsys')!;
    expect(bp.mean).toEqual(view.forecast!.means.map((row) => row[0]));
    expect(bp.bandLower).toEqual(view.forecast!.band_lower.map((row) => row[0]));
    expect(bp.bandUpper).toEqual(view.forecast!.band_upper.map((row) => row[0]));
    expect(bp.minutes[1]).toBeCloseTo(0.25);
    expect(bp.threshold).toBe(125);
    expect(bp.badges).toHaveLength(1);
  });

  it('comparison puts both scenarios on shared per-channel axes', async () => {
    const { client } = makeClient((c) => fakeForecast(c.protocolLength, null));
    const a = makeScenario(client);
    const b = makeScenario(client, {});
    const [va, vb] = [await a.requestForecast(), await b.requestForecast()];
    const rows = compareScenarios([chartFromScenario(va, 15)!, chartFromScenario(vb, 15)!]);
    const bp = rows.find((r) => r.channel === 'BPsys')!;
    expect(bp.series).toHaveLength(2);
    expect(bp.yMin).toBeLessThanOrEqual(116);
    expect(bp.yMax).toBeGreaterThanOrEqual(125); // threshold included in range
  });
});
