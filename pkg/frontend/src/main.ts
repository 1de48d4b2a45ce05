/**
 * DOM wiring for the what-if protocol explorer.
 *
 * One scenario per column; segments are edited through number inputs, the
 * forecast chart is rendered as inline SVG from the chart model. Service
 * errors surface as non-blocking notices and the chart keeps its last good
 * state.
 */

import { ApiClient, ApiError } from './api.js';
import { Scenario } from './scenario.js';
import { ChartModel, chartFromScenario, ChannelSeries } from './chart.js';
import type { Segment } from './types.js';

const DEFAULT_SEGMENTS: Segment[] = [
  { startMinute: 0, durationMinutes: 15, rate: 2 },
  { startMinute: 15, durationMinutes: 15, rate: 5 },
  { startMinute: 30, durationMinutes: 15, rate: 2 },
];

const CHART_W = 520;
const CHART_H = 140;

function svgPath(xs: number[], ys: number[]): string {
  return xs.map((x, i) => `${i === 0 ? 'M' : 'L'}${x.toFixed(1)},${ys[i].toFixed(1)}`).join(' ');
}

function renderChannel(s: ChannelSeries, xMax: number): string {
  let yMin = Math.min(...s.bandLower);
  let yMax = Math.max(...s.bandUpper);
  if (s.threshold !== null) {
    yMin = Math.min(yMin, s.threshold);
    yMax = Math.max(yMax, s.threshold);
  }
  const pad = 0.05 * (yMax - yMin || 1);
  yMin -= pad;
  yMax += pad;
  const px = (m: number) => (m / xMax) * CHART_W;
  const py = (v: number) => CHART_H - ((v - yMin) / (yMax - yMin)) * CHART_H;
  const xs = s.minutes.map(px);
  const band =
    svgPath(xs, s.bandUpper.map(py)) +
    ' ' +
    svgPath([...xs].reverse(), [...s.bandLower].reverse().map(py)).replace('M', 'L') +
    ' Z';
  const thresholdLine =
    s.threshold === null
      ? ''
      : `<line x1="0" x2="${CHART_W}" y1="${py(s.threshold)}" y2="${py(s.threshold)}"
           stroke="#c62828" stroke-dasharray="4 3"/>`;
  const badges = s.badges
    .map(
      (b) => `<g class="badge" transform="translate(${px(b.minute)},${py(b.threshold)})">
        <circle r="6" fill="#c62828"/>
        <title>${b.channel} crosses ${b.threshold} at ${b.minute.toFixed(1)} min</title>
      </g>`,
    )
    .join('');
  return `<figure class="channel" data-channel="${s.channel}">
    <figcaption>${s.channel}</figcaption>
    <svg viewBox="0 0 ${CHART_W} ${CHART_H}" width="${CHART_W}" height="${CHART_H}">
      <path d="${band}" fill="#90caf9" opacity="0.4"/>
      <path d="${svgPath(xs, s.mean.map(py))}" fill="none" stroke="#1565c0" stroke-width="1.5"/>
      ${thresholdLine}${badges}
    </svg>
  </figure>`;
}

export function renderChart(container: HTMLElement, chart: ChartModel | null): void {
  if (chart === null) {
    container.innerHTML = '<p class="empty">No forecast yet.</p>';
    return;
  }
  const xMax = Math.max(...chart.series.flatMap((s) => s.minutes), 1);
  const staleBanner = chart.stale
    ? '<p class="stale-banner">Forecast is stale — protocol edited since last refresh.</p>'
    : '';
  container.innerHTML = staleBanner + chart.series.map((s) => renderChannel(s, xMax)).join('');
}

function notice(el: HTMLElement, text: string): void {
  el.textContent = text;
  el.classList.toggle('visible', text.length > 0);
}

export async function boot(root: HTMLElement): Promise<void> {
  const api = new ApiClient('');
  const noticeEl = root.querySelector('#notice') as HTMLElement;
  const chartEl = root.querySelector('#chart') as HTMLElement;
  const segmentsEl = root.querySelector('#segments') as HTMLElement;
  const modelSel = root.querySelector('#model') as HTMLSelectElement;

  let models: string[] = [];
  try {
    models = await api.listModels();
  } catch (err) {
    notice(noticeEl, `Cannot reach service: ${(err as Error).message}`);
    return;
  }
  if (models.length === 0) {
    notice(noticeEl, 'No fitted models in the store; fit one via the CLI or API first.');
    return;
  }
  modelSel.innerHTML = models.map((m) => `<option>${m}</option>`).join('');
  const model = await api.getModel(models[0]);
  const dt = model.params.dt;
  const channels = ['BPsys', 'BPdia', 'BIS'];

  const scenario = new Scenario('A', api, model.id, channels, dt, DEFAULT_SEGMENTS, {
    BPsys: 100,
  });

  const redraw = () => {
    const view = scenario.view();
    segmentsEl.innerHTML = view.segments
      .map(
        (s, i) => `<div class="segment" data-index="${i}">
          start <input type="number" data-field="startMinute" value="${s.startMinute}"> min,
          for <input type="number" data-field="durationMinutes" value="${s.durationMinutes}"> min,
          rate <input type="number" step="0.5" data-field="rate" value="${s.rate}">
        </div>`,
      )
      .join('');
    renderChart(chartEl, chartFromScenario(view, dt));
  };

  segmentsEl.addEventListener('change', (ev) => {
    const input = ev.target as HTMLInputElement;
    const seg = input.closest('.segment') as HTMLElement;
    if (!seg) return;
    try {
      scenario.updateSegment(Number(seg.dataset.index), {
        [input.dataset.field as keyof Segment]: Number(input.value),
      });
      notice(noticeEl, '');
    } catch (err) {
      notice(noticeEl, (err as Error).message);
    }
    redraw();
  });

  (root.querySelector('#undo') as HTMLButtonElement).addEventListener('click', () => {
    scenario.undo();
    redraw();
  });

  (root.querySelector('#forecast') as HTMLButtonElement).addEventListener('click', async () => {
    try {
      await scenario.requestForecast();
      notice(noticeEl, '');
    } catch (err) {
      const msg = err instanceof ApiError ? `service error ${err.status}: ${err.message}` : String(err);
      notice(noticeEl, msg); // chart keeps its last good state
    }
    redraw();
  });

  redraw();
}

if (typeof document !== 'undefined' && document.getElementById('app')) {
  void boot(document.getElementById('app') as HTMLElement);
}
