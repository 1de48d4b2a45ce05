/**
 * Segment editing and discretization.
 *
 * Segments live in minutes; the wire format is a step grid at the model's
 * dt (seconds). The editor keeps a history stack so undo restores the prior
 * segment list exactly.
 */

import type { Segment, WireProtocol } from './types.js';

export class SegmentError extends Error {}

/** Validate a segment list: finite fields, rates >= 0, no overlaps. */
export function validateSegments(segments: Segment[]): void {
  for (const s of segments) {
    if (!Number.isFinite(s.startMinute) || s.startMinute < 0) {
      throw new SegmentError(`bad segment start: ${s.startMinute}`);
    }
    if (!Number.isFinite(s.durationMinutes) || s.durationMinutes <= 0) {
      throw new SegmentError(`bad segment duration: ${s.durationMinutes}`);
    }
    if (!Number.isFinite(s.rate) || s.rate < 0) {
      throw new SegmentError(`segment rate must be >= 0, got ${s.rate}`);
    }
  }
  const sorted = [...segments].sort((a, b) => a.startMinute - b.startMinute);
  for (let i = 1; i < sorted.length; i++) {
    const prevEnd = sorted[i - 1].startMinute + sorted[i - 1].durationMinutes;
    if (sorted[i].startMinute < prevEnd - 1e-9) {
      throw new SegmentError(
        `segments overlap at minute ${sorted[i].startMinute}`,
      );
    }
  }
}

/** Total scenario length in minutes (end of the last segment). */
export function totalMinutes(segments: Segment[]): number {
  let end = 0;
  for (const s of segments) {
    end = Math.max(end, s.startMinute + s.durationMinutes);
  }
  return end;
}

/**
 * Re-discretize segments onto the dt grid. Steps not covered by any segment
 * get rate 0. Step t covers the half-open interval [t*dt, (t+1)*dt) minutes.
 */
export function discretize(segments: Segment[], dtSeconds: number): WireProtocol {
  if (!(dtSeconds > 0)) {
    throw new SegmentError(`dt must be positive, got ${dtSeconds}`);
  }
  validateSegments(segments);
  const dtMin = dtSeconds / 60;
  const steps = Math.round(totalMinutes(segments) / dtMin);
  const rates = new Array<number>(steps).fill(0);
  for (const s of segments) {
    const first = Math.round(s.startMinute / dtMin);
    const last = Math.round((s.startMinute + s.durationMinutes) / dtMin);
    for (let t = first; t < last && t < steps; t++) {
      rates[t] = s.rate;
    }
  }
  return { dt: dtSeconds, rates };
}

/** Convert a step index to minutes for the chart's time axis. */
export function stepToMinute(stepIndex: number, dtSeconds: number): number {
  return (stepIndex * dtSeconds) / 60;
}

/**
 * Segment list editor with an undo history. Edits are validated before they
 * are accepted; a rejected edit leaves the current state untouched.
 */
export class ProtocolEditor {
  private history: Segment[][] = [];
  private current: Segment[];

  constructor(initial: Segment[] = []) {
    validateSegments(initial);
    this.current = cloneSegments(initial);
  }

  get segments(): Segment[] {
    return cloneSegments(this.current);
  }

  /** Replace the full segment list (e.g. after a drag). */
  replace(segments: Segment[]): Segment[] {
    validateSegments(segments);
    this.history.push(this.current);
    this.current = cloneSegments(segments);
    return this.segments;
  }

  /** Update one segment by index. */
  updateSegment(index: number, patch: Partial<Segment>): Segment[] {
    if (index < 0 || index >= this.current.length) {
      throw new SegmentError(`no segment at index ${index}`);
    }
    const next = cloneSegments(this.current);
    next[index] = { ...next[index], ...patch };
    return this.replace(next);
  }

  /** Undo the last accepted edit; no-op when the history is empty. */
  undo(): Segment[] {
    const prev = this.history.pop();
    if (prev !== undefined) {
      this.current = prev;
    }
    return this.segments;
  }

  get canUndo(): boolean {
    return this.history.length > 0;
  }
}

function cloneSegments(segments: Segment[]): Segment[] {
  return segments.map((s) => ({ ...s }));
}
