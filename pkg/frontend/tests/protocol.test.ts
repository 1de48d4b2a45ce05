import { describe, expect, it } from 'vitest';

import {
  ProtocolEditor,
  SegmentError,
  discretize,
  stepToMinute,
  totalMinutes,
  validateSegments,
} from '../src/protocol';
import type { Segment } from '../src/types';

const THREE_BLOCKS: Segment[] = [
  { startMinute: 0, durationMinutes: 15, rate: 2 },
  { startMinute: 15, durationMinutes: 15, rate: 5 },
  { startMinute: 30, durationMinutes: 15, rate: 2 },
];

describe('validateSegments', () => {
  it('accepts adjacent non-overlapping segments', () => {
    expect(() => validateSegments(THREE_BLOCKS)).not.toThrow();
  });

  it('rejects overlapping segments', () => {
    const overlapping = [
      { startMinute: 0, durationMinutes: 20, rate: 1 },
      { startMinute: 15, durationMinutes: 10, rate: 2 },
    ];
    expect(() => validateSegments(overlapping)).toThrow(SegmentError);
  });

  it('rejects negative rates and non-positive durations', () => {
    expect(() =>
      validateSegments([{ startMinute: 0, durationMinutes: 10, rate: -1 }]),
    ).toThrow(SegmentError);
    expect(() =>
      validateSegments([{ startMinute: 0, durationMinutes: 0, rate: 1 }]),
    ).toThrow(SegmentError);
  });

  it('is order-independent', () => {
    expect(() => validateSegments([...THREE_BLOCKS].reverse())).not.toThrow();
  });
});

describe('discretize', () => {
  it('maps 3 segments of 15 min at dt=15s to a 180-step protocol', () => {
    const wire = discretize(THREE_BLOCKS, 15);
    expect(wire.rates).toHaveLength(180);
    expect(wire.dt).toBe(15);
    expect(wire.rates[0]).toBe(2);
    expect(wire.rates[60]).toBe(5);
    expect(wire.rates[119]).toBe(5);
    expect(wire.rates[120]).toBe(2);
    expect(wire.rates[179]).toBe(2);
  });

  it('zeroes a region when a segment rate is dragged to 0', () => {
    const edited = THREE_BLOCKS.map((s, i) => (i === 1 ? { ...s, rate: 0 } : s));
    const wire = discretize(edited, 15);
    for (let t = 60; t < 120; t++) expect(wire.rates[t]).toBe(0);
    expect(wire.rates[0]).toBe(2);
  });

  it('fills gaps between segments with zero rate', () => {
    const gappy: Segment[] = [
      { startMinute: 0, durationMinutes: 5, rate: 3 },
      { startMinute: 10, durationMinutes: 5, rate: 4 },
    ];
    const wire = discretize(gappy, 30);
    expect(wire.rates).toHaveLength(30);
    expect(wire.rates[9]).toBe(3);
    expect(wire.rates[10]).toBe(0);
    expect(wire.rates[19]).toBe(0);
    expect(wire.rates[20]).toBe(4);
  });

  it('rejects non-positive dt', () => {
    expect(() => discretize(THREE_BLOCKS, 0)).toThrow(SegmentError);
  });
});

describe('time axis helpers', () => {
  it('converts step indices to minutes using dt', () => {
    expect(stepToMinute(0, 15)).toBe(0);
    expect(stepToMinute(60, 15)).toBe(15);
    expect(stepToMinute(4, 30)).toBe(2);
  });

  it('computes total scenario length', () => {
    expect(totalMinutes(THREE_BLOCKS)).toBe(45);
    expect(totalMinutes([])).toBe(0);
  });
});

describe('ProtocolEditor', () => {
  it('accepts valid edits and exposes copies', () => {
    const ed = new ProtocolEditor(THREE_BLOCKS);
    const segs = ed.segments;
    segs[0].rate = 99; // mutating the copy must not affect the editor
    expect(ed.segments[0].rate).toBe(2);
  });

  it('rejects invalid edits without changing state', () => {
    const ed = new ProtocolEditor(THREE_BLOCKS);
    expect(() => ed.updateSegment(1, { rate: -5 })).toThrow(SegmentError);
    expect(ed.segments[1].rate).toBe(5);
    expect(ed.canUndo).toBe(false);
  });

  it('undo restores the prior segment list exactly', () => {
    const ed = new ProtocolEditor(THREE_BLOCKS);
    ed.updateSegment(1, { rate: 7 });
    ed.updateSegment(2, { durationMinutes: 30 });
    ed.undo();
    expect(ed.segments[2].durationMinutes).toBe(15);
    expect(ed.segments[1].rate).toBe(7);
    ed.undo();
    expect(ed.segments).toEqual(THREE_BLOCKS);
    expect(ed.canUndo).toBe(false);
    ed.undo(); // no-op on empty history
    expect(ed.segments).toEqual(THREE_BLOCKS);
  });
});
