import { describe, expect, it } from 'vitest';

import {
  HOTKEYS,
  LabelQueue,
  boxStatus,
  initialView,
  labelForKey,
  nextToken,
  pan,
  zoom,
  zoomToBox,
  type LabelAction,
} from '../src/state.js';
import { LABELS, type Annotation } from '../src/types.js';

const annotation = (over: Partial<Annotation> = {}): Annotation => ({
  id: 'a1',
  recording_id: 'r1',
  box: { t_start: 1, t_end: 1.2, f_min: 40_000, f_max: 60_000 },
  label: null,
  source: 'model',
  review_status: null,
  annotator: '',
  updated_at: '',
  audit: [],
  ...over,
});

describe('view state', () => {
  it('opens a 5 s window at 20-95 kHz', () => {
    const view = initialView('r1', 60);
    expect(view.t0).toBe(0);
    expect(view.t1).toBe(5);
    expect(view.fMin).toBe(20_000);
    expect(view.fMax).toBe(95_000);
  });

  it('clamps panning to the recording bounds', () => {
    let view = initialView('r1', 10);
    view = pan(view, -1, 10);
    expect(view.t0).toBe(0);
    for (let i = 0; i < 10; i++) view = pan(view, 1, 10);
    expect(view.t1).toBeCloseTo(10);
    expect(view.t1 - view.t0).toBeCloseTo(5);
  });

  it('zooms around the center and clamps to duration', () => {
    let view = initialView('r1', 60);
    const centerBefore = (view.t0 + view.t1) / 2;
    view = zoom(view, 0.5, 60);
    expect((view.t0 + view.t1) / 2).toBeCloseTo(centerBefore);
    expect(view.t1 - view.t0).toBeCloseTo(2.5);
    view = zoom(view, 1e6, 60);
    expect(view.t1 - view.t0).toBeCloseTo(60);
  });

  it('zoom-to-box covers the box plus margin', () => {
    const view = initialView('r1', 60);
    const box = { t_start: 10, t_end: 10.4, f_min: 40_000, f_max: 50_000 };
    const zoomed = zoomToBox(view, box, 60, 0.25);
    expect(zoomed.t0).toBeLessThanOrEqual(10);
    expect(zoomed.t1).toBeGreaterThanOrEqual(10.4);
    expect(zoomed.t1 - zoomed.t0).toBeCloseTo(0.4 * 1.5);
    expect(zoomed.fMin).toBeLessThanOrEqual(40_000);
    expect(zoomed.fMax).toBeGreaterThanOrEqual(50_000);
  });
});

describe('hotkeys', () => {
  it('covers all 12 labels with distinct keys', () => {
    const keys = Object.keys(HOTKEYS);
    expect(keys.length).toBe(12);
    expect(new Set(Object.values(HOTKEYS)).size).toBe(12);
    for (const label of LABELS) {
      expect(Object.values(HOTKEYS)).toContain(label);
    }
  });

  it('maps keys and rejects unknown ones', () => {
    expect(labelForKey('1')).toBe('Complex');
    expect(labelForKey('0')).toBe('Trill');
    expect(labelForKey('x')).toBeNull();
  });
});

describe('box status', () => {
  it('distinguishes unlabeled, human and model boxes', () => {
    expect(boxStatus(annotation())).toBe('unlabeled');
    expect(boxStatus(annotation({ label: 'Flat', source: 'human' }))).toBe('labeled');
    expect(boxStatus(annotation({ label: 'Flat', source: 'model' }))).toBe('model');
  });
});

describe('label queue', () => {
  const action = (token: string, id = 'a1'): LabelAction => ({
    token,
    annotationId: id,
    label: 'Trill',
    annotator: 'me',
  });

  it('sends actions in order', async () => {
    const sent: string[] = [];
    const queue = new LabelQueue(async (a) => {
      sent.push(a.annotationId);
      return annotation({ id: a.annotationId });
    });
    await queue.enqueue(action('t1', 'a1'));
    await queue.enqueue(action('t2', 'a2'));
    expect(sent).toEqual(['a1', 'a2']);
  });

  it('drops duplicate tokens (double-click safety)', async () => {
    const sent: string[] = [];
    const queue = new LabelQueue(async (a) => {
      sent.push(a.token);
      return annotation();
    });
    await queue.enqueue(action('same'));
    await queue.enqueue(action('same'));
    expect(sent).toEqual(['same']);
  });

  it('buffers while offline and flushes in order on reconnect', async () => {
    const sent: string[] = [];
    const queue = new LabelQueue(async (a) => {
      sent.push(a.token);
      return annotation();
    });
    await queue.setOffline(true);
    await queue.enqueue(action('q1'));
    await queue.enqueue(action('q2'));
    await queue.enqueue(action('q3'));
    expect(sent).toEqual([]);
    expect(queue.pendingCount).toBe(3);
    await queue.setOffline(false);
    expect(sent).toEqual(['q1', 'q2', 'q3']);
    expect(queue.pendingCount).toBe(0);
  });

  it('records failures without blocking later actions', async () => {
    const queue = new LabelQueue(async (a) => {
      if (a.annotationId === 'bad') throw new Error('409');
      return annotation();
    });
    await queue.enqueue(action('t1', 'bad'));
    await queue.enqueue(action('t2', 'ok'));
    expect(queue.failures.length).toBe(1);
    expect(queue.applied.map((a) => a.annotationId)).toEqual(['ok']);
  });

  it('generates unique tokens', () => {
    const a = nextToken();
    const b = nextToken();
    expect(a).not.toBe(b);
  });
});
