import type { Annotation, Box, Label } from './types.js';
import { LABELS } from './types.js';

/** Visible window over one recording; all label actions key off this. */
export interface ViewState {
  recordingId: string;
  t0: number;
  t1: number;
  fMin: number;
  fMax: number;
  selectedId: string | null;
}

export const DEFAULT_WINDOW_S = 5;
export const DEFAULT_F_MIN = 20_000;
export const DEFAULT_F_MAX = 95_000;

export function initialView(recordingId: string, durationS: number): ViewState {
  return {
    recordingId,
    t0: 0,
    t1: Math.min(DEFAULT_WINDOW_S, durationS),
    fMin: DEFAULT_F_MIN,
    fMax: DEFAULT_F_MAX,
    selectedId: null,
  };
}

/** Pan by a fraction of the current window, clamped to the recording. */
export function pan(view: ViewState, fraction: number, durationS: number): ViewState {
  const width = view.t1 - view.t0;
  let t0 = view.t0 + width * fraction;
  t0 = Math.max(0, Math.min(t0, durationS - width));
  return { ...view, t0, t1: t0 + width };
}

/** Zoom around the window center; factor < 1 zooms in. */
export function zoom(view: ViewState, factor: number, durationS: number): ViewState {
  const center = (view.t0 + view.t1) / 2;
  let width = (view.t1 - view.t0) * factor;
  width = Math.min(Math.max(width, 0.01), durationS);
  let t0 = center - width / 2;
  t0 = Math.max(0, Math.min(t0, durationS - width));
  return { ...view, t0, t1: t0 + width };
}

/** Window centered on a box plus margin, as requested by zoom-to-box. */
export function zoomToBox(view: ViewState, box: Box, durationS: number, margin = 0.25): ViewState {
  const width = (box.t_end - box.t_start) * (1 + 2 * margin);
  const center = (box.t_start + box.t_end) / 2;
  let t0 = Math.max(0, center - width / 2);
  const t1 = Math.min(durationS, t0 + width);
  t0 = Math.max(0, t1 - width);
  const fPad = (box.f_max - box.f_min) * margin;
  return {
    ...view,
    t0,
    t1,
    fMin: Math.max(0, box.f_min - fPad),
    fMax: box.f_max + fPad,
  };
}

/** One key per category: 1..9 then 0, then q/w for the last two. */
const HOTKEY_ROW = '1234567890qw';

export const HOTKEYS: Record<string, Label> = Object.fromEntries(
  LABELS.map((label, i) => [HOTKEY_ROW[i], label]),
) as Record<string, Label>;

export function labelForKey(key: string): Label | null {
  return HOTKEYS[key] ?? null;
}

export type BoxStatus = 'unlabeled' | 'labeled' | 'model';

/** Overlay color class of a candidate box. */
export function boxStatus(annotation: Annotation): BoxStatus {
  if (annotation.label === null) return 'unlabeled';
  return annotation.source === 'human' ? 'labeled' : 'model';
}

// ---------------------------------------------------------------------------
// label queue: serialized mutations, offline buffering, token de-duplication

export interface LabelAction {
  token: string;
  annotationId: string;
  label: Label;
  annotator: string;
}

export type SendFn = (action: LabelAction) => Promise<Annotation>;

/**
 * Serializes label mutations, drops duplicate tokens (double-click safety),
 * buffers while offline and flushes in order on reconnect.
 */
export class LabelQueue {
  private pending: LabelAction[] = [];
  private seenTokens = new Set<string>();
  private inFlight = false;
  private offline = false;
  readonly applied: LabelAction[] = [];
  readonly failures: { action: LabelAction; error: unknown }[] = [];

  constructor(private send: SendFn) {}

  get pendingCount(): number {
    return this.pending.length;
  }

  setOffline(offline: boolean): Promise<void> {
    this.offline = offline;
    if (!offline) return this.drain();
    return Promise.resolve();
  }

  enqueue(action: LabelAction): Promise<void> {
    if (this.seenTokens.has(action.token)) return Promise.resolve();
    this.seenTokens.add(action.token);
    this.pending.push(action);
    return this.drain();
  }

  private async drain(): Promise<void> {
    if (this.inFlight || this.offline) return;
    this.inFlight = true;
    try {
      while (this.pending.length > 0 && !this.offline) {
        const action = this.pending[0];
        try {
          await this.send(action);
          this.applied.push(action);
        } catch (error) {
          this.failures.push({ action, error });
        }
        this.pending.shift();
      }
    } finally {
      this.inFlight = false;
    }
  }
}

let tokenCounter = 0;

export function nextToken(): string {
  tokenCounter += 1;
  return `t${Date.now().toString(36)}-${tokenCounter}`;
}
