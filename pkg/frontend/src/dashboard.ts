import type { ApiClient } from './api.js';
import type { EpochPoint, JobStatus } from './types.js';

export interface DashboardSnapshot {
  state: JobStatus['state'];
  progress: number;
  history: EpochPoint[];
  finalValAccuracy: number | null;
  error: string;
}

export function snapshotOf(status: JobStatus): DashboardSnapshot {
  const history = status.history ?? [];
  let finalVal: number | null = null;
  if (status.state === 'done') {
    const fromResult = status.result?.['final_val_accuracy'];
    finalVal = typeof fromResult === 'number' ? fromResult : null;
    if (finalVal === null && history.length > 0) {
      finalVal = Math.max(...history.map((e) => e.val_accuracy));
    }
  }
  return {
    state: status.state,
    progress: status.progress,
    history,
    finalValAccuracy: finalVal,
    error: status.error,
  };
}

/**
 * Polls a training job until it reaches a terminal state, invoking
 * onUpdate with a snapshot (curves extend as history grows).
 */
export async function watchJob(
  api: ApiClient,
  jobId: string,
  onUpdate: (snapshot: DashboardSnapshot) => void,
  pollMs = 500,
  sleep: (ms: number) => Promise<void> = (ms) => new Promise((r) => setTimeout(r, ms)),
): Promise<DashboardSnapshot> {
  for (;;) {
    const status = await api.job(jobId);
    const snapshot = snapshotOf(status);
    onUpdate(snapshot);
    if (snapshot.state === 'done' || snapshot.state === 'failed') {
      return snapshot;
    }
    await sleep(pollMs);
  }
}

/** Plot train/val accuracy per epoch onto a canvas. */
export function drawCurves(
  canvas: HTMLCanvasElement,
  history: EpochPoint[],
): void {
  const ctx = canvas.getContext('2d');
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = '#111';
  ctx.fillRect(0, 0, width, height);
  if (history.length === 0) return;

  const pad = 28;
  const xs = (epoch: number) =>
    pad + ((width - 2 * pad) * epoch) / Math.max(1, history[history.length - 1].epoch || 1);
  const ys = (acc: number) => height - pad - (height - 2 * pad) * acc;

  ctx.strokeStyle = '#444';
  ctx.strokeRect(pad, pad, width - 2 * pad, height - 2 * pad);

  const series: [keyof EpochPoint, string][] = [
    ['train_accuracy', '#6fc276'],
    ['val_accuracy', '#f59e0b'],
  ];
  for (const [field, color] of series) {
    ctx.strokeStyle = color;
    ctx.beginPath();
    history.forEach((point, i) => {
      const x = xs(point.epoch);
      const y = ys(point[field] as number);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
  }
}
