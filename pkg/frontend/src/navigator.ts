import type { ApiClient } from './api.js';
import type { Annotation } from './types.js';
import { boxStatus, type ViewState } from './state.js';

const STATUS_COLORS: Record<string, string> = {
  unlabeled: '#9ca3af',
  labeled: '#34d399',
  model: '#60a5fa',
  selected: '#f472b6',
};

/**
 * Canvas spectrogram navigator: draws the server-rendered strip for the
 * current window and overlays candidate boxes color-coded by label
 * status. All DSP happens server-side; this only maps coordinates.
 */
export class SpectrogramNavigator {
  private strip: HTMLImageElement | null = null;
  annotations: Annotation[] = [];
  onError: (message: string) => void = () => undefined;

  constructor(
    private api: ApiClient,
    private canvas: HTMLCanvasElement,
  ) {}

  async refresh(view: ViewState): Promise<void> {
    const url = this.api.stripUrl(view.recordingId, view.t0, view.t1, view.fMin, view.fMax);
    try {
      this.strip = await loadImage(url);
    } catch {
      // degraded mode: keep the previous strip and overlays usable
      this.onError(`strip request failed for ${view.recordingId}`);
    }
    this.draw(view);
  }

  /** Pixel x for a time, given the current window. */
  xOf(view: ViewState, t: number): number {
    return ((t - view.t0) / (view.t1 - view.t0)) * this.canvas.width;
  }

  /** Pixel y for a frequency (higher frequency is higher on screen). */
  yOf(view: ViewState, f: number): number {
    return ((view.fMax - f) / (view.fMax - view.fMin)) * this.canvas.height;
  }

  hitTest(view: ViewState, x: number, y: number): Annotation | null {
    for (const ann of this.annotations) {
      const x0 = this.xOf(view, ann.box.t_start);
      const x1 = this.xOf(view, ann.box.t_end);
      const y0 = this.yOf(view, ann.box.f_max);
      const y1 = this.yOf(view, ann.box.f_min);
      if (x >= x0 && x <= x1 && y >= y0 && y <= y1) return ann;
    }
    return null;
  }

  draw(view: ViewState): void {
    const ctx = this.canvas.getContext('2d');
    if (!ctx) return;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    if (this.strip) {
      ctx.drawImage(this.strip, 0, 0, this.canvas.width, this.canvas.height);
    }
    for (const ann of this.annotations) {
      const inWindow = ann.box.t_end > view.t0 && ann.box.t_start < view.t1;
      if (!inWindow) continue;
      const selected = ann.id === view.selectedId;
      ctx.strokeStyle = selected ? STATUS_COLORS.selected : STATUS_COLORS[boxStatus(ann)];
      ctx.lineWidth = selected ? 2.5 : 1.5;
      const x = this.xOf(view, ann.box.t_start);
      const w = this.xOf(view, ann.box.t_end) - x;
      const y = this.yOf(view, ann.box.f_max);
      const h = this.yOf(view, ann.box.f_min) - y;
      ctx.strokeRect(x, y, w, h);
      if (ann.label) {
        ctx.fillStyle = ctx.strokeStyle;
        ctx.font = '11px sans-serif';
        ctx.fillText(ann.label, x + 2, Math.max(10, y - 3));
      }
    }
  }
}

function loadImage(url: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error(`cannot load ${url}`));
    img.src = url;
  });
}
