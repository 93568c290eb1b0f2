import { ApiClient } from './api.js';
import { drawCurves, watchJob } from './dashboard.js';
import { SpectrogramNavigator } from './navigator.js';
import { ReviewQueue } from './review.js';
import {
  HOTKEYS,
  LabelQueue,
  initialView,
  labelForKey,
  nextToken,
  pan,
  zoom,
  zoomToBox,
  type ViewState,
} from './state.js';
import type { Recording } from './types.js';

const api = new ApiClient('');

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function banner(message: string): void {
  const box = el<HTMLDivElement>('banner');
  box.textContent = message;
  box.style.display = message ? 'block' : 'none';
  if (message) setTimeout(() => (box.style.display = 'none'), 4000);
}

// ---------------------------------------------------------------- labeling

let view: ViewState | null = null;
let recording: Recording | null = null;
let navigator_: SpectrogramNavigator | null = null;
const annotator = `labeler-${Math.random().toString(36).slice(2, 7)}`;

const labelQueue = new LabelQueue(async (action) =>
  api.patchAnnotation(action.annotationId, action.label, action.annotator),
);

async function openRecording(rec: Recording): Promise<void> {
  recording = rec;
  view = initialView(rec.id, rec.duration_s);
  const canvas = el<HTMLCanvasElement>('strip');
  navigator_ = new SpectrogramNavigator(api, canvas);
  navigator_.onError = banner;
  await reloadAnnotations();
  await navigator_.refresh(view);
  el<HTMLDivElement>('labeler-info').textContent =
    `${rec.id} (${rec.duration_s.toFixed(1)} s, ${rec.noise_tag || 'untagged'})`;

  canvas.onclick = (event) => {
    if (!view || !navigator_) return;
    const rect = canvas.getBoundingClientRect();
    const hit = navigator_.hitTest(
      view,
      ((event.clientX - rect.left) / rect.width) * canvas.width,
      ((event.clientY - rect.top) / rect.height) * canvas.height,
    );
    view.selectedId = hit?.id ?? null;
    navigator_.draw(view);
  };
}

async function reloadAnnotations(): Promise<void> {
  if (!view || !navigator_) return;
  navigator_.annotations = await api.candidates(view.recordingId);
  navigator_.draw(view);
}

async function handleKey(event: KeyboardEvent): Promise<void> {
  if (!view || !navigator_ || !recording) return;
  const duration = recording.duration_s;
  if (event.key === 'ArrowRight') view = pan(view, 0.5, duration);
  else if (event.key === 'ArrowLeft') view = pan(view, -0.5, duration);
  else if (event.key === '+' || event.key === '=') view = zoom(view, 0.5, duration);
  else if (event.key === '-') view = zoom(view, 2, duration);
  else if (event.key === 'z' && view.selectedId) {
    const selected = navigator_.annotations.find((a) => a.id === view!.selectedId);
    if (selected) view = zoomToBox(view, selected.box, duration);
  } else {
    const label = labelForKey(event.key);
    if (label && view.selectedId) {
      const id = view.selectedId;
      // optimistic recolor, reconciled on the next reload
      const ann = navigator_.annotations.find((a) => a.id === id);
      if (ann) {
        ann.label = label;
        ann.source = 'human';
      }
      navigator_.draw(view);
      await labelQueue.enqueue({ token: nextToken(), annotationId: id, label, annotator });
      await reloadAnnotations();
    }
    return;
  }
  await navigator_.refresh(view);
}

// ---------------------------------------------------------------- review

let reviewQueue: ReviewQueue | null = null;

async function startReview(): Promise<void> {
  reviewQueue = new ReviewQueue(api, annotator);
  await reviewQueue.load();
  renderReview();
}

function renderReview(): void {
  if (!reviewQueue) return;
  const counter = el<HTMLDivElement>('review-counter');
  const seed = el<HTMLImageElement>('seed-tile');
  const morph = el<HTMLImageElement>('morph-tile');
  const label = el<HTMLDivElement>('review-label');
  const item = reviewQueue.current;
  if (!item) {
    counter.textContent =
      `queue empty: ${reviewQueue.counts.accepted} accepted, ${reviewQueue.counts.rejected} rejected`;
    seed.removeAttribute('src');
    morph.removeAttribute('src');
    label.textContent = '';
    return;
  }
  counter.textContent = `${reviewQueue.remaining} pending`;
  seed.src = item.seed_tile_url;
  morph.src = item.tile_url;
  label.textContent = `${item.id} (${item.label}, seed ${item.seed_annotation_id})`;
}

async function reviewKey(event: KeyboardEvent): Promise<void> {
  if (!reviewQueue || reviewQueue.done) return;
  if (event.key === 'a') {
    const outcome = await reviewQueue.decide('accept');
    if (outcome === 'refreshed') banner('item was decided elsewhere; queue refreshed');
  } else if (event.key === 'r') {
    const outcome = await reviewQueue.decide('reject');
    if (outcome === 'refreshed') banner('item was decided elsewhere; queue refreshed');
  } else {
    return;
  }
  renderReview();
}

// ---------------------------------------------------------------- dashboard

async function startDashboard(): Promise<void> {
  const jobId = el<HTMLInputElement>('job-id').value.trim();
  if (!jobId) return;
  const canvas = el<HTMLCanvasElement>('curves');
  const summary = el<HTMLDivElement>('job-summary');
  try {
    await watchJob(api, jobId, (snapshot) => {
      drawCurves(canvas, snapshot.history);
      if (snapshot.state === 'failed') {
        summary.textContent = `failed: ${snapshot.error}`;
      } else if (snapshot.state === 'done') {
        summary.textContent =
          `done; final validation accuracy ${(snapshot.finalValAccuracy ?? 0).toFixed(3)}`;
      } else {
        summary.textContent = `${snapshot.state} (${Math.round(snapshot.progress * 100)}%)`;
      }
    });
  } catch (error) {
    summary.textContent = `job not found: ${jobId}`;
  }
}

// ---------------------------------------------------------------- wiring

type Tab = 'labeler' | 'review' | 'dashboard';
let activeTab: Tab = 'labeler';

function switchTab(tab: Tab): void {
  activeTab = tab;
  for (const name of ['labeler', 'review', 'dashboard'] as Tab[]) {
    el<HTMLDivElement>(`tab-${name}`).style.display = name === tab ? 'block' : 'none';
    el<HTMLButtonElement>(`btn-${name}`).classList.toggle('active', name === tab);
  }
}

async function boot(): Promise<void> {
  el<HTMLButtonElement>('btn-labeler').onclick = () => switchTab('labeler');
  el<HTMLButtonElement>('btn-review').onclick = () => {
    switchTab('review');
    void startReview();
  };
  el<HTMLButtonElement>('btn-dashboard').onclick = () => switchTab('dashboard');
  el<HTMLButtonElement>('job-watch').onclick = () => void startDashboard();

  const legend = el<HTMLDivElement>('hotkeys');
  legend.textContent = Object.entries(HOTKEYS)
    .map(([key, label]) => `${key}=${label}`)
    .join('  ');

  window.addEventListener('keydown', (event) => {
    if (activeTab === 'labeler') void handleKey(event);
    else if (activeTab === 'review') void reviewKey(event);
  });

  window.addEventListener('online', () => void labelQueue.setOffline(false));
  window.addEventListener('offline', () => void labelQueue.setOffline(true));

  const recordings = await api.recordings();
  const picker = el<HTMLSelectElement>('recording-picker');
  for (const rec of recordings) {
    const option = document.createElement('option');
    option.value = rec.id;
    option.textContent = `${rec.id} (${rec.duration_s.toFixed(0)} s ${rec.noise_tag})`;
    picker.appendChild(option);
  }
  picker.onchange = () => {
    const rec = recordings.find((r) => r.id === picker.value);
    if (rec) void openRecording(rec);
  };
  if (recordings.length > 0) {
    picker.value = recordings[0].id;
    await openRecording(recordings[0]);
  }
}

void boot();
