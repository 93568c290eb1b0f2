export interface Box {
  t_start: number;
  t_end: number;
  f_min: number;
  f_max: number;
}

export interface Recording {
  id: string;
  duration_s: number;
  sample_rate_hz: number;
  noise_tag: string;
}

export interface Annotation {
  id: string;
  recording_id: string;
  box: Box;
  label: string | null;
  source: string;
  review_status: string | null;
  annotator: string;
  updated_at: string;
  audit: Record<string, unknown>[];
}

export interface Synthetic {
  id: string;
  seed_annotation_id: string;
  label: string;
  tile_url: string;
  seed_tile_url: string;
  review_status: string;
}

export interface JobStatus {
  job_id: string;
  kind: string;
  state: 'queued' | 'running' | 'done' | 'failed';
  progress: number;
  result: Record<string, unknown> | null;
  error: string;
  history: EpochPoint[] | null;
}

export interface EpochPoint {
  epoch: number;
  train_accuracy: number;
  val_accuracy: number;
}

/** The twelve categories, in the server's canonical order. */
export const LABELS = [
  'Complex',
  'ComplexTrill',
  'DownwardRamp',
  'Flat',
  'InvertedU',
  'Short',
  'Split',
  'StepDown',
  'StepUp',
  'Trill',
  'UpwardRamp',
  'Noise',
] as const;

export type Label = (typeof LABELS)[number];
