import type { Annotation, Box, JobStatus, Recording, Synthetic } from './types.js';

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/**
 * Thin typed client over the HTTP API. Every mutation the UI makes goes
 * through exactly one method here, one endpoint each.
 */
export class ApiClient {
  constructor(
    private base: string,
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.base + path, init);
    if (!response.ok) {
      let code = `http_${response.status}`;
      let message = response.statusText;
      try {
        const body = (await response.json()) as { code?: string; message?: string };
        code = body.code ?? code;
        message = body.message ?? message;
      } catch {
        // non-JSON error body: keep the status text
      }
      throw new ApiError(response.status, code, message);
    }
    return (await response.json()) as T;
  }

  health(): Promise<{ status: string }> {
    return this.request('/health');
  }

  recordings(): Promise<Recording[]> {
    return this.request('/recordings');
  }

  candidates(recordingId: string): Promise<Annotation[]> {
    return this.request(`/recordings/${recordingId}/candidates`);
  }

  annotations(params?: { recording_id?: string; label?: string }): Promise<Annotation[]> {
    const query = new URLSearchParams();
    if (params?.recording_id) query.set('recording_id', params.recording_id);
    if (params?.label) query.set('label', params.label);
    const suffix = query.toString() ? `?${query}` : '';
    return this.request(`/annotations${suffix}`);
  }

  createAnnotation(body: {
    recording_id: string;
    box: Box;
    label?: string;
    annotator?: string;
  }): Promise<{ id: string }> {
    return this.request('/annotations', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  patchAnnotation(id: string, label: string, annotator: string): Promise<Annotation> {
    return this.request(`/annotations/${id}`, {
      method: 'PATCH',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ label, annotator }),
    });
  }

  pendingSynthetics(): Promise<Synthetic[]> {
    return this.request('/synthetics?status=pending');
  }

  decideSynthetic(id: string, verdict: 'accept' | 'reject', reviewer: string): Promise<Annotation> {
    return this.request(`/synthetics/${id}/decision`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ verdict, reviewer }),
    });
  }

  job(jobId: string): Promise<JobStatus> {
    return this.request(`/jobs/${jobId}`);
  }

  train(manifestVersion: number, config?: Record<string, unknown>): Promise<JobStatus> {
    return this.request('/train', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ manifest_version: manifestVersion, config: config ?? {} }),
    });
  }

  /** URL of a rendered spectrogram strip; the canvas loads it as an image. */
  stripUrl(recordingId: string, t0: number, t1: number, fmin: number, fmax: number): string {
    const query = new URLSearchParams({
      t0: t0.toFixed(6),
      t1: t1.toFixed(6),
      fmin: fmin.toFixed(1),
      fmax: fmax.toFixed(1),
    });
    return `${this.base}/recordings/${recordingId}/spectrogram?${query}`;
  }
}
