import type { ApiClient } from './api.js';
import { ApiError } from './api.js';
import type { Synthetic } from './types.js';

export interface ReviewCounts {
  accepted: number;
  rejected: number;
}

/**
 * Strictly sequential accept/reject queue over pending synthetics.
 * A 409 conflict (someone else decided first) refreshes the queue instead
 * of failing; every other error is surfaced to the caller.
 */
export class ReviewQueue {
  private items: Synthetic[] = [];
  private index = 0;
  readonly counts: ReviewCounts = { accepted: 0, rejected: 0 };

  constructor(
    private api: ApiClient,
    private reviewer: string,
  ) {}

  async load(): Promise<void> {
    this.items = await this.api.pendingSynthetics();
    this.index = 0;
  }

  get current(): Synthetic | null {
    return this.items[this.index] ?? null;
  }

  get remaining(): number {
    return Math.max(0, this.items.length - this.index);
  }

  get done(): boolean {
    return this.current === null;
  }

  async decide(verdict: 'accept' | 'reject'): Promise<'applied' | 'refreshed'> {
    const item = this.current;
    if (!item) return 'applied';
    try {
      await this.api.decideSynthetic(item.id, verdict, this.reviewer);
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        await this.load();
        return 'refreshed';
      }
      throw error;
    }
    this.counts[verdict === 'accept' ? 'accepted' : 'rejected'] += 1;
    this.index += 1;
    return 'applied';
  }
}
