// Append-only in-browser session history.

import type { GenerateResponse } from "./api.js";

export interface SessionEntry {
  readonly caption: string;
  readonly seed: number;
  readonly samples: number;
  readonly response: GenerateResponse;
  readonly timestamp: number;
}

export class SessionHistory {
  private entries: SessionEntry[] = [];

  append(caption: string, samples: number, response: GenerateResponse): SessionEntry {
    const entry: SessionEntry = Object.freeze({
      caption,
      seed: response.seed,
      samples,
      response,
      timestamp: Date.now(),
    });
    this.entries.push(entry);
    return entry;
  }

  all(): readonly SessionEntry[] {
    return this.entries;
  }

  get length(): number {
    return this.entries.length;
  }
}
