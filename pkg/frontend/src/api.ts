// Typed fetch client for one session of the collage service.

import type {
  EditFields,
  EditResultWire,
  HitWire,
  SessionStateWire,
  SnapshotWire,
} from './types.js';

export type FetchFn = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

export class SessionApi {
  constructor(
    private baseUrl: string,
    private sessionId: string,
    private fetchFn: FetchFn = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { 'content-type': 'application/json' } };
    if (body !== undefined) init.body = JSON.stringify(body);
    const res = await this.fetchFn(`${this.baseUrl}/session/${this.sessionId}${path}`, init);
    if (!res.ok) {
      let detail = res.statusText;
      try {
        detail = JSON.stringify(await res.json());
      } catch {
        // keep statusText for non-JSON error bodies
      }
      throw new ApiError(res.status, `${method} ${path} -> ${res.status}: ${detail}`);
    }
    return res.json() as Promise<T>;
  }

  state(): Promise<SessionStateWire> {
    return this.request('GET', '/state');
  }

  snapshot(): Promise<SnapshotWire> {
    return this.request('GET', '/snapshot');
  }

  hit(x: number, y: number): Promise<HitWire> {
    return this.request('GET', `/hit?x=${x}&y=${y}`);
  }

  edit(genomeId: number, patchIndex: number, fields: EditFields): Promise<EditResultWire> {
    return this.request('POST', '/edit', {
      genome_id: genomeId,
      patch_index: patchIndex,
      ...fields,
    });
  }

  control(action: 'run' | 'pause' | 'step_n', n = 1): Promise<SessionStateWire> {
    return this.request('POST', '/control', { action, n });
  }
}
