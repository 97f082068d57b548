// In-memory stand-in for the session service: just enough of the JSON
// API for view model tests, plus a request log that records the server
// phase at the moment each request landed.

import type { FetchFn } from '../src/api.js';
import type { PoseWire, SessionStateWire, SnapshotWire } from '../src/types.js';

// base64 PNG header stub; tests never decode the image
const PNG_STUB = 'iVBORw0KGgoAAAANSUhEUg==';

export interface LoggedRequest {
  method: string;
  path: string; // route + query, session prefix stripped
  phase: string;
  body: Record<string, unknown> | null;
}

export function makePose(fields: Partial<PoseWire> = {}): PoseWire {
  return {
    x: 16,
    y: 16,
    rotation: 0,
    scale: 0.7,
    squeeze: 1,
    shear: 0,
    rgb: [0.5, 0.5, 0.5],
    order: 0.5,
    patch_width: 8,
    patch_height: 8,
    ...fields,
  };
}

export class FakeSessionServer {
  phase = 'paused';
  step = 0;
  genomeId = 0;
  poses: PoseWire[] = [];
  losses: Array<number | null> = [0.5];
  /** "x,y" -> patch index the hit-test reports; anything else misses. */
  hits = new Map<string, number>();
  /** Server-side clamp range for the scale field. */
  scaleRange: [number, number] = [0.35, 1.4];
  log: LoggedRequest[] = [];

  fetch: FetchFn = (url, init) => Promise.resolve(this.handle(url, init));

  editRequests(): LoggedRequest[] {
    return this.log.filter((r) => r.method === 'POST' && r.path === 'edit');
  }

  private handle(url: string, init?: RequestInit): Response {
    const u = new URL(url);
    const route = u.pathname.split('/').slice(3).join('/');
    const method = init?.method ?? 'GET';
    const body =
      typeof init?.body === 'string'
        ? (JSON.parse(init.body) as Record<string, unknown>)
        : null;
    this.log.push({ method, path: route + u.search, phase: this.phase, body });

    if (method === 'GET' && route === 'state') return json(200, this.stateBody());
    if (method === 'GET' && route === 'snapshot') return json(200, this.snapshotBody());
    if (method === 'GET' && route === 'hit') {
      const key = `${u.searchParams.get('x')},${u.searchParams.get('y')}`;
      return json(200, { patch_index: this.hits.get(key) ?? null });
    }
    if (method === 'POST' && route === 'edit') return this.applyEdit(body ?? {});
    if (method === 'POST' && route === 'control') return this.applyControl(body ?? {});
    return json(404, { detail: `no route ${method} ${route}` });
  }

  private stateBody(): SessionStateWire {
    return {
      session_id: 's1',
      phase: this.phase,
      step: this.step,
      selected_genome: this.genomeId,
      genome_losses: [...this.losses],
      population: this.losses.length,
      num_patches: this.poses.length,
      total_critics: 1,
      last_error: null,
    };
  }

  private snapshotBody(): SnapshotWire {
    return {
      step: this.step,
      phase: this.phase,
      genome_id: this.genomeId,
      png_base64: PNG_STUB,
      poses: this.poses.map((p) => ({ ...p, rgb: [...p.rgb] })),
    };
  }

  private applyEdit(body: Record<string, unknown>): Response {
    if (this.phase === 'running') {
      return json(409, { detail: 'pause the session before editing' });
    }
    const index = body.patch_index as number;
    const pose = this.poses[index];
    if (pose === undefined) return json(404, { detail: `no patch ${index}` });

    let clamped = false;
    for (const key of ['x', 'y', 'rotation', 'squeeze', 'shear', 'order', 'rgb'] as const) {
      if (body[key] !== undefined) (pose as unknown as Record<string, unknown>)[key] = body[key];
    }
    if (typeof body.scale === 'number') {
      const [lo, hi] = this.scaleRange;
      pose.scale = Math.min(hi, Math.max(lo, body.scale));
      clamped = pose.scale !== body.scale;
    }
    return json(200, { pose: { ...pose, rgb: [...pose.rgb] }, clamped });
  }

  private applyControl(body: Record<string, unknown>): Response {
    const action = body.action as string;
    if (action === 'run') this.phase = 'running';
    else if (action === 'pause') this.phase = 'paused';
    else if (action === 'step_n') this.step += (body.n as number) ?? 1;
    else return json(400, { detail: `unknown action ${action}` });
    return json(200, this.stateBody());
  }
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'content-type': 'application/json' },
  });
}
