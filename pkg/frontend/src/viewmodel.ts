// Session view model: polling, selection, slider preview, transport.
// DOM-free so the behavior is testable without a browser; main.ts owns
// the actual widgets and re-renders whenever onChange fires.

import { SessionApi } from './api.js';
import type { EditFields, PoseWire, SessionStateWire, SnapshotWire } from './types.js';

export type Phase = 'paused' | 'running' | 'finished' | 'error';

// ~1.4 Hz: the optimization step cadence is slow, polling faster than
// 2 Hz buys nothing and hammers the snapshot renderer.
export const POLL_MS = 700;

export class StudioViewModel {
  snapshot: SnapshotWire | null = null;
  state: SessionStateWire | null = null;
  selected: number | null = null;
  /** Live slider values, overlay preview only; never sent until release. */
  preview: EditFields | null = null;
  /** Best loss per completed step, for the sparkline. */
  lossHistory: number[] = [];

  private timer: ReturnType<typeof setInterval> | null = null;
  private pollInFlight = false;

  constructor(
    private api: SessionApi,
    private onChange: () => void = () => {},
  ) {}

  get phase(): Phase {
    return (this.state?.phase ?? 'paused') as Phase;
  }

  /** Edits are allowed only while paused; controls mirror this. */
  get canEdit(): boolean {
    return this.phase === 'paused';
  }

  // -- polling -------------------------------------------------------------

  startPolling(intervalMs: number = POLL_MS): void {
    if (this.timer !== null) return;
    this.timer = setInterval(() => {
      void this.refresh().catch(() => {
        // transient fetch failure: keep the last good snapshot, retry
        // on the next tick
      });
    }, intervalMs);
  }

  stopPolling(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  /** One poll.  At most one runs at a time; slow responses that arrive
   *  after the session moved on are discarded by step number. */
  async refresh(): Promise<void> {
    if (this.pollInFlight) return;
    this.pollInFlight = true;
    try {
      const [state, snap] = await Promise.all([this.api.state(), this.api.snapshot()]);
      this.acceptState(state);
      this.acceptSnapshot(snap);
    } finally {
      this.pollInFlight = false;
    }
    this.onChange();
  }

  private acceptState(state: SessionStateWire): void {
    if (this.state !== null && state.step < this.state.step) return; // stale
    this.state = state;
    this.recordLoss(state);
  }

  private acceptSnapshot(snap: SnapshotWire): void {
    if (this.snapshot !== null && snap.step < this.snapshot.step) return; // stale
    this.snapshot = snap;
    if (this.selected !== null && this.selected >= snap.poses.length) {
      this.selected = null;
      this.preview = null;
    }
  }

  private recordLoss(state: SessionStateWire): void {
    const losses = state.genome_losses.filter((l): l is number => l !== null);
    if (losses.length === 0) return;
    const best = Math.min(...losses);
    // one entry per completed step; steps that passed between polls get
    // the latest observed value
    while (this.lossHistory.length < state.step) this.lossHistory.push(best);
  }

  // -- selection -------------------------------------------------------------

  /** Click at canvas pixel (x, y): the server's hit-test decides. */
  async select(x: number, y: number): Promise<void> {
    const hit = await this.api.hit(Math.floor(x), Math.floor(y));
    this.selected = hit.patch_index;
    this.preview = null;
    this.onChange();
  }

  /** Pose under edit: committed server pose overlaid with live slider values. */
  selectedPose(): PoseWire | null {
    if (this.selected === null || this.snapshot === null) return null;
    const pose = this.snapshot.poses[this.selected];
    if (pose === undefined) return null;
    return this.preview !== null ? { ...pose, ...this.preview } : pose;
  }

  // -- slider editing ----------------------------------------------------------

  /** Slider drag: update the overlay preview, touch nothing over the wire. */
  previewEdit(fields: EditFields): void {
    if (!this.canEdit || this.selected === null) return;
    this.preview = { ...(this.preview ?? {}), ...fields };
    this.onChange();
  }

  /** Slider release: POST the edit, adopt the server's (possibly clamped)
   *  pose.  Never emits while the session is running. */
  async commitEdit(fields: EditFields): Promise<boolean> {
    if (this.selected === null) return false;
    if (!this.canEdit) {
      this.preview = null;
      this.onChange();
      return false;
    }
    const genome = this.snapshot?.genome_id ?? 0;
    const result = await this.api.edit(genome, this.selected, fields);
    if (this.snapshot !== null) this.snapshot.poses[this.selected] = result.pose;
    this.preview = null;
    this.onChange();
    return result.clamped;
  }

  // -- transport ----------------------------------------------------------------

  async transport(action: 'run' | 'pause' | 'step_n', n = 1): Promise<void> {
    const state = await this.api.control(action, n);
    this.acceptState(state);
    this.preview = null;
    this.onChange();
  }
}
