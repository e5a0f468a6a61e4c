/**
 * Probe pad logic: pointer pixels to millimeters, press depth from the
 * slider, and state-message production with strictly monotone
 * timestamps from a monotonic clock. Kept free of DOM types so the
 * send path can be tested (and instrumented) in isolation.
 */

import { StateMessage } from "./protocol.js";

export const PX_PER_MM = 4.0;
export const MAX_DEPTH_MM = 5.0;

export function pixelsToMm(px: number, py: number): { x_mm: number; y_mm: number } {
  return { x_mm: px / PX_PER_MM, y_mm: py / PX_PER_MM };
}

/** Depth slider value (0..1) to probe z in mm (0 .. -MAX_DEPTH_MM). */
export function depthToZ(depthFraction: number): number {
  const clamped = Math.min(Math.max(depthFraction, 0), 1);
  return -clamped * MAX_DEPTH_MM;
}

export interface PadState {
  textureId: string | null;
  connected: boolean;
  captured: boolean;
  scaleToMs2: number;
  droppedChunks: number;
}

const MIN_TIMESTAMP_STEP_S = 1e-4;

export class PointerStreamer {
  private lastT: number | null = null;
  private sentTimes: number[] = [];

  /** `clock` returns monotonic seconds (performance.now()/1000 in the browser). */
  constructor(private readonly clock: () => number) {}

  /**
   * Build the state message for a pointer move. Timestamps are forced
   * strictly increasing even if the clock is read twice within its
   * resolution. Returns null when the pointer is not captured.
   */
  sample(captured: boolean, px: number, py: number, depthFraction: number): StateMessage | null {
    if (!captured) return null;
    let t = this.clock();
    if (this.lastT !== null && t <= this.lastT) {
      t = this.lastT + MIN_TIMESTAMP_STEP_S;
    }
    this.lastT = t;
    this.sentTimes.push(t);
    while (this.sentTimes.length > 0 && this.sentTimes[0] < t - 1.0) {
      this.sentTimes.shift();
    }
    const { x_mm, y_mm } = pixelsToMm(px, py);
    return { type: "state", t_s: t, x_mm, y_mm, z_mm: depthToZ(depthFraction) };
  }

  /** Messages sent over the trailing second (UI rate instrumentation). */
  get messagesPerSecond(): number {
    return this.sentTimes.length;
  }

  reset(): void {
    this.lastT = null;
    this.sentTimes.length = 0;
  }
}
