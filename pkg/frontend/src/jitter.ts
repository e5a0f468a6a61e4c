/**
 * Jitter buffer between the websocket and audio playback.
 *
 * Chunks are queued as they arrive; playback starts only once the buffer
 * holds `targetChunks` of audio, which absorbs network jitter at the
 * cost of target * chunkSeconds of latency. A sequence gap or underrun
 * resets the buffer to the priming state. The buffer itself is pure
 * bookkeeping so it can be driven by any clock in tests.
 */

export interface JitterConfig {
  chunkSeconds: number;
  targetChunks: number;
}

export class JitterBuffer {
  private queue: Float32Array[] = [];
  private primed = false;
  underruns = 0;

  constructor(readonly config: JitterConfig) {
    if (config.targetChunks < 1) {
      throw new Error("targetChunks must be >= 1");
    }
  }

  push(samples: Float32Array): void {
    this.queue.push(samples);
    if (!this.primed && this.queue.length >= this.config.targetChunks) {
      this.primed = true;
    }
  }

  /** Next chunk to schedule, or null while priming / after underrun. */
  pull(): Float32Array | null {
    if (!this.primed) {
      return null;
    }
    const chunk = this.queue.shift();
    if (chunk === undefined) {
      this.underruns += 1;
      this.primed = false;
      return null;
    }
    return chunk;
  }

  reset(): void {
    this.queue.length = 0;
    this.primed = false;
  }

  get bufferedChunks(): number {
    return this.queue.length;
  }

  get bufferedSeconds(): number {
    return this.queue.length * this.config.chunkSeconds;
  }
}

/**
 * Linear upsampling for playback: browsers will not open an AudioContext
 * at the 500 Hz synthesis rate, so chunks are interpolated up to an
 * audio-legal rate (the vibration band lives below 250 Hz, far under
 * the interpolation's corner). `previousLast` stitches chunk boundaries
 * so the interpolation is continuous across chunks.
 */
export function upsampleLinear(
  samples: Float32Array,
  factor: number,
  previousLast = 0
): Float32Array {
  if (factor < 1 || !Number.isInteger(factor)) {
    throw new Error(`upsample factor must be a positive integer, got ${factor}`);
  }
  const out = new Float32Array(samples.length * factor);
  let prev = previousLast;
  for (let i = 0; i < samples.length; i++) {
    const next = samples[i];
    for (let j = 0; j < factor; j++) {
      out[i * factor + j] = prev + ((next - prev) * (j + 1)) / factor;
    }
    prev = next;
  }
  return out;
}
