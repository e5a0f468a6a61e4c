/**
 * Wire protocol shared with the streaming service.
 *
 * Control messages are JSON text; audio arrives as binary chunks with an
 * 8-byte little-endian header (uint32 sequence, uint16 sample count,
 * uint16 dropped-chunk count) followed by float32 samples normalized to
 * [-1, 1] by the scale factor reported in the ready message.
 */

export interface HelloMessage {
  type: "hello";
  texture_id: string;
  synthesis_rate_hz?: number;
}

export interface StateMessage {
  type: "state";
  t_s: number;
  x_mm: number;
  y_mm: number;
  z_mm: number;
}

export interface ReadyMessage {
  type: "ready";
  scale_to_m_s2: number;
  synthesis_rate_hz: number;
  chunk_samples: number;
  loop_rate_hz: number;
}

export interface AudioChunk {
  sequence: number;
  sampleCount: number;
  dropped: number;
  samples: Float32Array;
}

export const HEADER_BYTES = 8;

export function decodeChunk(buffer: ArrayBuffer): AudioChunk {
  if (buffer.byteLength < HEADER_BYTES) {
    throw new Error(`chunk too short: ${buffer.byteLength} bytes`);
  }
  const view = new DataView(buffer);
  const sequence = view.getUint32(0, true);
  const sampleCount = view.getUint16(4, true);
  const dropped = view.getUint16(6, true);
  const expected = HEADER_BYTES + 4 * sampleCount;
  if (buffer.byteLength < expected) {
    throw new Error(
      `chunk declares ${sampleCount} samples but carries ${buffer.byteLength} bytes`
    );
  }
  const samples = new Float32Array(buffer, HEADER_BYTES, sampleCount);
  return { sequence, sampleCount, dropped, samples };
}

/** Test helper and reference encoder; mirrors the server layout. */
export function encodeChunk(sequence: number, samples: Float32Array, dropped: number): ArrayBuffer {
  const buffer = new ArrayBuffer(HEADER_BYTES + 4 * samples.length);
  const view = new DataView(buffer);
  view.setUint32(0, sequence >>> 0, true);
  view.setUint16(4, samples.length, true);
  view.setUint16(6, dropped, true);
  new Float32Array(buffer, HEADER_BYTES).set(samples);
  return buffer;
}

/**
 * Delivered chunks must have contiguous sequence numbers; a gap means the
 * transport or server misbehaved and the playback buffer must reset.
 */
export class SequenceTracker {
  private next: number | null = null;
  gaps = 0;

  /** Returns the number of missing chunks before this one (0 = in order). */
  push(sequence: number): number {
    if (this.next === null) {
      this.next = sequence + 1;
      return 0;
    }
    const missed = sequence - this.next;
    this.next = sequence + 1;
    if (missed > 0) {
      this.gaps += 1;
      return missed;
    }
    return 0;
  }

  reset(): void {
    this.next = null;
  }
}
