import { describe, expect, it } from "vitest";

import { decodeChunk, encodeChunk, HEADER_BYTES, SequenceTracker } from "../src/protocol.js";

describe("chunk codec", () => {
  it("round-trips header fields and samples", () => {
    const samples = new Float32Array([0.25, -0.5, 1.0, -1.0]);
    const chunk = decodeChunk(encodeChunk(41, samples, 2));
    expect(chunk.sequence).toBe(41);
    expect(chunk.sampleCount).toBe(4);
    expect(chunk.dropped).toBe(2);
    expect(Array.from(chunk.samples)).toEqual(Array.from(samples));
  });

  it("uses the documented little-endian layout", () => {
    const buffer = encodeChunk(0x01020304, new Float32Array([0, 0]), 5);
    const bytes = new Uint8Array(buffer);
    expect(Array.from(bytes.slice(0, 4))).toEqual([0x04, 0x03, 0x02, 0x01]);
    expect(Array.from(bytes.slice(4, 6))).toEqual([2, 0]);
    expect(Array.from(bytes.slice(6, 8))).toEqual([5, 0]);
    expect(buffer.byteLength).toBe(HEADER_BYTES + 8);
  });

  it("rejects truncated buffers", () => {
    const buffer = encodeChunk(1, new Float32Array([1, 2, 3]), 0);
    expect(() => decodeChunk(buffer.slice(0, 4))).toThrow(/too short/);
    expect(() => decodeChunk(buffer.slice(0, HEADER_BYTES + 4))).toThrow(/declares/);
  });
});

describe("sequence tracker", () => {
  it("accepts contiguous sequences", () => {
    const tracker = new SequenceTracker();
    expect(tracker.push(10)).toBe(0);
    expect(tracker.push(11)).toBe(0);
    expect(tracker.push(12)).toBe(0);
    expect(tracker.gaps).toBe(0);
  });

  it("reports the number of missing chunks", () => {
    const tracker = new SequenceTracker();
    tracker.push(0);
    tracker.push(1);
    expect(tracker.push(5)).toBe(3);
    expect(tracker.gaps).toBe(1);
    expect(tracker.push(6)).toBe(0);
  });

  it("starts fresh after reset", () => {
    const tracker = new SequenceTracker();
    tracker.push(0);
    tracker.reset();
    expect(tracker.push(100)).toBe(0);
  });
});
