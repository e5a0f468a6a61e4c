/**
 * Signal meters for the live view: RMS level, a small radix-2 FFT, and a
 * rolling spectrogram/waveform window. All numbers displayed in the UI
 * come from received samples; nothing here re-synthesizes anything.
 */

export function rms(samples: Float32Array | number[]): number {
  const n = samples.length;
  if (n === 0) return 0;
  let acc = 0;
  for (let i = 0; i < n; i++) acc += samples[i] * samples[i];
  return Math.sqrt(acc / n);
}

/** In-place iterative radix-2 FFT over interleaved re/im arrays. */
function fftRadix2(re: Float64Array, im: Float64Array): void {
  const n = re.length;
  if ((n & (n - 1)) !== 0) throw new Error(`FFT size must be a power of two, got ${n}`);
  for (let i = 1, j = 0; i < n; i++) {
    let bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      [re[i], re[j]] = [re[j], re[i]];
      [im[i], im[j]] = [im[j], im[i]];
    }
  }
  for (let len = 2; len <= n; len <<= 1) {
    const angle = (-2 * Math.PI) / len;
    const wRe = Math.cos(angle);
    const wIm = Math.sin(angle);
    for (let i = 0; i < n; i += len) {
      let curRe = 1;
      let curIm = 0;
      for (let j = 0; j < len / 2; j++) {
        const aRe = re[i + j];
        const aIm = im[i + j];
        const bRe = re[i + j + len / 2] * curRe - im[i + j + len / 2] * curIm;
        const bIm = re[i + j + len / 2] * curIm + im[i + j + len / 2] * curRe;
        re[i + j] = aRe + bRe;
        im[i + j] = aIm + bIm;
        re[i + j + len / 2] = aRe - bRe;
        im[i + j + len / 2] = aIm - bIm;
        const nextRe = curRe * wRe - curIm * wIm;
        curIm = curRe * wIm + curIm * wRe;
        curRe = nextRe;
      }
    }
  }
}

/** Hann-windowed magnitude spectrum (non-negative bins, size n/2+1). */
export function fftMagnitudes(samples: Float32Array): Float32Array {
  const n = samples.length;
  const re = new Float64Array(n);
  const im = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    const w = 0.5 * (1 - Math.cos((2 * Math.PI * i) / n));
    re[i] = samples[i] * w;
  }
  fftRadix2(re, im);
  const out = new Float32Array(n / 2 + 1);
  for (let k = 0; k <= n / 2; k++) {
    out[k] = Math.hypot(re[k], im[k]);
  }
  return out;
}

/** Fixed-length rolling sample window (waveform view, spectrogram feed). */
export class RollingWindow {
  private buffer: Float32Array;
  private filled = 0;

  constructor(readonly length: number) {
    this.buffer = new Float32Array(length);
  }

  push(samples: Float32Array): void {
    const n = samples.length;
    if (n >= this.length) {
      this.buffer.set(samples.subarray(n - this.length));
      this.filled = this.length;
      return;
    }
    this.buffer.copyWithin(0, n);
    this.buffer.set(samples, this.length - n);
    this.filled = Math.min(this.length, this.filled + n);
  }

  /** Oldest-to-newest snapshot, zero-padded while filling. */
  snapshot(): Float32Array {
    return this.buffer.slice();
  }

  get sampleCount(): number {
    return this.filled;
  }
}
