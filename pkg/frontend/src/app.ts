/**
 * Browser probe pad: drag a virtual probe over a texture swatch; motion
 * streams to the synthesis service and the returned vibration plays as
 * audio with a live waveform and spectrogram.
 *
 * The audible output is a perceptual stand-in for a vibrotactile
 * actuator: the rendered band (<= 250 Hz) is audible, and a speaker is
 * the only transducer a desk setup has. Playback level does not claim
 * calibrated physical units; the RMS meter reports m/s^2 derived from
 * the scale factor the server declares.
 */

import { decodeChunk, ReadyMessage, SequenceTracker } from "./protocol.js";
import { JitterBuffer, upsampleLinear } from "./jitter.js";
import { fftMagnitudes, rms, RollingWindow } from "./meter.js";
import { PointerStreamer, PX_PER_MM } from "./pad.js";

const PLAYBACK_RATE_HZ = 16000;
const SPECTROGRAM_SECONDS = 1.0;
const FFT_SIZE = 256;

interface Elements {
  texture: HTMLSelectElement;
  connect: HTMLButtonElement;
  depth: HTMLInputElement;
  status: HTMLElement;
  rmsBar: HTMLElement;
  rmsText: HTMLElement;
  dropped: HTMLElement;
  rate: HTMLElement;
  pad: HTMLCanvasElement;
  waveform: HTMLCanvasElement;
  spectrogram: HTMLCanvasElement;
}

function el<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing element #${id}`);
  return found as T;
}

class PadApp {
  private ws: WebSocket | null = null;
  private ready: ReadyMessage | null = null;
  private audio: AudioContext | null = null;
  private nextStartTime = 0;
  private lastUpsampled = 0;
  private jitter = new JitterBuffer({ chunkSeconds: 0.02, targetChunks: 3 });
  private tracker = new SequenceTracker();
  private streamer = new PointerStreamer(() => performance.now() / 1000);
  private window500: RollingWindow;
  private droppedTotal = 0;
  private captured = false;
  private scale = 1.0;
  private elements: Elements;

  constructor(elements: Elements) {
    this.elements = elements;
    this.window500 = new RollingWindow(Math.round(SPECTROGRAM_SECONDS * 500));
    this.bindPad();
    this.bindControls();
    this.drawPadSurface();
    void this.loadTextures();
  }

  private async loadTextures(): Promise<void> {
    try {
      const response = await fetch("/health");
      const body = await response.json();
      for (const id of body.texture_ids ?? []) {
        const option = document.createElement("option");
        option.value = id;
        option.textContent = id;
        this.elements.texture.appendChild(option);
      }
      this.setStatus(`service ok, ${body.texture_count} textures`);
    } catch {
      this.setStatus("service unreachable; check `hapticsynth serve`", true);
    }
  }

  private bindControls(): void {
    this.elements.connect.addEventListener("click", () => {
      if (this.ws) {
        this.disconnect("disconnected");
      } else {
        this.connect();
      }
    });
    // Texture switching reconnects: one texture per session by protocol.
    this.elements.texture.addEventListener("change", () => {
      if (this.ws) {
        this.disconnect("texture changed; reconnecting");
        this.connect();
      }
    });
  }

  private connect(): void {
    const textureId = this.elements.texture.value;
    if (!textureId) {
      this.setStatus("no texture selected", true);
      return;
    }
    const url = `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}/session`;
    const ws = new WebSocket(url);
    ws.binaryType = "arraybuffer";
    this.ws = ws;
    ws.onopen = () => {
      ws.send(JSON.stringify({ type: "hello", texture_id: textureId }));
    };
    ws.onmessage = (event) => {
      if (typeof event.data === "string") {
        const message = JSON.parse(event.data);
        if (message.type === "ready") {
          this.onReady(message as ReadyMessage);
        }
        return;
      }
      this.onChunk(event.data as ArrayBuffer);
    };
    ws.onclose = (event) => {
      this.ws = null;
      this.stopAudio();
      this.setStatus(
        event.code >= 4400
          ? `closed by server: ${event.code} ${event.reason}`
          : "disconnected",
        event.code >= 4400
      );
      this.elements.connect.textContent = "connect";
    };
    ws.onerror = () => this.setStatus("connection error", true);
  }

  private disconnect(reason: string): void {
    this.ws?.close();
    this.ws = null;
    this.stopAudio();
    this.setStatus(reason);
    this.elements.connect.textContent = "connect";
  }

  private onReady(ready: ReadyMessage): void {
    this.ready = ready;
    this.scale = ready.scale_to_m_s2;
    this.tracker.reset();
    this.jitter.reset();
    this.droppedTotal = 0;
    this.streamer.reset();
    this.audio = new AudioContext({ sampleRate: PLAYBACK_RATE_HZ });
    this.nextStartTime = 0;
    this.lastUpsampled = 0;
    this.elements.connect.textContent = "disconnect";
    this.setStatus(
      `session ready: ${this.elements.texture.value} at ${ready.synthesis_rate_hz} Hz`
    );
  }

  private onChunk(buffer: ArrayBuffer): void {
    if (!this.ready) return;
    const chunk = decodeChunk(buffer);
    const missed = this.tracker.push(chunk.sequence);
    this.droppedTotal += chunk.dropped;
    if (missed > 0) {
      this.jitter.reset();
      this.setStatus(`sequence gap (${missed} chunks) - buffer reset`, true);
    }
    this.elements.dropped.textContent = String(this.droppedTotal);

    // Physical units for the meters; normalized samples for playback.
    const physical = new Float32Array(chunk.samples.length);
    for (let i = 0; i < chunk.samples.length; i++) {
      physical[i] = chunk.samples[i] * this.scale;
    }
    this.window500.push(physical);
    this.updateMeters(physical);
    this.drawWaveform();
    this.drawSpectrogramColumn();

    this.jitter.push(chunk.samples.slice());
    this.pumpAudio();
    this.elements.rate.textContent = String(this.streamer.messagesPerSecond);
  }

  private pumpAudio(): void {
    if (!this.audio || !this.ready) return;
    const factor = Math.round(PLAYBACK_RATE_HZ / this.ready.synthesis_rate_hz);
    for (;;) {
      const pending = this.nextStartTime - this.audio.currentTime;
      if (pending > 0.08) break; // keep ~4 chunks scheduled ahead
      const chunk = this.jitter.pull();
      if (!chunk) break;
      const upsampled = upsampleLinear(chunk, factor, this.lastUpsampled);
      this.lastUpsampled = chunk[chunk.length - 1] ?? this.lastUpsampled;
      const audioBuffer = this.audio.createBuffer(1, upsampled.length, PLAYBACK_RATE_HZ);
      audioBuffer.getChannelData(0).set(upsampled);
      const source = this.audio.createBufferSource();
      source.buffer = audioBuffer;
      source.connect(this.audio.destination);
      const start = Math.max(this.nextStartTime, this.audio.currentTime + 0.01);
      source.start(start);
      this.nextStartTime = start + audioBuffer.duration;
    }
  }

  private stopAudio(): void {
    void this.audio?.close();
    this.audio = null;
    this.jitter.reset();
    this.tracker.reset();
  }

  private bindPad(): void {
    const pad = this.elements.pad;
    const send = (event: PointerEvent) => {
      // The pointer path does minimal work: one message build + send.
      const rect = pad.getBoundingClientRect();
      const message = this.streamer.sample(
        this.captured,
        event.clientX - rect.left,
        event.clientY - rect.top,
        Number(this.elements.depth.value) / 100
      );
      if (message && this.ws?.readyState === WebSocket.OPEN) {
        this.ws.send(JSON.stringify(message));
      }
      this.drawProbe(event.clientX - rect.left, event.clientY - rect.top);
    };
    pad.addEventListener("pointerdown", (event) => {
      pad.setPointerCapture(event.pointerId);
      this.captured = true;
      send(event);
    });
    pad.addEventListener("pointermove", send);
    const release = (event: PointerEvent) => {
      if (this.captured && pad.hasPointerCapture(event.pointerId)) {
        pad.releasePointerCapture(event.pointerId);
      }
      this.captured = false;
      this.drawPadSurface();
    };
    pad.addEventListener("pointerup", release);
    pad.addEventListener("pointercancel", release);
  }

  private setStatus(text: string, warn = false): void {
    this.elements.status.textContent = text;
    this.elements.status.className = warn ? "status warn" : "status";
  }

  private updateMeters(physical: Float32Array): void {
    const level = rms(this.window500.snapshot());
    const percent = Math.min(100, (level / this.scale) * 100 * 4);
    this.elements.rmsBar.style.width = `${percent}%`;
    this.elements.rmsText.textContent = `${level.toFixed(3)} m/s²`;
    void physical;
  }

  private drawPadSurface(): void {
    const ctx = this.elements.pad.getContext("2d")!;
    const { width, height } = this.elements.pad;
    ctx.fillStyle = "#2a2620";
    ctx.fillRect(0, 0, width, height);
    ctx.strokeStyle = "#453e33";
    for (let mm = 0; mm * PX_PER_MM < width; mm += 10) {
      ctx.beginPath();
      ctx.moveTo(mm * PX_PER_MM, 0);
      ctx.lineTo(mm * PX_PER_MM, height);
      ctx.stroke();
      ctx.beginPath();
      ctx.moveTo(0, mm * PX_PER_MM);
      ctx.lineTo(width, mm * PX_PER_MM);
      ctx.stroke();
    }
    ctx.fillStyle = "#8a8070";
    ctx.font = "12px sans-serif";
    ctx.fillText("drag to explore (4 px = 1 mm)", 10, height - 10);
  }

  private drawProbe(x: number, y: number): void {
    this.drawPadSurface();
    const ctx = this.elements.pad.getContext("2d")!;
    ctx.beginPath();
    ctx.arc(x, y, 8, 0, 2 * Math.PI);
    ctx.fillStyle = this.captured ? "#e8b44a" : "#6a624f";
    ctx.fill();
  }

  private drawWaveform(): void {
    const canvas = this.elements.waveform;
    const ctx = canvas.getContext("2d")!;
    const data = this.window500.snapshot();
    ctx.fillStyle = "#14120e";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    ctx.strokeStyle = "#e8b44a";
    ctx.beginPath();
    const mid = canvas.height / 2;
    const gain = mid / (this.scale * 0.5 || 1);
    for (let i = 0; i < data.length; i++) {
      const x = (i / data.length) * canvas.width;
      const y = mid - data[i] * gain;
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    }
    ctx.stroke();
  }

  private drawSpectrogramColumn(): void {
    const canvas = this.elements.spectrogram;
    const ctx = canvas.getContext("2d")!;
    const snapshot = this.window500.snapshot();
    const tail = snapshot.subarray(snapshot.length - FFT_SIZE);
    const magnitudes = fftMagnitudes(new Float32Array(tail));
    // scroll left by one column
    ctx.drawImage(canvas, -1, 0);
    const column = ctx.createImageData(1, canvas.height);
    const bins = magnitudes.length;
    for (let y = 0; y < canvas.height; y++) {
      const bin = Math.floor(((canvas.height - 1 - y) / canvas.height) * bins);
      const value = Math.min(1, magnitudes[bin] / (this.scale * 2));
      const idx = y * 4;
      column.data[idx] = 30 + 225 * value;
      column.data[idx + 1] = 20 + 140 * value;
      column.data[idx + 2] = 14 + 40 * Math.sqrt(value);
      column.data[idx + 3] = 255;
    }
    ctx.putImageData(column, canvas.width - 1, 0);
  }
}

window.addEventListener("DOMContentLoaded", () => {
  new PadApp({
    texture: el<HTMLSelectElement>("texture"),
    connect: el<HTMLButtonElement>("connect"),
    depth: el<HTMLInputElement>("depth"),
    status: el<HTMLElement>("status"),
    rmsBar: el<HTMLElement>("rms-bar"),
    rmsText: el<HTMLElement>("rms-text"),
    dropped: el<HTMLElement>("dropped"),
    rate: el<HTMLElement>("rate"),
    pad: el<HTMLCanvasElement>("pad"),
    waveform: el<HTMLCanvasElement>("waveform"),
    spectrogram: el<HTMLCanvasElement>("spectrogram"),
  });
});
