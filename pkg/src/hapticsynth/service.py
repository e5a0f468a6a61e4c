"""Websocket streaming endpoint for live render sessions.

Protocol (one session per connection):
  client -> server, JSON text:
    {"type": "hello", "texture_id": str, "synthesis_rate_hz": float?}
      exactly once, first message
    {"type": "state", "t_s": float, "x_mm": float, "y_mm": float, "z_mm": float}
      at the client's pointer rate; timestamps from a monotonic clock,
      strictly increasing
  server -> client:
    one JSON text reply {"type": "ready", "scale_to_m_s2": float,
                         "synthesis_rate_hz": float, "chunk_samples": int,
                         "loop_rate_hz": float}
    then binary chunks, 20 ms each: 8-byte header of uint32 sequence,
    uint16 sample count, uint16 dropped-chunk count (all little-endian),
    followed by float32 samples normalized to [-1, 1] by the reported
    scale factor.

The server holds the latest client state onto the 500 Hz control loop
(zero-order hold): each state message is applied at the loop whose time
matches its client timestamp, so a replayed recording renders the same
loop-by-loop positions the batch path sees. While the pointer is silent
the held position does not move, the derived velocity is zero, and
gating emits zeros; an idle session therefore streams zero chunks. If
the client cannot keep up, whole chunks are dropped (never partial) and
the count is reported in the next delivered header. Sequence numbers of
delivered chunks are contiguous.

Close codes: 4400 protocol violation, 4404 unknown texture, 4500 render
failure.
"""

from __future__ import annotations

import asyncio
import json
import struct
import time

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from hapticsynth import __version__
from hapticsynth.engine import ProbeSample, RenderConfig, RenderSession, render_step
from hapticsynth.errors import InvalidArgumentError
from hapticsynth.model import TextureLibrary, WeightSet

CHUNK_SECONDS = 0.020
FULL_SCALE_M_S2 = 20.0
SEND_QUEUE_CHUNKS = 16
CLOSE_PROTOCOL = 4400
CLOSE_UNKNOWN_TEXTURE = 4404
CLOSE_RENDER_ERROR = 4500

_HEADER = struct.Struct("<IHH")


def pack_chunk(sequence: int, samples: np.ndarray, dropped: int) -> bytes:
    """8-byte header (sequence, sample count, dropped count) + float32 LE."""
    payload = np.ascontiguousarray(samples, dtype="<f4")
    return _HEADER.pack(sequence & 0xFFFFFFFF, payload.size, min(dropped, 0xFFFF)) \
        + payload.tobytes()


def unpack_chunk(data: bytes) -> tuple[int, int, int, np.ndarray]:
    seq, count, dropped = _HEADER.unpack_from(data, 0)
    samples = np.frombuffer(data, dtype="<f4", count=count, offset=_HEADER.size)
    return seq, count, dropped, samples


class _Session:
    """Server-side state for one live connection."""

    def __init__(self, config: RenderConfig, render: RenderSession):
        self.config = config
        self.render = render
        self.loop_dt = 1.0 / config.loop_rate_hz
        self.chunk_loops = int(round(CHUNK_SECONDS * config.loop_rate_hz))
        self.pending: list[tuple[float, tuple[float, float, float]]] = []
        self.held_position: tuple[float, float, float] | None = None
        self.client_offset: float | None = None
        self.loops_done = 0
        self.sequence = 0
        self.dropped_since_sent = 0
        self.last_client_t: float | None = None

    def push_state(self, t_s: float, position: tuple[float, float, float]) -> None:
        if self.last_client_t is not None and t_s <= self.last_client_t:
            raise InvalidArgumentError("state timestamps must strictly increase")
        self.last_client_t = t_s
        self.pending.append((t_s, position))

    def render_chunk(self) -> np.ndarray:
        """Render the next 20 ms worth of loops (zero-order-held input)."""
        hop = self.render.geometry.hop
        out = np.zeros(self.chunk_loops * hop, dtype=np.float32)
        for j in range(self.chunk_loops):
            loop_index = self.loops_done
            loop_time = loop_index * self.loop_dt
            # Apply every queued state due at or before this loop.
            while self.pending:
                t_client, position = self.pending[0]
                if self.client_offset is None:
                    self.client_offset = t_client - loop_time
                if t_client - self.client_offset <= loop_time + 1e-9:
                    self.held_position = position
                    self.pending.pop(0)
                else:
                    break
            if self.held_position is None:
                # No client state yet: render state stays pristine so a
                # later replay matches the batch path exactly.
                self.loops_done += 1
                continue
            probe = ProbeSample(t_s=loop_time, position=self.held_position)
            samples, _ = render_step(self.render, probe)
            out[j * hop : (j + 1) * hop] = samples
            self.loops_done += 1
        return out


def create_app(
    weights: WeightSet,
    library: TextureLibrary,
    full_scale_m_s2: float = FULL_SCALE_M_S2,
    ui_dir: str | None = None,
) -> FastAPI:
    if len(library) == 0:
        raise InvalidArgumentError("refusing to serve an empty texture library")
    app = FastAPI(title="hapticsynth", version=__version__)

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "version": __version__,
            "texture_count": len(library),
            "texture_ids": [e.id for e in library.entries],
        }

    @app.websocket("/session")
    async def session_socket(ws: WebSocket):
        await ws.accept()
        try:
            first = json.loads(await ws.receive_text())
        except (WebSocketDisconnect, json.JSONDecodeError):
            await ws.close(code=CLOSE_PROTOCOL, reason="hello must be the first message")
            return
        if not isinstance(first, dict) or first.get("type") != "hello":
            await ws.close(code=CLOSE_PROTOCOL, reason="hello must be the first message")
            return
        try:
            texture = library.get(str(first.get("texture_id")))
        except KeyError:
            await ws.close(code=CLOSE_UNKNOWN_TEXTURE,
                           reason=f"texture not found: {first.get('texture_id')}")
            return
        try:
            config = RenderConfig(
                synthesis_rate_hz=float(first.get("synthesis_rate_hz", 500.0))
            )
            session = _Session(config, RenderSession(config, texture, weights))
        except InvalidArgumentError as exc:
            await ws.close(code=CLOSE_PROTOCOL, reason=str(exc))
            return

        await ws.send_text(json.dumps({
            "type": "ready",
            "scale_to_m_s2": full_scale_m_s2,
            "synthesis_rate_hz": config.synthesis_rate_hz,
            "chunk_samples": session.chunk_loops * session.render.geometry.hop,
            "loop_rate_hz": config.loop_rate_hz,
        }))

        out_queue: asyncio.Queue[bytes] = asyncio.Queue(maxsize=SEND_QUEUE_CHUNKS)
        closed = asyncio.Event()
        close_code: list[int | None] = [None]

        async def reader():
            try:
                while True:
                    message = json.loads(await ws.receive_text())
                    if message.get("type") != "state":
                        close_code[0] = CLOSE_PROTOCOL
                        break
                    session.push_state(
                        float(message["t_s"]),
                        (float(message["x_mm"]), float(message["y_mm"]),
                         float(message["z_mm"])),
                    )
            except WebSocketDisconnect:
                pass
            except (KeyError, TypeError, ValueError, InvalidArgumentError):
                close_code[0] = CLOSE_PROTOCOL
            finally:
                closed.set()

        async def ticker():
            started = time.monotonic()
            try:
                while not closed.is_set():
                    chunk = session.render_chunk()
                    scaled = np.clip(chunk / full_scale_m_s2, -1.0, 1.0)
                    packet = pack_chunk(
                        session.sequence, scaled, session.dropped_since_sent
                    )
                    try:
                        out_queue.put_nowait(packet)
                        session.sequence += 1
                        session.dropped_since_sent = 0
                    except asyncio.QueueFull:
                        session.dropped_since_sent += 1
                    next_due = started + session.loops_done * session.loop_dt
                    delay = next_due - time.monotonic()
                    if delay > 0:
                        await asyncio.sleep(delay)
            except Exception:
                close_code[0] = CLOSE_RENDER_ERROR
                closed.set()

        async def sender():
            try:
                while True:
                    packet = await out_queue.get()
                    await ws.send_bytes(packet)
            except (WebSocketDisconnect, RuntimeError):
                closed.set()

        tasks = [asyncio.create_task(t()) for t in (reader, ticker, sender)]
        await closed.wait()
        for task in tasks:
            task.cancel()
        try:
            if close_code[0] is not None:
                await ws.close(code=close_code[0])
            else:
                await ws.close()
        except RuntimeError:
            pass  # already closed by the peer

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
