// WebSocket session wrapper: reconnect with backoff, outbound coalescing
// (at most MAX_SEND_HZ messages per second, newest state wins), inbound
// routing of frames and JSON messages.

import { parseFrameHeader, framePayload, parseServerMessage } from "./protocol.js";
import type { InfoResponse, ServerMessage } from "./protocol.js";

export const MAX_SEND_HZ = 60;

export interface ClientCallbacks {
  onFrame: (frameId: number, png: ArrayBuffer, width: number, height: number) => void;
  onMessage: (msg: ServerMessage) => void;
  onStatus: (connected: boolean, attempt: number) => void;
}

type WebSocketLike = {
  binaryType: string;
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
};

export type SocketFactory = (url: string) => WebSocketLike;

/** Coalesces outbound messages per channel; at most one send per interval. */
export class Throttle {
  private pending = new Map<string, string>();
  private lastFlush = 0;
  private readonly intervalMs: number;

  constructor(maxHz: number = MAX_SEND_HZ, private now: () => number = () => Date.now()) {
    this.intervalMs = 1000 / maxHz;
  }

  put(channel: string, payload: string): void {
    this.pending.set(channel, payload); // newest state per channel wins
  }

  /** Returns the messages to send now, or [] when still inside the interval. */
  drain(): string[] {
    if (this.pending.size === 0) return [];
    const t = this.now();
    if (t - this.lastFlush < this.intervalMs) return [];
    this.lastFlush = t;
    const out = [...this.pending.values()];
    this.pending.clear();
    return out;
  }

  hasPending(): boolean {
    return this.pending.size > 0;
  }
}

export class ViewerClient {
  info: InfoResponse | null = null;
  connected = false;
  attempt = 0;
  lastFrameId = 0;
  private ws: WebSocketLike | null = null;
  private throttle = new Throttle();
  private flushTimer: ReturnType<typeof setInterval> | null = null;
  private closedByUser = false;

  constructor(
    private url: string,
    private callbacks: ClientCallbacks,
    private socketFactory: SocketFactory = (u) => new WebSocket(u) as unknown as WebSocketLike,
  ) {}

  connect(): void {
    this.closedByUser = false;
    this.open();
    if (!this.flushTimer) {
      this.flushTimer = setInterval(() => this.flush(), 1000 / MAX_SEND_HZ);
    }
  }

  close(): void {
    this.closedByUser = true;
    if (this.flushTimer) clearInterval(this.flushTimer);
    this.flushTimer = null;
    this.ws?.close();
  }

  /** Queue a message; coalesced per channel ("pose", "camera", ...). */
  send(channel: string, payload: string): void {
    this.throttle.put(channel, payload);
    this.flush();
  }

  sendImmediate(payload: string): void {
    if (this.connected && this.ws) this.ws.send(payload);
  }

  private flush(): void {
    if (!this.connected || !this.ws) return;
    for (const payload of this.throttle.drain()) {
      this.ws.send(payload);
    }
  }

  private open(): void {
    const ws = this.socketFactory(this.url);
    this.ws = ws;
    ws.binaryType = "arraybuffer";
    ws.onopen = () => {
      this.connected = true;
      this.attempt = 0;
      this.callbacks.onStatus(true, 0);
    };
    ws.onmessage = (ev) => {
      if (typeof ev.data === "string") {
        const msg = parseServerMessage(ev.data);
        if (msg.type === "info") this.info = msg;
        this.callbacks.onMessage(msg);
        return;
      }
      const buf = ev.data as ArrayBuffer;
      const header = parseFrameHeader(buf);
      if (header.frameId <= this.lastFrameId) return; // stale frame: drop
      this.lastFrameId = header.frameId;
      this.callbacks.onFrame(header.frameId, framePayload(buf), header.width, header.height);
    };
    ws.onclose = () => {
      this.connected = false;
      if (this.closedByUser) return;
      this.attempt += 1;
      this.callbacks.onStatus(false, this.attempt);
      const delay = Math.min(500 * 2 ** (this.attempt - 1), 8000);
      setTimeout(() => {
        if (!this.closedByUser) this.open();
      }, delay);
    };
    ws.onerror = () => {
      /* onclose follows and drives the reconnect */
    };
  }
}
