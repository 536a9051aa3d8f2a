import { describe, expect, it, vi } from "vitest";

import { Throttle, ViewerClient } from "../src/client.js";

class FakeSocket {
  binaryType = "";
  sent: string[] = [];
  onopen: ((ev?: unknown) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  send(data: string) {
    this.sent.push(data);
  }
  close() {
    this.onclose?.();
  }
}

function frame(frameId: number): ArrayBuffer {
  const buf = new ArrayBuffer(20);
  const view = new DataView(buf);
  view.setUint32(0, 0x46534748, true);
  view.setUint32(4, frameId, true);
  view.setUint16(8, 2, true);
  view.setUint16(10, 2, true);
  return buf;
}

describe("throttle", () => {
  it("coalesces repeated channel updates and caps the send rate", () => {
    let t = 0;
    const th = new Throttle(60, () => t);
    th.put("pose", "p1");
    th.put("pose", "p2");
    th.put("camera", "c1");
    t = 100;
    expect(th.drain().sort()).toEqual(["c1", "p2"]); // newest pose wins
    th.put("pose", "p3");
    t = 105; // within 1000/60 ms of the last flush
    expect(th.drain()).toEqual([]);
    t = 120;
    expect(th.drain()).toEqual(["p3"]);
  });

  it("sends at most maxHz messages per second per channel", () => {
    let t = 0;
    const th = new Throttle(60, () => t);
    let sends = 0;
    for (let i = 0; i < 1000; i++) {
      t = i; // one candidate update every millisecond
      th.put("camera", `c${i}`);
      sends += th.drain().length;
    }
    expect(sends).toBeLessThanOrEqual(61);
  });
});

describe("viewer client", () => {
  it("drops stale frames and reports monotone ids", () => {
    const socks: FakeSocket[] = [];
    const seen: number[] = [];
    const client = new ViewerClient(
      "ws://x",
      {
        onFrame: (id) => seen.push(id),
        onMessage: () => {},
        onStatus: () => {},
      },
      () => {
        const s = new FakeSocket();
        socks.push(s);
        return s;
      },
    );
    client.connect();
    const ws = socks[0];
    ws.onopen?.();
    ws.onmessage?.({ data: frame(1) });
    ws.onmessage?.({ data: frame(3) });
    ws.onmessage?.({ data: frame(2) });
    ws.onmessage?.({ data: frame(4) });
    client.close();
    expect(seen).toEqual([1, 3, 4]);
  });

  it("reconnects with backoff after a drop and surfaces status", () => {
    vi.useFakeTimers();
    const socks: FakeSocket[] = [];
    const status: [boolean, number][] = [];
    const client = new ViewerClient(
      "ws://x",
      { onFrame: () => {}, onMessage: () => {}, onStatus: (c, a) => status.push([c, a]) },
      () => {
        const s = new FakeSocket();
        socks.push(s);
        return s;
      },
    );
    client.connect();
    socks[0].onopen?.();
    socks[0].onclose?.(); // server dropped
    expect(status).toContainEqual([false, 1]);
    vi.advanceTimersByTime(600);
    expect(socks.length).toBe(2); // reconnect attempt created a new socket
    socks[1].onopen?.();
    expect(status[status.length - 1]).toEqual([true, 0]);
    client.close();
    vi.useRealTimers();
  });

  it("routes info responses into client.info", () => {
    const socks: FakeSocket[] = [];
    const client = new ViewerClient(
      "ws://x",
      { onFrame: () => {}, onMessage: () => {}, onStatus: () => {} },
      () => {
        const s = new FakeSocket();
        socks.push(s);
        return s;
      },
    );
    client.connect();
    socks[0].onopen?.();
    socks[0].onmessage?.({
      data: '{"type":"info","n_joints":8,"parents":[-1],"n_gaussians":10,"resolution":[64,64]}',
    });
    expect(client.info?.n_joints).toBe(8);
    client.close();
  });
});
