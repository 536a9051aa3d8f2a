import { describe, expect, it } from "vitest";

import {
  FRAME_HEADER_BYTES,
  encodeCamera,
  encodePose,
  encodeReset,
  framePayload,
  parseFrameHeader,
  parseServerMessage,
} from "../src/protocol.js";

function makeFrame(frameId: number, w: number, h: number, payload: number[]): ArrayBuffer {
  const buf = new ArrayBuffer(FRAME_HEADER_BYTES + payload.length);
  const view = new DataView(buf);
  view.setUint32(0, 0x46534748, true); // "HGSF"
  view.setUint32(4, frameId, true);
  view.setUint16(8, w, true);
  view.setUint16(10, h, true);
  new Uint8Array(buf, FRAME_HEADER_BYTES).set(payload);
  return buf;
}

describe("outbound encoding", () => {
  it("pose message shape matches the wire contract", () => {
    const text = encodePose([{ id: 3, quat: [1, 0, 0, 0] }], [0.1, 0.2, 0.3]);
    const obj = JSON.parse(text);
    expect(obj).toEqual({
      type: "pose",
      joints: [{ id: 3, quat: [1, 0, 0, 0] }],
      root: [0.1, 0.2, 0.3],
    });
  });

  it("camera message carries eye/target/up/fov_deg", () => {
    const obj = JSON.parse(encodeCamera([1, 2, 3], [0, 0, 0], [0, 1, 0], 55));
    expect(obj.type).toBe("camera");
    expect(obj.fov_deg).toBe(55);
    expect(obj.eye).toEqual([1, 2, 3]);
  });

  it("reset is minimal", () => {
    expect(JSON.parse(encodeReset())).toEqual({ type: "reset" });
  });
});

describe("inbound parsing", () => {
  it("parses stats and info, rejects unknown types", () => {
    const stats = parseServerMessage('{"type":"stats","fps":12.5,"lbs_ms":1.5,"raster_ms":20}');
    expect(stats.type).toBe("stats");
    const info = parseServerMessage(
      '{"type":"info","n_joints":8,"parents":[-1,0],"n_gaussians":100,"resolution":[256,256]}',
    );
    expect(info.type).toBe("info");
    expect(() => parseServerMessage('{"type":"surprise"}')).toThrow(/unknown/);
  });

  it("parses frame headers and splits payloads", () => {
    const buf = makeFrame(42, 320, 200, [9, 8, 7]);
    const header = parseFrameHeader(buf);
    expect(header).toEqual({ frameId: 42, width: 320, height: 200 });
    expect([...new Uint8Array(framePayload(buf))]).toEqual([9, 8, 7]);
  });

  it("rejects bad magic and short buffers", () => {
    const bad = makeFrame(1, 2, 2, []);
    new DataView(bad).setUint32(0, 0xdeadbeef, true);
    expect(() => parseFrameHeader(bad)).toThrow(/magic/);
    expect(() => parseFrameHeader(new ArrayBuffer(4))).toThrow(/short/);
  });
});
