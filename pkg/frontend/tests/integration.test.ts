// Live integration against the python render service: initial frame latency,
// slider-driven pose updates, 30-frame clip scrub. Requires python3 with the
// gsavatar package installed (skipped otherwise).

import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { quatNorm } from "../src/math.js";
import { parseClip } from "../src/clip.js";
import { encodePose } from "../src/protocol.js";

const PORT = 8765 + (process.pid % 1000);
const hasPython = (() => {
  try {
    execFileSync("python3", ["-c", "import gsavatar"], { stdio: "ignore" });
    return true;
  } catch {
    return false;
  }
})();

let server: ChildProcess | null = null;
let workdir = "";

function makeAssetAndClip(dir: string): void {
  const script = `
import numpy as np
from gsavatar import asset as A, body as B
body = B.make_toy_body(seed=3, n_vertices=260, n_joints=8)
rng = np.random.default_rng(1)
nv, k = body.n_vertices, 2
asset = A.CanonicalGaussianAsset(
    body=body,
    offsets=rng.normal(0, 0.003, (nv, k, 3)).astype(np.float32),
    quats=B.quat_normalize(rng.standard_normal((nv, k, 4)).astype(np.float32)),
    scales=rng.uniform(0.02, 0.05, (nv, k, 3)).astype(np.float32),
    opacities=rng.uniform(0.5, 0.9, (nv, k)).astype(np.float32),
    colors=rng.random((nv, k, 3)).astype(np.float32),
)
A.save_asset(${JSON.stringify(join("DIR", "subject.hgsa"))}.replace("DIR", r"${dir}"), asset)
# 30 strictly different poses so every scrubbed frame is distinct
from gsavatar.camera import look_at
center = body.rest_vertices.mean(axis=0)
radius = float(np.linalg.norm(body.rest_vertices - center, axis=1).max())
cam = look_at(center + [0, 0.1, -2.4 * radius], center, [0, 1, 0], 50, 64, 64)
frames = []
for i in range(30):
    pose = B.canonical_pose(body)
    pose.joint_rotations[3] = B.quat_from_axis_angle([0, 0, 1], 0.04 * (i + 1))
    frames.append((pose, cam))
A.save_clip(${JSON.stringify(join("DIR", "clip.json"))}.replace("DIR", r"${dir}"), A.AnimationClip(frames, 30.0))
`;
  execFileSync("python3", ["-c", script], { stdio: "inherit" });
}

async function waitForServer(): Promise<void> {
  for (let i = 0; i < 120; i++) {
    try {
      const res = await fetch(`http://127.0.0.1:${PORT}/healthz`);
      if (res.ok) return;
    } catch {
      /* not up yet */
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error("server did not come up");
}

function nextBinary(ws: WebSocket): Promise<Buffer> {
  return new Promise((resolve, reject) => {
    const onErr = (e: Error) => {
      ws.off("message", onMsg);
      reject(e);
    };
    const onMsg = (data: WebSocket.RawData, isBinary: boolean) => {
      if (!isBinary) return; // stats frames pass through
      ws.off("message", onMsg);
      ws.off("error", onErr);
      resolve(data as Buffer);
    };
    ws.on("message", onMsg);
    ws.once("error", onErr);
    setTimeout(() => onErr(new Error("frame timeout")), 15000);
  });
}

describe.skipIf(!hasPython)("live serve session", () => {
  beforeAll(async () => {
    workdir = mkdtempSync(join(tmpdir(), "viewer-it-"));
    makeAssetAndClip(workdir);
    server = spawn(
      "python3",
      ["-m", "gsavatar.cli", "serve", "--asset", join(workdir, "subject.hgsa"),
       "--port", String(PORT), "--res", "64"],
      { stdio: "ignore" },
    );
    await waitForServer();
  }, 120000);

  afterAll(() => {
    server?.kill();
    if (workdir) rmSync(workdir, { recursive: true, force: true });
  });

  it("delivers the initial frame within a second of connecting", async () => {
    const ws = new WebSocket(`ws://127.0.0.1:${PORT}/ws`);
    await new Promise((resolve, reject) => {
      ws.once("open", resolve);
      ws.once("error", reject);
    });
    const t0 = Date.now();
    const frame = await nextBinary(ws);
    expect(Date.now() - t0).toBeLessThan(1000);
    expect(frame.subarray(0, 4).toString("latin1")).toBe("HGSF");
    ws.close();
  }, 30000);

  it("moving one joint slider changes the displayed frame", async () => {
    const ws = new WebSocket(`ws://127.0.0.1:${PORT}/ws`);
    await new Promise((r) => ws.once("open", r));
    const first = await nextBinary(ws);
    const quat: [number, number, number, number] = [Math.cos(0.4), 0, 0, Math.sin(0.4)];
    expect(Math.abs(quatNorm(quat) - 1)).toBeLessThanOrEqual(1e-6);
    ws.send(encodePose([{ id: 3, quat }]));
    const second = await nextBinary(ws);
    expect(second.subarray(16).equals(first.subarray(16))).toBe(false);
    ws.close();
  }, 30000);

  it("scrubbing a 30-frame clip replays 30 distinct frames in order", async () => {
    const clip = parseClip(readFileSync(join(workdir, "clip.json"), "utf-8"));
    expect(clip.frames.length).toBe(30);
    const ws = new WebSocket(`ws://127.0.0.1:${PORT}/ws`);
    await new Promise((r) => ws.once("open", r));
    await nextBinary(ws); // initial frame
    const hashes: string[] = [];
    let lastId = 0;
    for (const frame of clip.frames) {
      const joints = frame.joints.map((q, id) => {
        expect(Math.abs(quatNorm(q as [number, number, number, number]) - 1)).toBeLessThanOrEqual(1e-5);
        return { id, quat: q as [number, number, number, number] };
      });
      ws.send(JSON.stringify({ type: "pose", joints, root: frame.root }));
      const data = await nextBinary(ws);
      const id = data.readUInt32LE(4);
      expect(id).toBeGreaterThan(lastId);
      lastId = id;
      const { createHash } = await import("node:crypto");
      hashes.push(createHash("sha1").update(data.subarray(16)).digest("hex"));
    }
    expect(new Set(hashes).size).toBe(30);
    ws.close();
  }, 60000);
});
