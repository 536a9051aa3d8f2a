// Browser entry point: joint sliders, orbit/zoom, clip timeline, live stats.
// Server endpoint comes from the ?ws= query parameter.

import { ViewerClient } from "./client.js";
import { orbitEye } from "./math.js";
import { parseClip, type Clip } from "./clip.js";
import { encodeCamera, encodeInfoRequest, encodePose, encodeReset } from "./protocol.js";
import {
  allJointQuaternions,
  applyOrbitDrag,
  applyZoom,
  initialState,
  setSlider,
  acceptFrame,
  type UiState,
} from "./state.js";

const params = new URLSearchParams(location.search);
const wsUrl = params.get("ws") ?? `ws://${location.host}/ws`;

const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const banner = document.getElementById("banner")!;
const statsEl = document.getElementById("stats")!;
const slidersEl = document.getElementById("sliders")!;
const timeline = document.getElementById("timeline") as HTMLInputElement;
const clipInput = document.getElementById("clip-file") as HTMLInputElement;

let state: UiState = initialState(0);
let clip: Clip | null = null;
let lastFrameAt = performance.now();

const client = new ViewerClient(wsUrl, {
  onFrame: (frameId, png, width, height) => {
    if (!acceptFrame(state, frameId)) return;
    const blob = new Blob([png], { type: "image/png" });
    createImageBitmap(blob).then((bmp) => {
      canvas.width = width;
      canvas.height = height;
      ctx.drawImage(bmp, 0, 0);
      const now = performance.now();
      const latency = now - lastFrameAt;
      lastFrameAt = now;
      statsEl.textContent = `frame ${frameId} | ${latency.toFixed(0)} ms since last` +
        (state.lastStats
          ? ` | server ${state.lastStats.fps.toFixed(1)} fps ` +
            `(lbs ${state.lastStats.lbs_ms.toFixed(1)} ms, raster ${state.lastStats.raster_ms.toFixed(1)} ms)`
          : "");
    });
  },
  onMessage: (msg) => {
    if (msg.type === "info") {
      state = initialState(msg.n_joints);
      buildSliders(msg.n_joints);
    } else if (msg.type === "stats") {
      state.lastStats = msg;
    } else {
      console.warn("server error:", msg.msg);
    }
  },
  onStatus: (connected, attempt) => {
    banner.style.display = connected ? "none" : "block";
    banner.textContent = connected ? "" : `disconnected - retrying (attempt ${attempt})`;
    if (connected) client.sendImmediate(encodeInfoRequest());
  },
});

function sendPose(): void {
  client.send("pose", encodePose(allJointQuaternions(state)));
}

function sendCamera(): void {
  client.send("camera", encodeCamera(orbitEye(state.orbit), state.orbit.target, [0, 1, 0], state.fovDeg));
}

function buildSliders(nJoints: number): void {
  slidersEl.innerHTML = "";
  for (let j = 0; j < nJoints; j++) {
    const row = document.createElement("div");
    row.className = "joint-row";
    const label = document.createElement("span");
    label.textContent = `joint ${j}`;
    row.appendChild(label);
    for (const axis of ["x", "y", "z"] as const) {
      const slider = document.createElement("input");
      slider.type = "range";
      slider.min = "-90";
      slider.max = "90";
      slider.value = "0";
      slider.title = `${axis} rotation`;
      slider.addEventListener("input", () => {
        setSlider(state, j, axis, Number(slider.value));
        sendPose();
      });
      row.appendChild(slider);
    }
    slidersEl.appendChild(row);
  }
}

// orbit drag / zoom
let dragging = false;
let lastX = 0;
let lastY = 0;
canvas.addEventListener("mousedown", (e) => {
  dragging = true;
  lastX = e.clientX;
  lastY = e.clientY;
});
window.addEventListener("mouseup", () => (dragging = false));
window.addEventListener("mousemove", (e) => {
  if (!dragging) return;
  applyOrbitDrag(state, e.clientX - lastX, e.clientY - lastY);
  lastX = e.clientX;
  lastY = e.clientY;
  sendCamera();
});
canvas.addEventListener("wheel", (e) => {
  e.preventDefault();
  applyZoom(state, e.deltaY);
  sendCamera();
});

// clip playback: scrub sends the pose of the selected frame
clipInput.addEventListener("change", async () => {
  const file = clipInput.files?.[0];
  if (!file) return;
  clip = parseClip(await file.text());
  timeline.max = String(clip.frames.length - 1);
  timeline.disabled = false;
});
timeline.addEventListener("input", () => {
  if (!clip) return;
  const frame = clip.frames[Number(timeline.value)];
  const joints = frame.joints.map((q, id) => ({ id, quat: q as [number, number, number, number] }));
  client.send("pose", JSON.stringify({ type: "pose", joints, root: frame.root }));
});

document.getElementById("reset")!.addEventListener("click", () => {
  state = initialState(state.joints.length);
  buildSliders(state.joints.length);
  client.sendImmediate(encodeReset());
});

client.connect();
