// Client-held UI state: joint sliders, orbit camera, playback, last stats.

import { clamp, type Orbit, type Quat, quatFromEulerXYZ } from "./math.js";
import type { StatsMessage } from "./protocol.js";

export const SLIDER_LIMIT_DEG = 90;

export interface JointSliders {
  x: number; // degrees, clamped to +/- SLIDER_LIMIT_DEG per axis
  y: number;
  z: number;
}

export interface UiState {
  joints: JointSliders[];
  orbit: Orbit;
  fovDeg: number;
  playing: boolean;
  clipFrame: number;
  lastStats: StatsMessage | null;
  lastFrameId: number;
}

export function initialState(nJoints: number): UiState {
  return {
    joints: Array.from({ length: nJoints }, () => ({ x: 0, y: 0, z: 0 })),
    orbit: { azimuthDeg: 0, elevationDeg: 10, distance: 2.5, target: [0, 0.9, 0] },
    fovDeg: 50,
    playing: false,
    clipFrame: 0,
    lastStats: null,
    lastFrameId: 0,
  };
}

export function setSlider(state: UiState, joint: number, axis: keyof JointSliders, deg: number): void {
  state.joints[joint][axis] = clamp(deg, -SLIDER_LIMIT_DEG, SLIDER_LIMIT_DEG);
}

export function sliderQuaternion(s: JointSliders): Quat {
  return quatFromEulerXYZ(s.x, s.y, s.z);
}

export function allJointQuaternions(state: UiState): { id: number; quat: Quat }[] {
  return state.joints.map((s, id) => ({ id, quat: sliderQuaternion(s) }));
}

export function applyOrbitDrag(state: UiState, dxPixels: number, dyPixels: number): void {
  state.orbit.azimuthDeg = (state.orbit.azimuthDeg + dxPixels * 0.5) % 360;
  state.orbit.elevationDeg = clamp(state.orbit.elevationDeg + dyPixels * 0.4, -85, 85);
}

export function applyZoom(state: UiState, wheelDelta: number): void {
  const factor = Math.exp(wheelDelta * 0.001);
  state.orbit.distance = clamp(state.orbit.distance * factor, 0.2, 50);
}

/** Keep only frames with increasing ids; stale frames are dropped. */
export function acceptFrame(state: UiState, frameId: number): boolean {
  if (frameId <= state.lastFrameId) return false;
  state.lastFrameId = frameId;
  return true;
}
