// Wire protocol: JSON text frames out, JSON or framed-PNG binary frames in.

import type { Quat, Vec3 } from "./math.js";

export interface PoseMessage {
  type: "pose";
  joints: { id: number; quat: [number, number, number, number] }[];
  root?: [number, number, number];
}

export interface CameraMessage {
  type: "camera";
  eye: Vec3;
  target: Vec3;
  up: Vec3;
  fov_deg: number;
}

export interface ResetMessage {
  type: "reset";
}

export interface InfoRequest {
  type: "info";
}

export type ClientMessage = PoseMessage | CameraMessage | ResetMessage | InfoRequest;

export interface InfoResponse {
  type: "info";
  n_joints: number;
  parents: number[];
  n_gaussians: number;
  resolution: [number, number];
}

export interface StatsMessage {
  type: "stats";
  fps: number;
  lbs_ms: number;
  raster_ms: number;
}

export interface ErrorMessage {
  type: "error";
  msg: string;
}

export type ServerMessage = InfoResponse | StatsMessage | ErrorMessage;

export function encodePose(joints: { id: number; quat: Quat }[], root?: Vec3): string {
  const msg: PoseMessage = {
    type: "pose",
    joints: joints.map((j) => ({ id: j.id, quat: [j.quat[0], j.quat[1], j.quat[2], j.quat[3]] })),
  };
  if (root) msg.root = [root[0], root[1], root[2]];
  return JSON.stringify(msg);
}

export function encodeCamera(eye: Vec3, target: Vec3, up: Vec3, fovDeg: number): string {
  const msg: CameraMessage = { type: "camera", eye, target, up, fov_deg: fovDeg };
  return JSON.stringify(msg);
}

export function encodeReset(): string {
  return JSON.stringify({ type: "reset" });
}

export function encodeInfoRequest(): string {
  return JSON.stringify({ type: "info" });
}

export function parseServerMessage(text: string): ServerMessage {
  const obj = JSON.parse(text);
  if (obj.type === "info" || obj.type === "stats" || obj.type === "error") {
    return obj as ServerMessage;
  }
  throw new Error(`unknown server message type: ${obj.type}`);
}

export interface FrameHeader {
  frameId: number;
  width: number;
  height: number;
}

export const FRAME_HEADER_BYTES = 16;
const FRAME_MAGIC = 0x46534748; // "HGSF" little-endian

/** Parse the 16-byte binary frame header; the PNG payload follows it. */
export function parseFrameHeader(buf: ArrayBuffer): FrameHeader {
  if (buf.byteLength < FRAME_HEADER_BYTES) {
    throw new Error(`frame too short: ${buf.byteLength} bytes`);
  }
  const view = new DataView(buf);
  if (view.getUint32(0, true) !== FRAME_MAGIC) {
    throw new Error("bad frame magic (expected HGSF)");
  }
  return {
    frameId: view.getUint32(4, true),
    width: view.getUint16(8, true),
    height: view.getUint16(10, true),
  };
}

export function framePayload(buf: ArrayBuffer): ArrayBuffer {
  return buf.slice(FRAME_HEADER_BYTES);
}
