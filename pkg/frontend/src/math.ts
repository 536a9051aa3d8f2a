// Quaternion and orbit-camera math for the viewer controls.

export type Quat = [number, number, number, number]; // (w, x, y, z)
export type Vec3 = [number, number, number];

export function quatNorm(q: Quat): number {
  return Math.hypot(q[0], q[1], q[2], q[3]);
}

export function quatNormalize(q: Quat): Quat {
  const n = quatNorm(q);
  return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
}

export function quatMultiply(a: Quat, b: Quat): Quat {
  const [aw, ax, ay, az] = a;
  const [bw, bx, by, bz] = b;
  return [
    aw * bw - ax * bx - ay * by - az * bz,
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
  ];
}

export function quatFromAxisAngle(axis: Vec3, angleRad: number): Quat {
  const n = Math.hypot(axis[0], axis[1], axis[2]) || 1;
  const h = angleRad / 2;
  const s = Math.sin(h) / n;
  return [Math.cos(h), axis[0] * s, axis[1] * s, axis[2] * s];
}

/** Intrinsic XYZ Euler angles (degrees) -> unit quaternion. */
export function quatFromEulerXYZ(xDeg: number, yDeg: number, zDeg: number): Quat {
  const d = Math.PI / 180;
  const qx = quatFromAxisAngle([1, 0, 0], xDeg * d);
  const qy = quatFromAxisAngle([0, 1, 0], yDeg * d);
  const qz = quatFromAxisAngle([0, 0, 1], zDeg * d);
  return quatNormalize(quatMultiply(quatMultiply(qx, qy), qz));
}

export interface Orbit {
  azimuthDeg: number;
  elevationDeg: number;
  distance: number;
  target: Vec3;
}

/** Camera eye for an orbit state; azimuth spins about the world up axis. */
export function orbitEye(o: Orbit): Vec3 {
  const d = Math.PI / 180;
  const az = o.azimuthDeg * d;
  const el = o.elevationDeg * d;
  return [
    o.target[0] + o.distance * Math.sin(az) * Math.cos(el),
    o.target[1] + o.distance * Math.sin(el),
    o.target[2] - o.distance * Math.cos(az) * Math.cos(el),
  ];
}

export function clamp(v: number, lo: number, hi: number): number {
  return Math.min(Math.max(v, lo), hi);
}
