"""Synthetic training data: toy body + procedural albedo + camera ring + poses.

Ground truth is the rasterized textured mesh; everything is reproducible
bit-exactly from the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .body import BodyModel, Pose, canonical_pose, joint_transforms, lbs_points, make_toy_body, quat_from_axis_angle
from .camera import Camera, look_at, rasterize_mesh
from .errors import ContractError


def procedural_albedo(body: BodyModel, seed: int) -> np.ndarray:
    """Per-vertex colors: broad stripes + a checker tint + smooth noise octaves."""
    rng = np.random.default_rng(seed)
    v = body.rest_vertices
    lo, hi = v.min(axis=0), v.max(axis=0)
    n = (v - lo) / np.maximum(hi - lo, 1e-6)
    base = np.array(rng.uniform(0.25, 0.75, 3), np.float32)
    stripe_axis = rng.integers(0, 3)
    stripes = 0.5 + 0.5 * np.sin(n[:, stripe_axis] * rng.uniform(14.0, 22.0) + rng.uniform(0, 6.28))
    checker = ((np.floor(n[:, 0] * 6) + np.floor(n[:, 1] * 6) + np.floor(n[:, 2] * 6)) % 2).astype(np.float32)
    noise = np.zeros(len(v), np.float32)
    for octave in range(3):
        freq = 3.0 * 2**octave
        phase = rng.uniform(0, 6.28, 3)
        amp = 0.5**octave
        noise += amp * np.sin(n @ (freq * rng.standard_normal(3)) + phase[0])
    noise = (noise - noise.min()) / max(float(np.ptp(noise)), 1e-6)
    col = np.empty((len(v), 3), np.float32)
    col[:, 0] = base[0] * (0.55 + 0.45 * stripes)
    col[:, 1] = base[1] * (0.55 + 0.45 * noise)
    col[:, 2] = base[2] * (0.60 + 0.40 * checker)
    return np.clip(col, 0.03, 0.97).astype(np.float32)


@dataclass
class SyntheticScene:
    """A subject plus its capture rig. Views pair a ring camera with a pose;
    the last pose (when n_poses >= 2) and the last two cameras (when
    n_views >= 4) are reserved for evaluation only."""

    seed: int
    body: BodyModel
    albedo: np.ndarray  # (Nv, 3)
    poses: list[Pose]
    cameras: list[Camera]
    view_pose: list[int]  # pose index per camera (training pairing)
    resolution: int
    _gt_cache: dict = field(default_factory=dict)

    @property
    def n_views(self) -> int:
        return len(self.cameras)

    @property
    def held_out_cameras(self) -> list[int]:
        if self.n_views >= 4:
            return [self.n_views - 2, self.n_views - 1]
        return [self.n_views - 1]

    @property
    def held_in_cameras(self) -> list[int]:
        held = set(self.held_out_cameras)
        return [i for i in range(self.n_views) if i not in held]

    @property
    def unseen_pose(self) -> int | None:
        return len(self.poses) - 1 if len(self.poses) >= 2 else None

    @property
    def seen_poses(self) -> list[int]:
        u = self.unseen_pose
        return [i for i in range(len(self.poses)) if i != u]

    def posed_vertices(self, pose_idx: int) -> np.ndarray:
        tf = joint_transforms(self.body, self.poses[pose_idx])
        return lbs_points(self.body.rest_vertices, self.body.weight_joints,
                          self.body.weight_values, tf)

    def ground_truth(self, cam_idx: int, pose_idx: int):
        """(image (H, W, 3), alpha mask (H, W)) for a camera/pose pair; cached."""
        key = (cam_idx, pose_idx)
        if key not in self._gt_cache:
            rast = rasterize_mesh(self.posed_vertices(pose_idx), self.body.faces,
                                  self.albedo, self.cameras[cam_idx])
            self._gt_cache[key] = (rast.attributes.astype(np.float32), rast.mask.copy())
        return self._gt_cache[key]


def make_synthetic_scene(
    seed: int,
    n_vertices: int,
    n_views: int,
    n_poses: int,
    resolution: int = 64,
    n_joints: int = 8,
    max_joint_angle_deg: float = 45.0,
    albedo_seed: int | None = None,
) -> SyntheticScene:
    if n_views < 1:
        raise ContractError(f"need at least one view, got {n_views}")
    body = make_toy_body(seed=seed, n_vertices=n_vertices, n_joints=n_joints)
    albedo = procedural_albedo(body, seed + 1 if albedo_seed is None else albedo_seed)
    rng = np.random.default_rng(seed + 2)

    poses = [canonical_pose(body)]
    for _ in range(max(n_poses - 1, 0)):
        quats = []
        for j in range(body.n_joints):
            axis = rng.standard_normal(3)
            angle = np.deg2rad(rng.uniform(5.0, max_joint_angle_deg))
            if j == 0:
                angle *= 0.25  # keep the subject roughly framed
            quats.append(quat_from_axis_angle(axis, angle))
        poses.append(Pose(np.stack(quats).astype(np.float32), np.zeros(3, np.float32)))
    poses = poses[:n_poses] if n_poses >= 1 else poses

    # bounding sphere over every pose, then the ring at twice its radius
    pts = np.concatenate(
        [lbs_points(body.rest_vertices, body.weight_joints, body.weight_values,
                    joint_transforms(body, p)) for p in poses]
    )
    center = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
    radius = float(np.linalg.norm(pts - center, axis=1).max())
    dist = 2.0 * radius
    fov = 2.0 * np.rad2deg(np.arctan(radius / dist)) * 1.25  # small framing margin

    cameras = []
    for i in range(n_views):
        az = 2 * np.pi * i / n_views
        el = np.deg2rad(8.0 if i % 2 == 0 else -4.0)
        eye = center + dist * np.array(
            [np.sin(az) * np.cos(el), np.sin(el), -np.cos(az) * np.cos(el)]
        )
        cameras.append(look_at(eye, center, [0, 1, 0], fov, resolution, resolution))

    seen = list(range(len(poses) - 1)) if len(poses) >= 2 else [0]
    view_pose = [seen[i % len(seen)] for i in range(n_views)]
    scene = SyntheticScene(
        seed=seed, body=body, albedo=albedo, poses=poses, cameras=cameras,
        view_pose=view_pose, resolution=resolution,
    )
    for i in range(n_views):  # every training view must actually see the body
        _, mask = scene.ground_truth(i, view_pose[i])
        if not mask.any():
            raise ContractError(f"camera {i} sees no foreground; scene generation bug")
    return scene
