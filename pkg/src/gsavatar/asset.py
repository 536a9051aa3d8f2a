"""The explicit animatable asset: per-vertex Gaussians in T-pose, skinned re-posing,
self-contained serialization, and the network-free animation loop.

Posing transforms means and rotations only (blended joint affines and their
closest rotations); scales, opacities and colors pass through unchanged.
"""

from __future__ import annotations

import json
import os
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import _fast
from .body import (
    BodyModel,
    Pose,
    blend_transforms,
    closest_rotation,
    joint_transforms,
    matrix_to_quat,
    quat_multiply,
    quat_normalize,
    read_body,
    write_body,
)
from .camera import Camera
from .errors import ContractError, FormatError
from .gsplat import GaussianSet, render_tiled
from .images import encode_png, save_png
from .instrumentation import network_invocations

ASSET_MAGIC = b"HGSA"
ASSET_VERSION = 1


@dataclass
class CanonicalGaussianAsset:
    """K Gaussian primitives per body vertex, in the canonical T-pose."""

    body: BodyModel
    offsets: np.ndarray  # (Nv, K, 3) offsets from the parent vertex, meters
    quats: np.ndarray  # (Nv, K, 4)
    scales: np.ndarray  # (Nv, K, 3)
    opacities: np.ndarray  # (Nv, K)
    colors: np.ndarray  # (Nv, K, 3)
    n_tight: int = 1  # primitives k < n_tight carry the tightness budget

    @property
    def k(self) -> int:
        return self.offsets.shape[1]

    @property
    def count(self) -> int:
        return self.offsets.shape[0] * self.offsets.shape[1]

    def canonical_means(self) -> np.ndarray:
        return (self.body.rest_vertices[:, None, :] + self.offsets).astype(np.float32)

    def canonical_gaussians(self) -> GaussianSet:
        nv, k = self.offsets.shape[:2]
        return GaussianSet(
            means=self.canonical_means().reshape(nv * k, 3),
            quats=self.quats.reshape(nv * k, 4),
            scales=self.scales.reshape(nv * k, 3),
            opacities=self.opacities.reshape(nv * k),
            colors=self.colors.reshape(nv * k, 3),
        )


@dataclass
class PosedGaussians:
    gaussians: GaussianSet
    pose: Pose


def pose_asset(asset: CanonicalGaussianAsset, body: BodyModel, pose: Pose,
               impl: str = "auto") -> PosedGaussians:
    """Skin the canonical asset into world space for `pose`.

    Every Gaussian inherits its parent vertex's skinning weights; joint
    transforms are computed once per call.
    """
    if body.n_vertices != asset.offsets.shape[0]:
        raise ContractError(
            f"asset has {asset.offsets.shape[0]} vertices, body has {body.n_vertices}"
        )
    nv, k = asset.offsets.shape[:2]
    tf = joint_transforms(body, pose)
    blend = blend_transforms(tf, body.weight_joints, body.weight_values)  # (Nv, 3, 4)
    means = asset.canonical_means().reshape(nv * k, 3)
    quats = asset.quats.reshape(nv * k, 4)
    if impl == "auto" and _fast.HAVE_NUMBA:
        rot = _fast.polar_rotations(blend[:, :, :3])
        posed_means, posed_quats = _fast.skin_gaussians(blend, rot, means, quats, k)
    else:
        rot = closest_rotation(blend[:, :, :3])
        q_blend = matrix_to_quat(rot)
        posed_means = (
            np.einsum("vab,vkb->vka", blend[:, :, :3], means.reshape(nv, k, 3))
            + blend[:, None, :, 3]
        ).reshape(nv * k, 3).astype(np.float32)
        posed_quats = quat_normalize(
            quat_multiply(q_blend[:, None, :], quats.reshape(nv, k, 4))
        ).reshape(nv * k, 4)
    gs = GaussianSet(
        means=posed_means,
        quats=posed_quats,
        scales=asset.scales.reshape(nv * k, 3),
        opacities=asset.opacities.reshape(nv * k),
        colors=asset.colors.reshape(nv * k, 3),
    )
    return PosedGaussians(gs, pose)


# ---------------------------------------------------------------------------
# HGSA serialization: magic, version, embedded body block, then Nv*K records
# of (offset 3f, quat 4f, scale 3f, opacity 1f, color 3f), vertex-major.
# ---------------------------------------------------------------------------

_REC_FLOATS = 14


def save_asset(path: str, asset: CanonicalGaussianAsset) -> None:
    nv, k = asset.offsets.shape[:2]
    rec = np.empty((nv, k, _REC_FLOATS), dtype="<f4")
    rec[:, :, 0:3] = asset.offsets
    rec[:, :, 3:7] = asset.quats
    rec[:, :, 7:10] = asset.scales
    rec[:, :, 10] = asset.opacities
    rec[:, :, 11:14] = asset.colors
    with open(path, "wb") as f:
        f.write(ASSET_MAGIC)
        f.write(struct.pack("<I", ASSET_VERSION))
        write_body(f, asset.body)
        f.write(rec.tobytes())


def load_asset(path: str) -> CanonicalGaussianAsset:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != ASSET_MAGIC:
            raise FormatError(f"bad asset magic at byte 0 (expected HGSA, got {magic!r})")
        raw = f.read(4)
        if len(raw) != 4:
            raise FormatError("asset truncated at byte 4 reading version")
        (version,) = struct.unpack("<I", raw)
        if version != ASSET_VERSION:
            raise FormatError(f"unsupported asset version {version}")
        body = read_body(f)
        offset = f.tell()
        payload = f.read()
    nv = body.n_vertices
    stride = nv * _REC_FLOATS * 4
    if len(payload) == 0 or len(payload) % stride != 0:
        raise FormatError(
            f"asset record block at byte {offset} has {len(payload)} bytes, "
            f"not a multiple of {stride} (Nv={nv} records)"
        )
    k = len(payload) // stride
    rec = np.frombuffer(payload, dtype="<f4").reshape(nv, k, _REC_FLOATS)
    asset = CanonicalGaussianAsset(
        body=body,
        offsets=rec[:, :, 0:3].astype(np.float32),
        quats=rec[:, :, 3:7].astype(np.float32),
        scales=rec[:, :, 7:10].astype(np.float32),
        opacities=rec[:, :, 10].astype(np.float32),
        colors=rec[:, :, 11:14].astype(np.float32),
    )
    asset.canonical_gaussians().validate()
    return asset


# ---------------------------------------------------------------------------
# animation clips and the network-free loop
# ---------------------------------------------------------------------------


@dataclass
class AnimationClip:
    frames: list[tuple[Pose, Camera]]
    fps: float = 30.0

    def validate(self, body: BodyModel) -> None:
        if not self.frames:
            raise ContractError("clip needs at least one frame")
        for pose, _ in self.frames:
            if pose.joint_rotations.shape[0] != body.n_joints:
                raise ContractError("clip pose joint count does not match the body")
            pose.validate()


def save_clip(path: str, clip: AnimationClip) -> None:
    doc = {"fps": clip.fps, "frames": []}
    for pose, cam in clip.frames:
        doc["frames"].append(
            {
                "joints": pose.joint_rotations.tolist(),
                "root": pose.root_translation.tolist(),
                "camera": {
                    "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
                    "w2c": cam.w2c.tolist(), "height": cam.height, "width": cam.width,
                },
            }
        )
    with open(path, "w") as f:
        json.dump(doc, f)


def load_clip(path: str) -> AnimationClip:
    with open(path) as f:
        doc = json.load(f)
    frames = []
    for fr in doc["frames"]:
        pose = Pose(
            np.asarray(fr["joints"], np.float32), np.asarray(fr["root"], np.float32)
        )
        c = fr["camera"]
        cam = Camera(c["fx"], c["fy"], c["cx"], c["cy"],
                     np.asarray(c["w2c"], np.float32), int(c["height"]), int(c["width"]))
        frames.append((pose, cam))
    return AnimationClip(frames, float(doc.get("fps", 30.0)))


@dataclass
class AnimationReport:
    lbs_ms: list[float] = field(default_factory=list)
    raster_ms: list[float] = field(default_factory=list)
    encode_ms: list[float] = field(default_factory=list)
    total_s: float = 0.0
    network_invocations: int = 0

    def mean_frame_ms(self) -> float:
        n = max(len(self.lbs_ms), 1)
        return (sum(self.lbs_ms) + sum(self.raster_ms) + sum(self.encode_ms)) / n

    def summary(self) -> dict:
        n = max(len(self.lbs_ms), 1)
        return {
            "frames": len(self.lbs_ms),
            "lbs_ms": sum(self.lbs_ms) / n,
            "raster_ms": sum(self.raster_ms) / n,
            "encode_ms": sum(self.encode_ms) / n,
            "frame_ms": self.mean_frame_ms(),
            "fps": 1000.0 / self.mean_frame_ms() if self.lbs_ms else 0.0,
            "network_invocations": self.network_invocations,
        }


def animate(asset: CanonicalGaussianAsset, clip: AnimationClip, sink) -> AnimationReport:
    """Pose + rasterize every clip frame; no network is (or can be) invoked.

    sink: a directory path receiving frame_%04d.png, or a callable
    (index, image, alpha) -> None. Raises on the first sink failure.
    """
    clip.validate(asset.body)
    report = AnimationReport()
    invocations_before = network_invocations()
    write_dir = isinstance(sink, str)
    if write_dir:
        os.makedirs(sink, exist_ok=True)
    start = time.perf_counter()
    for idx, (pose, cam) in enumerate(clip.frames):
        t0 = time.perf_counter()
        posed = pose_asset(asset, asset.body, pose)
        t1 = time.perf_counter()
        image, alpha = render_tiled(posed.gaussians, cam)
        t2 = time.perf_counter()
        if write_dir:
            save_png(os.path.join(sink, f"frame_{idx:04d}.png"), image)
        else:
            sink(idx, image, alpha)
        t3 = time.perf_counter()
        report.lbs_ms.append((t1 - t0) * 1e3)
        report.raster_ms.append((t2 - t1) * 1e3)
        report.encode_ms.append((t3 - t2) * 1e3)
    report.total_s = time.perf_counter() - start
    report.network_invocations = network_invocations() - invocations_before
    assert report.network_invocations == 0, "animation must not touch the network"
    return report


def make_turntable_clip(asset: CanonicalGaussianAsset, n_frames: int = 30,
                        resolution: int = 256, fps: float = 30.0,
                        swing_joint: int | None = None) -> AnimationClip:
    """Orbit camera around the body; optionally swing one joint sinusoidally."""
    from .body import canonical_pose, quat_from_axis_angle
    from .camera import look_at

    body = asset.body
    center = body.rest_vertices.mean(axis=0)
    radius = float(np.linalg.norm(body.rest_vertices - center, axis=1).max())
    frames = []
    for i in range(n_frames):
        ang = 2 * np.pi * i / n_frames
        eye = center + 2.4 * radius * np.array([np.sin(ang), 0.1, -np.cos(ang)])
        cam = look_at(eye, center, [0, 1, 0], 50, resolution, resolution)
        pose = canonical_pose(body)
        if swing_joint is not None:
            swing = 0.6 * np.sin(2 * np.pi * i / n_frames)
            pose.joint_rotations[swing_joint] = quat_from_axis_angle([0, 0, 1], swing)
        frames.append((pose, cam))
    return AnimationClip(frames, fps)
