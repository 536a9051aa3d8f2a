"""Real-time render service: a FastAPI app owning one avatar session.

The control channel is a single WebSocket: JSON text frames in (pose, camera,
reset, info), binary frames out (16-byte header + PNG), plus a JSON stats
frame every 30 frames. Commands coalesce into a latest-state mailbox; the
render loop always consumes the newest state, renders off the event loop, and
emits frames strictly in order. No avatar-net code is imported here: serving
cannot invoke the network.
"""

from __future__ import annotations

import asyncio
import struct
import time
from dataclasses import dataclass, field
from typing import Annotated, Literal, Union

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from pydantic import BaseModel, Field, ValidationError, TypeAdapter

from .asset import CanonicalGaussianAsset, pose_asset
from .body import Pose, canonical_pose, quat_normalize
from .camera import Camera, look_at
from .errors import ContractError
from .gsplat import render_tiled
from .images import encode_png
from .instrumentation import network_invocations

FRAME_MAGIC = b"HGSF"
STATS_EVERY = 30


class JointRotation(BaseModel):
    id: int
    quat: list[float] = Field(min_length=4, max_length=4)  # (w, x, y, z)


class PoseMsg(BaseModel):
    type: Literal["pose"]
    joints: list[JointRotation] = []
    root: list[float] | None = None


class CameraMsg(BaseModel):
    type: Literal["camera"]
    eye: list[float] = Field(min_length=3, max_length=3)
    target: list[float] = Field(min_length=3, max_length=3)
    up: list[float] = Field(min_length=3, max_length=3)
    fov_deg: float = Field(gt=1.0, lt=179.0)


class ResetMsg(BaseModel):
    type: Literal["reset"]


class InfoMsg(BaseModel):
    type: Literal["info"]


ClientMsg = Annotated[Union[PoseMsg, CameraMsg, ResetMsg, InfoMsg], Field(discriminator="type")]
_CLIENT_MSG = TypeAdapter(ClientMsg)


class InfoResponse(BaseModel):
    type: Literal["info"] = "info"
    n_joints: int
    parents: list[int]
    n_gaussians: int
    resolution: list[int]  # [W, H]


class StatsMsg(BaseModel):
    type: Literal["stats"] = "stats"
    fps: float
    lbs_ms: float
    raster_ms: float


def frame_header(frame_id: int, width: int, height: int) -> bytes:
    """16 bytes: magic, u32 frame id, u16 W, u16 H, u32 reserved (LE)."""
    return FRAME_MAGIC + struct.pack("<IHHI", frame_id, width, height, 0)


@dataclass
class ServeSession:
    """One loaded asset, the live pose/camera, and frame timing history."""

    asset: CanonicalGaussianAsset
    resolution: int = 256
    pose: Pose = None
    camera: Camera = None
    frame_counter: int = 0
    timings: list = field(default_factory=list)  # ring buffer of (lbs_ms, raster_ms, total_ms)

    def __post_init__(self):
        self.reset()

    def default_camera(self) -> Camera:
        body = self.asset.body
        center = body.rest_vertices.mean(axis=0)
        radius = float(np.linalg.norm(body.rest_vertices - center, axis=1).max())
        eye = center + np.array([0.0, 0.15 * radius, -2.4 * radius])
        return look_at(eye, center, [0, 1, 0], 50, self.resolution, self.resolution)

    def reset(self) -> None:
        self.pose = canonical_pose(self.asset.body)
        self.camera = self.default_camera()

    def apply_pose(self, msg: PoseMsg) -> None:
        rotations = self.pose.joint_rotations.copy()
        for joint in msg.joints:
            if not 0 <= joint.id < self.asset.body.n_joints:
                raise ContractError(f"joint id {joint.id} out of range")
            q = np.asarray(joint.quat, np.float32)
            norm = float(np.linalg.norm(q))
            if norm < 1e-6:
                raise ContractError(f"joint {joint.id}: zero-norm quaternion")
            rotations[joint.id] = q / norm
        root = (
            np.asarray(msg.root, np.float32)
            if msg.root is not None
            else self.pose.root_translation
        )
        self.pose = Pose(rotations, root)

    def apply_camera(self, msg: CameraMsg) -> None:
        self.camera = look_at(msg.eye, msg.target, msg.up, msg.fov_deg,
                              self.resolution, self.resolution)

    def render_frame(self) -> tuple[bytes, float, float]:
        t0 = time.perf_counter()
        posed = pose_asset(self.asset, self.asset.body, self.pose)
        t1 = time.perf_counter()
        image, _ = render_tiled(posed.gaussians, self.camera)
        t2 = time.perf_counter()
        payload = encode_png(image)
        self.frame_counter += 1
        lbs_ms = (t1 - t0) * 1e3
        raster_ms = (t2 - t1) * 1e3
        self.timings.append((lbs_ms, raster_ms, (time.perf_counter() - t0) * 1e3))
        if len(self.timings) > 120:
            self.timings.pop(0)
        return frame_header(self.frame_counter, self.camera.width, self.camera.height) + payload, lbs_ms, raster_ms

    def info(self) -> InfoResponse:
        return InfoResponse(
            n_joints=self.asset.body.n_joints,
            parents=[int(p) for p in self.asset.body.parents],
            n_gaussians=self.asset.count,
            resolution=[self.resolution, self.resolution],
        )

    def stats(self) -> StatsMsg:
        if not self.timings:
            return StatsMsg(fps=0.0, lbs_ms=0.0, raster_ms=0.0)
        lbs = float(np.mean([t[0] for t in self.timings]))
        ras = float(np.mean([t[1] for t in self.timings]))
        tot = float(np.mean([t[2] for t in self.timings]))
        return StatsMsg(fps=1000.0 / max(tot, 1e-6), lbs_ms=lbs, raster_ms=ras)


def create_app(session: ServeSession) -> FastAPI:
    app = FastAPI(title="avatar render service")
    app.state.session = session

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "frames": session.frame_counter}

    @app.get("/info", response_model=InfoResponse)
    def info():
        return session.info()

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        invocations_before = network_invocations()
        state_changed = asyncio.Event()
        closed = asyncio.Event()
        sent_since_stats = 0

        async def emit_frame():
            nonlocal sent_since_stats
            frame, _, _ = await asyncio.to_thread(session.render_frame)
            await ws.send_bytes(frame)
            sent_since_stats += 1
            if sent_since_stats >= STATS_EVERY:
                sent_since_stats = 0
                await ws.send_text(session.stats().model_dump_json())

        async def render_loop():
            while not closed.is_set():
                waiter = asyncio.create_task(state_changed.wait())
                done_task = asyncio.create_task(closed.wait())
                done, pending = await asyncio.wait(
                    {waiter, done_task}, return_when=asyncio.FIRST_COMPLETED
                )
                for p in pending:
                    p.cancel()
                if closed.is_set():
                    return
                state_changed.clear()  # consume the newest state; commands coalesce
                try:
                    await emit_frame()
                except Exception:
                    closed.set()
                    return

        loop_task = asyncio.create_task(render_loop())
        try:
            await emit_frame()  # immediate initial frame at the canonical pose
            while True:
                raw = await ws.receive()
                if raw.get("type") == "websocket.disconnect":
                    break
                text = raw.get("text")
                try:
                    if text is None:
                        raise ValueError("binary frames are not part of the client protocol")
                    msg = _CLIENT_MSG.validate_json(text)
                    if isinstance(msg, PoseMsg):
                        session.apply_pose(msg)
                        state_changed.set()
                    elif isinstance(msg, CameraMsg):
                        session.apply_camera(msg)
                        state_changed.set()
                    elif isinstance(msg, ResetMsg):
                        session.reset()
                        state_changed.set()
                    else:
                        await ws.send_text(session.info().model_dump_json())
                except (ValidationError, ContractError, ValueError) as e:
                    await ws.send_text(
                        '{"type":"error","msg":' + _json_str(str(e)) + "}"
                    )
        except WebSocketDisconnect:
            pass
        finally:
            closed.set()
            state_changed.set()
            await loop_task
            assert network_invocations() == invocations_before, "serve must not touch the network"

    try:  # static viewer files, when the frontend build exists
        import os

        here = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
        dist = os.path.join(here, "frontend", "dist")
        if os.path.isdir(dist):
            from fastapi.staticfiles import StaticFiles

            app.mount("/", StaticFiles(directory=dist, html=True), name="viewer")
    except Exception:
        pass
    return app


def _json_str(s: str) -> str:
    import json

    return json.dumps(s)


def serve(asset: CanonicalGaussianAsset, port: int, resolution: int = 256, host: str = "127.0.0.1") -> None:
    """Run the service until shutdown (blocking)."""
    import uvicorn

    session = ServeSession(asset, resolution=resolution)
    uvicorn.run(create_app(session), host=host, port=port, log_level="warning")
