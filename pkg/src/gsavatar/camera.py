"""Pinhole camera, Plücker ray maps, triangle rasterization, vertex visibility.

Camera frame is OpenCV-style (x right, y down, z forward); pixel (i, j)
has its center at (u, v) = (j + 0.5, i + 0.5). Rays are cast through pixel
centers. Depth means camera-space z.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError

BEHIND_EPS = 1e-6  # z at or below this counts as behind the camera
VISIBILITY_EPS_Z = 1e-3  # meters of slack against the rasterized depth


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    w2c: np.ndarray  # (3, 4) world-to-camera [R | t]
    height: int
    width: int

    def validate(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ContractError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        r = self.w2c[:, :3]
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-5:
            raise ContractError("rotation block is not orthonormal")

    @property
    def rotation(self) -> np.ndarray:
        return self.w2c[:, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.w2c[:, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera origin in world space."""
        return (-self.rotation.T @ self.translation).astype(np.float32)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points).astype(np.float32)
        return pts @ self.rotation.T + self.translation


@dataclass
class AttributeImage:
    attributes: np.ndarray  # (H, W, C)
    depth: np.ndarray  # (H, W); +inf where uncovered
    mask: np.ndarray  # (H, W) bool


def look_at(eye, target, up, fov_deg: float, height: int, width: int) -> Camera:
    """Camera at `eye` looking at `target`; vertical field of view in degrees."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    r = np.stack([right, down, forward]).astype(np.float32)
    t = (-r @ eye).astype(np.float32)
    fy = height / (2.0 * np.tan(np.deg2rad(fov_deg) / 2.0))
    return Camera(fx=float(fy), fy=float(fy), cx=width / 2.0, cy=height / 2.0,
                  w2c=np.concatenate([r, t[:, None]], axis=1), height=height, width=width)


def project(camera: Camera, points: np.ndarray):
    """Points (M, 3) -> pixel coords (M, 2), camera depth (M,), behind flags (M,)."""
    single = np.asarray(points).ndim == 1
    cam = camera.to_camera(points)
    z = cam[:, 2]
    behind = z <= BEHIND_EPS
    zs = np.where(behind, 1.0, z)
    u = camera.fx * cam[:, 0] / zs + camera.cx
    v = camera.fy * cam[:, 1] / zs + camera.cy
    uv = np.stack([u, v], axis=1).astype(np.float32)
    if single:
        return uv[0], float(z[0]), bool(behind[0])
    return uv, z.astype(np.float32), behind


def unproject(camera: Camera, uv: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Inverse of project at a known depth."""
    uv = np.atleast_2d(uv)
    depth = np.atleast_1d(depth)
    x = (uv[:, 0] - camera.cx) / camera.fx * depth
    y = (uv[:, 1] - camera.cy) / camera.fy * depth
    cam = np.stack([x, y, depth], axis=1)
    return ((cam - camera.translation) @ camera.rotation).astype(np.float32)


def plucker_map(camera: Camera) -> np.ndarray:
    """(H, W, 6) map of (unit direction, moment = origin x direction) per pixel ray."""
    h, w = camera.height, camera.width
    u = np.arange(w, dtype=np.float32) + 0.5
    v = np.arange(h, dtype=np.float32) + 0.5
    uu, vv = np.meshgrid(u, v)
    d_cam = np.stack([(uu - camera.cx) / camera.fx, (vv - camera.cy) / camera.fy, np.ones_like(uu)], axis=-1)
    d_world = d_cam @ camera.rotation  # R^T applied to rows
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    o = camera.center
    m = np.cross(np.broadcast_to(o, d_world.shape), d_world)
    return np.concatenate([d_world, m], axis=-1).astype(np.float32)


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def rasterize_mesh(
    posed_vertices: np.ndarray,
    faces: np.ndarray,
    attributes: np.ndarray,
    camera: Camera,
    fill: float = 0.0,
) -> AttributeImage:
    """Z-buffered rasterization with perspective-correct attribute interpolation.

    Triangles with any vertex behind the camera are skipped (no clipping at
    desk scale); zero-area triangles are skipped silently.
    """
    if attributes.shape[0] != posed_vertices.shape[0]:
        raise ContractError(
            f"attributes rows {attributes.shape[0]} != vertex count {posed_vertices.shape[0]}"
        )
    h, w = camera.height, camera.width
    c = attributes.shape[1]
    attr_img = np.full((h, w, c), fill, dtype=np.float32)
    depth_img = np.full((h, w), np.inf, dtype=np.float32)
    mask = np.zeros((h, w), dtype=bool)

    uv, z, behind = project(camera, posed_vertices)
    tri_uv = uv[faces]  # (F, 3, 2)
    tri_z = z[faces]
    tri_behind = behind[faces].any(axis=1)
    # signed doubled area in screen space; degenerate and behind triangles culled
    area = _edge(
        tri_uv[:, 0, 0], tri_uv[:, 0, 1], tri_uv[:, 1, 0], tri_uv[:, 1, 1],
        tri_uv[:, 2, 0], tri_uv[:, 2, 1],
    )
    keep = (~tri_behind) & (np.abs(area) > 1e-12)

    xmin = np.clip(np.floor(tri_uv[:, :, 0].min(axis=1) - 0.5), 0, w - 1).astype(int)
    xmax = np.clip(np.ceil(tri_uv[:, :, 0].max(axis=1) - 0.5), 0, w - 1).astype(int)
    ymin = np.clip(np.floor(tri_uv[:, :, 1].min(axis=1) - 0.5), 0, h - 1).astype(int)
    ymax = np.clip(np.ceil(tri_uv[:, :, 1].max(axis=1) - 0.5), 0, h - 1).astype(int)
    offscreen = (tri_uv[:, :, 0].max(axis=1) < 0) | (tri_uv[:, :, 0].min(axis=1) > w) | (
        tri_uv[:, :, 1].max(axis=1) < 0
    ) | (tri_uv[:, :, 1].min(axis=1) > h)
    keep &= ~offscreen

    tri_attr = attributes[faces]  # (F, 3, C)
    for f in np.flatnonzero(keep):
        x0, x1, y0, y1 = xmin[f], xmax[f], ymin[f], ymax[f]
        px = np.arange(x0, x1 + 1, dtype=np.float32) + 0.5
        py = np.arange(y0, y1 + 1, dtype=np.float32) + 0.5
        pxx, pyy = np.meshgrid(px, py)
        a_uv = tri_uv[f]
        w0 = _edge(a_uv[1, 0], a_uv[1, 1], a_uv[2, 0], a_uv[2, 1], pxx, pyy)
        w1 = _edge(a_uv[2, 0], a_uv[2, 1], a_uv[0, 0], a_uv[0, 1], pxx, pyy)
        w2 = _edge(a_uv[0, 0], a_uv[0, 1], a_uv[1, 0], a_uv[1, 1], pxx, pyy)
        ar = area[f]
        if ar > 0:
            inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        else:
            inside = (w0 <= 0) & (w1 <= 0) & (w2 <= 0)
        if not inside.any():
            continue
        b0, b1, b2 = w0 / ar, w1 / ar, w2 / ar
        # perspective-correct: interpolate 1/z and attr/z linearly in screen space
        l0, l1, l2 = b0 / tri_z[f, 0], b1 / tri_z[f, 1], b2 / tri_z[f, 2]
        inv_z = l0 + l1 + l2
        zpix = 1.0 / inv_z
        closer = inside & (zpix < depth_img[y0 : y1 + 1, x0 : x1 + 1])
        if not closer.any():
            continue
        interp = (
            l0[..., None] * tri_attr[f, 0]
            + l1[..., None] * tri_attr[f, 1]
            + l2[..., None] * tri_attr[f, 2]
        ) / inv_z[..., None]
        sub_depth = depth_img[y0 : y1 + 1, x0 : x1 + 1]
        sub_attr = attr_img[y0 : y1 + 1, x0 : x1 + 1]
        sub_mask = mask[y0 : y1 + 1, x0 : x1 + 1]
        sub_depth[closer] = zpix[closer]
        sub_attr[closer] = interp[closer].astype(np.float32)
        sub_mask[closer] = True
    return AttributeImage(attr_img, depth_img, mask)


def vertex_visibility(
    posed_vertices: np.ndarray,
    faces: np.ndarray,
    camera: Camera,
    eps_z: float = VISIBILITY_EPS_Z,
    depth_image: np.ndarray | None = None,
) -> np.ndarray:
    """Visible iff the projection lands inside the image and the vertex depth is
    within eps_z of the rasterized depth at that pixel."""
    if depth_image is None:
        dummy = np.zeros((posed_vertices.shape[0], 1), np.float32)
        depth_image = rasterize_mesh(posed_vertices, faces, dummy, camera).depth
    uv, z, behind = project(camera, posed_vertices)
    px = np.floor(uv[:, 0]).astype(int)
    py = np.floor(uv[:, 1]).astype(int)
    h, w = camera.height, camera.width
    inside = (px >= 0) & (px < w) & (py >= 0) & (py < h) & ~behind
    vis = np.zeros(posed_vertices.shape[0], dtype=bool)
    idx = np.flatnonzero(inside)
    vis[idx] = z[idx] <= depth_image[py[idx], px[idx]] + eps_z
    return vis


# ---------------------------------------------------------------------------
# camera text files: "fx fy cx cy" / three rows of [R | t] / "H W"
# ---------------------------------------------------------------------------


def save_camera(path: str, camera: Camera) -> None:
    with open(path, "w") as f:
        f.write(f"{camera.fx} {camera.fy} {camera.cx} {camera.cy}\n")
        for row in camera.w2c:
            f.write(" ".join(repr(float(x)) for x in row) + "\n")
        f.write(f"{camera.height} {camera.width}\n")


def load_camera(path: str) -> Camera:
    with open(path) as f:
        tokens = f.read().split()
    if len(tokens) != 18:
        raise FormatError(f"camera file needs 18 numbers, found {len(tokens)}")
    try:
        vals = [float(t) for t in tokens]
    except ValueError as e:
        raise FormatError(f"camera file has a non-numeric token: {e}") from None
    cam = Camera(
        fx=vals[0], fy=vals[1], cx=vals[2], cy=vals[3],
        w2c=np.array(vals[4:16], dtype=np.float32).reshape(3, 4),
        height=int(vals[16]), width=int(vals[17]),
    )
    cam.validate()
    return cam
