"""3D Gaussian splatting: EWA projection, oracle + tiled renderers, analytic backward.

Compositing math (shared by both renderers, bit-for-bit):
  per splat, per pixel: power = 0.5 * d^T conic d, zeroed beyond the 3-sigma
  cutoff (power > 4.5); alpha = min(0.99, opacity * exp(-power)); splats are
  processed in stable depth order; a splat contributes iff the transmittance
  in front of it is >= 1e-4 (the early-out rule). Background is black.

The tiled renderer bins splats into 16x16-pixel tiles by the exact axis
extents of the 3-sigma ellipse, so it touches the same (splat, pixel) pairs
the cutoff admits and matches the per-pixel oracle to float round-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body import quat_to_matrix
from .camera import Camera
from .errors import ContractError
from .tensor import Tensor, _make

EPS_COV2D = 0.3  # px^2 low-pass floor added to the projected covariance diagonal
CUTOFF_POWER = 4.5  # 0.5 * 3^2: Gaussian support truncated at 3 sigma
ALPHA_MAX = 0.99
T_EARLY_OUT = 1e-4
BEHIND_Z = 1e-6
TILE = 16


@dataclass
class GaussianSet:
    means: np.ndarray  # (M, 3) meters
    quats: np.ndarray  # (M, 4) unit (w, x, y, z)
    scales: np.ndarray  # (M, 3) positive std-devs, meters
    opacities: np.ndarray  # (M,) in (0, 1)
    colors: np.ndarray  # (M, 3) in [0, 1]

    @property
    def count(self) -> int:
        return self.means.shape[0]

    def validate(self) -> None:
        if np.abs(np.linalg.norm(self.quats, axis=1) - 1).max() > 1e-6:
            raise ContractError("quaternions must be unit norm")
        if self.scales.min() <= 0:
            raise ContractError("scales must be positive")
        if self.opacities.min() <= 0 or self.opacities.max() >= 1:
            raise ContractError("opacities must lie in (0, 1)")
        if self.colors.min() < 0 or self.colors.max() > 1:
            raise ContractError("colors must lie in [0, 1]")


@dataclass
class Splat2D:
    mean2d: np.ndarray  # (M, 2) pixel coords
    cov2d: np.ndarray  # (M, 2, 2) regularized
    conic: np.ndarray  # (M, 2, 2) inverse covariance
    depth: np.ndarray  # (M,) camera z
    valid: np.ndarray  # (M,) bool; False = culled (behind camera)


def covariance3d(quats: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """Sigma = R diag(s^2) R^T for batched inputs.

    Quaternions are normalized here so the op (and its gradient) is defined
    for near-unit inputs as well.
    """
    q = np.asarray(quats, np.float32)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    r = quat_to_matrix(q)
    s2 = np.square(np.asarray(scales, np.float32))
    return np.einsum("mab,mb,mcb->mac", r, s2, r).astype(np.float32)


def project_gaussians(means: np.ndarray, cov3d: np.ndarray, camera: Camera) -> Splat2D:
    """EWA: cov2d = J W Sigma W^T J^T with J the projection Jacobian at the mean."""
    t = camera.to_camera(means)  # (M, 3)
    z = t[:, 2]
    valid = z > BEHIND_Z
    zs = np.where(valid, z, 1.0)
    fx, fy = camera.fx, camera.fy
    u = fx * t[:, 0] / zs + camera.cx
    v = fy * t[:, 1] / zs + camera.cy
    mean2d = np.stack([u, v], axis=1).astype(np.float32)

    j = np.zeros((means.shape[0], 2, 3), dtype=np.float32)
    j[:, 0, 0] = fx / zs
    j[:, 0, 2] = -fx * t[:, 0] / (zs * zs)
    j[:, 1, 1] = fy / zs
    j[:, 1, 2] = -fy * t[:, 1] / (zs * zs)
    m = j @ camera.rotation[None, :, :]
    cov2d = m @ cov3d @ m.transpose(0, 2, 1)
    cov2d[:, 0, 0] += EPS_COV2D
    cov2d[:, 1, 1] += EPS_COV2D

    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    conic = np.empty_like(cov2d)
    conic[:, 0, 0] = cov2d[:, 1, 1] / det
    conic[:, 1, 1] = cov2d[:, 0, 0] / det
    conic[:, 0, 1] = -cov2d[:, 0, 1] / det
    conic[:, 1, 0] = conic[:, 0, 1]
    return Splat2D(mean2d, cov2d.astype(np.float32), conic.astype(np.float32),
                   z.astype(np.float32), valid)


def _alphas(splats: Splat2D, opac: np.ndarray, ids: np.ndarray, pxc: np.ndarray, pyc: np.ndarray):
    """Per-(splat, pixel) alpha for splats `ids` on pixel centers (pxc, pyc).

    Returns (alpha, g, power_mask) each (len(ids), len(pxc)). The exact same
    float path backs the oracle, the tiled renderer, and the backward pass.
    """
    dx = pxc[None, :] - splats.mean2d[ids, 0][:, None]
    dy = pyc[None, :] - splats.mean2d[ids, 1][:, None]
    a = splats.conic[ids, 0, 0][:, None]
    b = splats.conic[ids, 0, 1][:, None]
    c = splats.conic[ids, 1, 1][:, None]
    power = 0.5 * (a * dx * dx + c * dy * dy) + b * dx * dy
    keep = power <= CUTOFF_POWER
    g = np.where(keep, np.exp(-np.minimum(power, 30.0)), 0.0).astype(np.float32)
    alpha = np.minimum(opac[ids][:, None] * g, ALPHA_MAX).astype(np.float32)
    return alpha, g, keep


def _depth_order(splats: Splat2D) -> np.ndarray:
    ids = np.flatnonzero(splats.valid)
    return ids[np.argsort(splats.depth[ids], kind="stable")]


def render_oracle(gaussians: GaussianSet, camera: Camera, chunk: int = 128):
    """Per-pixel brute force: every non-culled splat evaluated at every pixel."""
    h, w = camera.height, camera.width
    splats = project_gaussians(gaussians.means, covariance3d(gaussians.quats, gaussians.scales), camera)
    order = _depth_order(splats)
    pxc, pyc = _pixel_centers(h, w)
    color = np.zeros((h * w, 3), dtype=np.float32)
    trans = np.ones(h * w, dtype=np.float32)
    alpha_acc = np.zeros(h * w, dtype=np.float32)
    for s in range(0, len(order), chunk):
        ids = order[s : s + chunk]
        alpha, _, _ = _alphas(splats, gaussians.opacities, ids, pxc, pyc)
        one_minus = 1.0 - alpha
        t_excl = np.cumprod(one_minus, axis=0)
        t_excl = np.vstack([np.ones((1, h * w), np.float32), t_excl[:-1]]) * trans[None, :]
        contrib = (t_excl >= T_EARLY_OUT) * t_excl * alpha
        color += contrib.T @ gaussians.colors[ids]
        alpha_acc += contrib.sum(axis=0)
        trans = trans * np.prod(one_minus, axis=0)
        if trans.max() < T_EARLY_OUT:
            break
    return color.reshape(h, w, 3), alpha_acc.reshape(h, w)


def _pixel_centers(h: int, w: int):
    pxc = (np.arange(w, dtype=np.float32) + 0.5)
    pyc = (np.arange(h, dtype=np.float32) + 0.5)
    xx, yy = np.meshgrid(pxc, pyc)
    return xx.ravel(), yy.ravel()


def _tile_bins(splats: Splat2D, h: int, w: int, order: np.ndarray):
    """Conservative 3-sigma bboxes -> per-tile splat lists in depth order."""
    ntx = (w + TILE - 1) // TILE
    nty = (h + TILE - 1) // TILE
    radius = np.sqrt(2.0 * CUTOFF_POWER)  # support radius in sigmas (3 for power 4.5)
    rx = radius * np.sqrt(splats.cov2d[order, 0, 0]) + 1e-3
    ry = radius * np.sqrt(splats.cov2d[order, 1, 1]) + 1e-3
    mx = splats.mean2d[order, 0]
    my = splats.mean2d[order, 1]
    tx0 = np.clip(((mx - rx) // TILE).astype(np.int64), 0, ntx - 1)
    tx1 = np.clip(((mx + rx) // TILE).astype(np.int64), 0, ntx - 1)
    ty0 = np.clip(((my - ry) // TILE).astype(np.int64), 0, nty - 1)
    ty1 = np.clip(((my + ry) // TILE).astype(np.int64), 0, nty - 1)
    on_screen = (mx + rx >= 0) & (mx - rx <= w) & (my + ry >= 0) & (my - ry <= h)
    wx = np.where(on_screen, tx1 - tx0 + 1, 0)
    wy = np.where(on_screen, ty1 - ty0 + 1, 0)
    counts = wx * wy
    total = int(counts.sum())
    if total == 0:
        return ntx, nty, np.zeros(0, np.int64), np.zeros(ntx * nty + 1, np.int64)
    rank = np.repeat(np.arange(len(order)), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    within = np.arange(total) - np.repeat(starts, counts)
    wxr = np.repeat(wx, counts)
    dy = within // np.maximum(wxr, 1)
    dxs = within - dy * wxr
    tile_id = (np.repeat(ty0, counts) + dy) * ntx + (np.repeat(tx0, counts) + dxs)
    sort = np.argsort(tile_id, kind="stable")  # stable keeps depth order per tile
    tile_sorted = tile_id[sort]
    rank_sorted = rank[sort]
    bounds = np.searchsorted(tile_sorted, np.arange(ntx * nty + 1))
    return ntx, nty, rank_sorted, bounds


def render_tiled(gaussians: GaussianSet, camera: Camera, tile: int = TILE, impl: str = "auto"):
    """Tile-binned renderer; identical compositing math as render_oracle.

    impl: "auto" takes the jitted per-pixel loop when numba is available,
    "numpy" forces the vectorized reference path. Both produce the same
    composite up to float summation order.
    """
    if tile != TILE:
        from .errors import ConfigError

        raise ConfigError(f"tile size is fixed at {TILE}, got {tile}")
    h, w = camera.height, camera.width
    splats = project_gaussians(gaussians.means, covariance3d(gaussians.quats, gaussians.scales), camera)
    order = _depth_order(splats)
    ntx, nty, rank_sorted, bounds = _tile_bins(splats, h, w, order)
    from . import _fast

    if impl == "auto" and _fast.HAVE_NUMBA:
        return _fast.composite_tiles(
            np.ascontiguousarray(splats.mean2d[order, 0]),
            np.ascontiguousarray(splats.mean2d[order, 1]),
            np.ascontiguousarray(splats.conic[order, 0, 0]),
            np.ascontiguousarray(splats.conic[order, 0, 1]),
            np.ascontiguousarray(splats.conic[order, 1, 1]),
            np.ascontiguousarray(gaussians.opacities[order]),
            np.ascontiguousarray(gaussians.colors[order]),
            rank_sorted,
            bounds,
            h, w, ntx, nty, TILE,
            np.float32(CUTOFF_POWER), np.float32(ALPHA_MAX), np.float32(T_EARLY_OUT),
        )
    color = np.zeros((h, w, 3), dtype=np.float32)
    alpha_img = np.zeros((h, w), dtype=np.float32)
    for ty in range(nty):
        y0 = ty * TILE
        yc = np.arange(y0, min(y0 + TILE, h), dtype=np.float32) + 0.5
        for tx in range(ntx):
            tid = ty * ntx + tx
            lo, hi = bounds[tid], bounds[tid + 1]
            if hi <= lo:
                continue
            ids = order[rank_sorted[lo:hi]]
            x0 = tx * TILE
            xc = np.arange(x0, min(x0 + TILE, w), dtype=np.float32) + 0.5
            xx, yy = np.meshgrid(xc, yc)
            alpha, _, _ = _alphas(splats, gaussians.opacities, ids, xx.ravel(), yy.ravel())
            one_minus = 1.0 - alpha
            t_excl = np.cumprod(one_minus, axis=0)
            t_excl = np.vstack([np.ones((1, alpha.shape[1]), np.float32), t_excl[:-1]])
            contrib = (t_excl >= T_EARLY_OUT) * t_excl * alpha
            tile_color = contrib.T @ gaussians.colors[ids]
            th, tw = len(yc), len(xc)
            color[y0 : y0 + th, x0 : x0 + tw] += tile_color.reshape(th, tw, 3)
            alpha_img[y0 : y0 + th, x0 : x0 + tw] += contrib.sum(axis=0).reshape(th, tw)
    return color, alpha_img


# ---------------------------------------------------------------------------
# analytic backward
# ---------------------------------------------------------------------------


def _quat_rotation_grad(qn: np.ndarray, grad_r: np.ndarray) -> np.ndarray:
    """dL/d(q normalized) given dL/dR, batched: contract dR/dq entries."""
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    g = grad_r
    zero = np.zeros_like(w)
    dw = 2 * (
        g[:, 0, 1] * (-z) + g[:, 0, 2] * y
        + g[:, 1, 0] * z + g[:, 1, 2] * (-x)
        + g[:, 2, 0] * (-y) + g[:, 2, 1] * x
    )
    dx = 2 * (
        g[:, 0, 1] * y + g[:, 0, 2] * z
        + g[:, 1, 0] * y + g[:, 1, 1] * (-2 * x) + g[:, 1, 2] * (-w)
        + g[:, 2, 0] * z + g[:, 2, 1] * w + g[:, 2, 2] * (-2 * x)
    )
    dy = 2 * (
        g[:, 0, 0] * (-2 * y) + g[:, 0, 1] * x + g[:, 0, 2] * w
        + g[:, 1, 0] * x + g[:, 1, 2] * z
        + g[:, 2, 0] * (-w) + g[:, 2, 1] * z + g[:, 2, 2] * (-2 * y)
    )
    dz = 2 * (
        g[:, 0, 0] * (-2 * z) + g[:, 0, 1] * (-w) + g[:, 0, 2] * x
        + g[:, 1, 0] * w + g[:, 1, 1] * (-2 * z) + g[:, 1, 2] * y
        + g[:, 2, 0] * x + g[:, 2, 1] * y
    )
    _ = zero
    return np.stack([dw, dx, dy, dz], axis=1)


def render_backward(gaussians: GaussianSet, camera: Camera, grad_image: np.ndarray):
    """Gradients of sum(grad_image * image) w.r.t. all Gaussian parameters.

    Recomputes the forward state tile by tile (nothing retained from the
    forward call). Depth ordering is treated as constant, as in standard
    differentiable splatting.
    """
    h, w = camera.height, camera.width
    m = gaussians.count
    cov3d = covariance3d(gaussians.quats, gaussians.scales)
    splats = project_gaussians(gaussians.means, cov3d, camera)
    order = _depth_order(splats)
    ntx, nty, rank_sorted, bounds = _tile_bins(splats, h, w, order)

    g_mean2d = np.zeros((m, 2), np.float64)
    g_conic = np.zeros((m, 2, 2), np.float64)
    g_opac = np.zeros(m, np.float64)
    g_color = np.zeros((m, 3), np.float64)
    grad_image = grad_image.astype(np.float32)

    for ty in range(nty):
        y0 = ty * TILE
        yc = np.arange(y0, min(y0 + TILE, h), dtype=np.float32) + 0.5
        for tx in range(ntx):
            tid = ty * ntx + tx
            lo, hi = bounds[tid], bounds[tid + 1]
            if hi <= lo:
                continue
            ids = order[rank_sorted[lo:hi]]
            x0 = tx * TILE
            xc = np.arange(x0, min(x0 + TILE, w), dtype=np.float32) + 0.5
            xx, yy = np.meshgrid(xc, yc)
            pxc, pyc = xx.ravel(), yy.ravel()
            th, tw = len(yc), len(xc)
            gc = grad_image[y0 : y0 + th, x0 : x0 + tw].reshape(-1, 3)  # (P, 3)

            alpha, g, keep = _alphas(splats, gaussians.opacities, ids, pxc, pyc)
            one_minus = 1.0 - alpha
            t_excl = np.cumprod(one_minus, axis=0)
            t_excl = np.vstack([np.ones((1, alpha.shape[1]), np.float32), t_excl[:-1]])
            live = t_excl >= T_EARLY_OUT
            contrib = live * t_excl * alpha  # (S, P)

            cols = gaussians.colors[ids]  # (S, 3)
            # dL/dcolor: sum_p contrib * gc
            g_color_tile = contrib @ gc  # (S, 3)
            # accumulated color behind each splat: suffix sum of contrib * color
            weighted = contrib[:, :, None] * cols[:, None, :]  # (S, P, 3)
            suffix = np.cumsum(weighted[::-1], axis=0)[::-1]  # includes self
            behind = suffix - weighted  # (S, P, 3): sum over j > i
            w_dot = cols @ gc.T  # (S, P): gc . c_i
            g_alpha = live * (
                t_excl * w_dot - np.einsum("spc,pc->sp", behind, gc) / np.maximum(one_minus, 1e-3)
            )
            unclamped = (gaussians.opacities[ids][:, None] * g) < ALPHA_MAX
            g_g = g_alpha * gaussians.opacities[ids][:, None] * unclamped
            g_opac_tile = (g_alpha * g * unclamped).sum(axis=1)
            g_power = -g * g_g  # (S, P)

            dx = pxc[None, :] - splats.mean2d[ids, 0][:, None]
            dy = pyc[None, :] - splats.mean2d[ids, 1][:, None]
            a = splats.conic[ids, 0, 0][:, None]
            b = splats.conic[ids, 0, 1][:, None]
            c = splats.conic[ids, 1, 1][:, None]
            # power = 0.5(a dx^2 + c dy^2) + b dx dy; d(power)/d(mean) = -(Q delta)
            qdx = a * dx + b * dy
            qdy = b * dx + c * dy
            g_mean_tile = np.stack(
                [-(g_power * qdx).sum(axis=1), -(g_power * qdy).sum(axis=1)], axis=1
            )
            g_conic_tile = np.empty((len(ids), 2, 2), np.float64)
            g_conic_tile[:, 0, 0] = (g_power * 0.5 * dx * dx).sum(axis=1)
            g_conic_tile[:, 1, 1] = (g_power * 0.5 * dy * dy).sum(axis=1)
            off = (g_power * 0.5 * dx * dy).sum(axis=1)
            g_conic_tile[:, 0, 1] = off
            g_conic_tile[:, 1, 0] = off

            np.add.at(g_color, ids, g_color_tile)
            np.add.at(g_opac, ids, g_opac_tile)
            np.add.at(g_mean2d, ids, g_mean_tile)
            np.add.at(g_conic, ids, g_conic_tile)

    # chain conic -> cov2d (matrix inverse backward)
    q = splats.conic.astype(np.float64)
    g_cov2d = -q @ g_conic @ q

    # cov2d = M Sigma M^T + eps I, with M = J W
    rot = camera.rotation.astype(np.float64)
    t = camera.to_camera(gaussians.means).astype(np.float64)
    zs = np.where(splats.valid, t[:, 2], 1.0)
    fx, fy = camera.fx, camera.fy
    jac = np.zeros((m, 2, 3), np.float64)
    jac[:, 0, 0] = fx / zs
    jac[:, 0, 2] = -fx * t[:, 0] / (zs * zs)
    jac[:, 1, 1] = fy / zs
    jac[:, 1, 2] = -fy * t[:, 1] / (zs * zs)
    mw = jac @ rot[None]
    sig = cov3d.astype(np.float64)
    g_sym = g_cov2d + g_cov2d.transpose(0, 2, 1)
    g_m = g_sym @ mw @ sig
    g_sigma = mw.transpose(0, 2, 1) @ g_cov2d @ mw
    g_j = g_m @ rot.T[None]

    # J depends on the camera-space mean t
    g_t = np.zeros((m, 3), np.float64)
    g_t[:, 0] = g_j[:, 0, 2] * (-fx / (zs * zs))
    g_t[:, 1] = g_j[:, 1, 2] * (-fy / (zs * zs))
    g_t[:, 2] = (
        g_j[:, 0, 0] * (-fx / (zs * zs))
        + g_j[:, 0, 2] * (2 * fx * t[:, 0] / (zs**3))
        + g_j[:, 1, 1] * (-fy / (zs * zs))
        + g_j[:, 1, 2] * (2 * fy * t[:, 1] / (zs**3))
    )
    # projection path of mean2d
    g_t[:, 0] += g_mean2d[:, 0] * fx / zs
    g_t[:, 1] += g_mean2d[:, 1] * fy / zs
    g_t[:, 2] += -g_mean2d[:, 0] * fx * t[:, 0] / (zs * zs) - g_mean2d[:, 1] * fy * t[:, 1] / (zs * zs)
    g_means = (g_t @ rot) * splats.valid[:, None]

    # Sigma = N N^T with N = R(q_n) diag(s)
    qn = gaussians.quats / np.linalg.norm(gaussians.quats, axis=1, keepdims=True)
    r = quat_to_matrix(qn).astype(np.float64)
    s = gaussians.scales.astype(np.float64)
    n = r * s[:, None, :]
    g_n = (g_sigma + g_sigma.transpose(0, 2, 1)) @ n
    g_s = np.einsum("mak,mak->mk", g_n, r)
    g_r = g_n * s[:, None, :]
    g_qn = _quat_rotation_grad(qn.astype(np.float64), g_r)
    # chain through the normalization q_n = q / |q|
    norm = np.linalg.norm(gaussians.quats, axis=1, keepdims=True).astype(np.float64)
    g_quats = (g_qn - (g_qn * qn).sum(axis=1, keepdims=True) * qn) / norm

    culled = ~splats.valid
    for arr in (g_means, g_quats, g_s, g_color):
        arr[culled] = 0.0
    g_opac[culled] = 0.0
    return (
        g_means.astype(np.float32),
        g_quats.astype(np.float32),
        g_s.astype(np.float32),
        g_opac.astype(np.float32),
        g_color.astype(np.float32),
    )


def render_image_op(
    means: Tensor, quats: Tensor, scales: Tensor, opacities: Tensor, colors: Tensor, camera: Camera
) -> Tensor:
    """Differentiable tiled render registered on the autodiff tape (color only)."""
    gs = GaussianSet(means.data, quats.data, scales.data, opacities.data, colors.data)
    image, _ = render_tiled(gs, camera)

    def backward(g):
        return render_backward(gs, camera, g)

    return _make(image, (means, quats, scales, opacities, colors), backward)
