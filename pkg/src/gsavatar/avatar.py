"""Feed-forward reconstructor: tri-plane pose texture, pose image maps, patch
tokenizer, transformer encoder with a global token, intermediate-feature
aggregation, vertex-aligned sampling, and the per-vertex Gaussian decoder.

One forward pass maps N posed input views to a canonical-pose Gaussian asset;
everything downstream of the asset is network-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import nn
from . import tensor as T
from .asset import CanonicalGaussianAsset
from .body import BodyModel, Pose, joint_transforms, lbs_points
from .camera import Camera, plucker_map, project, rasterize_mesh, vertex_visibility
from .errors import ConfigError, ContractError
from .instrumentation import count_network_invocation
from .tensor import Tensor


@dataclass
class NetConfig:
    """Architecture knobs; defaults are the desk-scale configuration."""

    dim: int = 128  # token width
    layers: int = 8  # transformer depth, divisible by 4
    heads: int = 4
    patch: int = 8
    k_per_vertex: int = 5
    n_tight: int = 1
    triplane_channels: int = 8
    triplane_res: int = 32
    agg_hidden: int = 256  # per-tap 1x1 projection width
    agg_mid: int = 128  # fuse/upsample width
    final_dim: int = 768  # feature-map channels sampled at vertices
    decoder_hidden: int = 256
    max_views: int = 8
    base_grid: int = 8  # positional-embedding grid side
    tight_offset: float = 0.01  # meters, k < n_tight
    free_offset: float = 0.25  # meters, k >= n_tight
    scale_max: float = 0.1  # meters
    scale_init: float = 0.03  # meters, shifts the softplus so init is off the cap
    use_global_token: bool = True
    use_intermediate_aggregation: bool = True

    def validate(self) -> None:
        if self.layers % 4 != 0:
            raise ConfigError(f"layers must be divisible by 4, got {self.layers}")
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if not (0 < self.n_tight <= self.k_per_vertex):
            raise ConfigError(f"n_tight {self.n_tight} outside 1..K={self.k_per_vertex}")


_BOOL_WORDS = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def parse_net_config(text: str) -> NetConfig:
    """key=value lines, '#' comments; unknown keys rejected."""
    known = {f.name: f.type for f in fields(NetConfig)}
    kwargs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        kind = known[key]
        if kind in ("int", int):
            kwargs[key] = int(val)
        elif kind in ("float", float):
            kwargs[key] = float(val)
        else:
            if val.lower() not in _BOOL_WORDS:
                raise ConfigError(f"line {lineno}: bad boolean {val!r}")
            kwargs[key] = _BOOL_WORDS[val.lower()]
    cfg = NetConfig(**kwargs)
    cfg.validate()
    return cfg


def load_net_config(path: str) -> NetConfig:
    with open(path) as f:
        return parse_net_config(f.read())


def save_net_config(path: str, cfg: NetConfig) -> None:
    with open(path, "w") as f:
        for fld in fields(NetConfig):
            v = getattr(cfg, fld.name)
            f.write(f"{fld.name} = {str(v).lower() if isinstance(v, bool) else v}\n")


# ---------------------------------------------------------------------------
# tri-plane texture
# ---------------------------------------------------------------------------


class TriPlaneTexture(nn.Module):
    """Three orthogonal learnable feature planes over the canonical bounding box."""

    def __init__(self, channels: int, res: int, bbox_lo, bbox_hi, rng):
        super().__init__()
        self.plane_xy = nn.param((channels, res, res), rng)
        self.plane_xz = nn.param((channels, res, res), rng)
        self.plane_yz = nn.param((channels, res, res), rng)
        self.register_buffer("bbox_lo", np.asarray(bbox_lo, np.float32))
        self.register_buffer("bbox_hi", np.asarray(bbox_hi, np.float32))
        self.channels = channels

    @classmethod
    def for_body(cls, body: BodyModel, channels: int, res: int, rng, margin: float = 0.05):
        lo = body.rest_vertices.min(axis=0)
        hi = body.rest_vertices.max(axis=0)
        pad = (hi - lo) * margin + 1e-3
        return cls(channels, res, lo - pad, hi + pad, rng)

    def normalized(self, points: np.ndarray) -> np.ndarray:
        span = self.bbox_hi - self.bbox_lo
        return (2.0 * (points - self.bbox_lo) / span - 1.0).astype(np.float32)


def sample_triplane(tex: TriPlaneTexture, points) -> Tensor:
    """Concat of bilinear samples of the xy/xz/yz projections; (M, 3*C_t)."""
    if isinstance(points, Tensor):
        norm = points  # caller already normalized differentiable points
        nd = norm.data
        xy = norm[:, (0, 1)]
        xz = norm[:, (0, 2)]
        yz = norm[:, (1, 2)]
    else:
        nd = tex.normalized(np.asarray(points, np.float32))
        xy = Tensor(nd[:, (0, 1)])
        xz = Tensor(nd[:, (0, 2)])
        yz = Tensor(nd[:, (1, 2)])
    return T.concat(
        [
            T.grid_sample_bilinear(tex.plane_xy, xy),
            T.grid_sample_bilinear(tex.plane_xz, xz),
            T.grid_sample_bilinear(tex.plane_yz, yz),
        ],
        axis=1,
    )


# ---------------------------------------------------------------------------
# per-view precomputation (pure geometry; cacheable per (body, pose, camera))
# ---------------------------------------------------------------------------


@dataclass
class ViewBundle:
    camera: Camera
    pose: Pose
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    plucker: np.ndarray  # (H, W, 6)
    covered_idx: np.ndarray  # (M,) flat pixel indices the body covers
    canon_coords: np.ndarray  # (M, 3) canonical positions at those pixels
    posed_vertices: np.ndarray  # (Nv, 3)
    visibility: np.ndarray  # (Nv,) bool
    vertex_uv: np.ndarray  # (Nv, 2) pixel coords of the posed vertices


def precompute_view(body: BodyModel, pose: Pose, camera: Camera, image: np.ndarray) -> ViewBundle:
    tf = joint_transforms(body, pose)
    posed = lbs_points(body.rest_vertices, body.weight_joints, body.weight_values, tf)
    rast = rasterize_mesh(posed, body.faces, body.rest_vertices, camera)
    covered = np.flatnonzero(rast.mask.ravel())
    canon = rast.attributes.reshape(-1, 3)[covered]
    vis = vertex_visibility(posed, body.faces, camera, depth_image=rast.depth)
    uv, _, behind = project(camera, posed)
    vis = vis & ~behind
    return ViewBundle(
        camera=camera,
        pose=pose,
        image=np.asarray(image, np.float32),
        plucker=plucker_map(camera),
        covered_idx=covered,
        canon_coords=canon.astype(np.float32),
        posed_vertices=posed,
        visibility=vis,
        vertex_uv=uv,
    )


# ---------------------------------------------------------------------------
# the network
# ---------------------------------------------------------------------------


class AvatarNet(nn.Module):
    def __init__(self, config: NetConfig, body: BodyModel, rng: np.random.Generator):
        super().__init__()
        config.validate()
        self.config = config
        self.body = body
        c = config
        self.triplane = TriPlaneTexture.for_body(body, c.triplane_channels, c.triplane_res, rng)
        in_ch = 3 + 6 + 3 * c.triplane_channels
        self.patch_proj = nn.Linear(c.patch * c.patch * in_ch, c.dim, rng)
        self.pos_emb = nn.param((c.base_grid * c.base_grid, c.dim), rng)
        self.view_emb = nn.param((c.max_views, c.dim), rng)
        self.global_token = nn.param((1, c.dim), rng)
        self.blocks = _BlockList([nn.TransformerBlock(c.dim, c.heads, rng) for _ in range(c.layers)])
        self.final_ln = nn.LayerNorm(c.dim)

        if c.use_intermediate_aggregation:
            self.tap_proj = _BlockList([nn.Conv2d(c.dim, c.agg_hidden, 1, rng) for _ in range(4)])
            fuse_in = 4 * c.agg_hidden
        else:
            self.tap_proj = _BlockList([nn.Conv2d(c.dim, c.agg_hidden, 1, rng)])
            fuse_in = c.agg_hidden
        self.fuse = nn.Conv2d(fuse_in, c.agg_mid, 3, rng, pad=1)
        self.fuse_bn = nn.BatchNorm2d(c.agg_mid)
        self.up1 = nn.ConvTranspose2d(c.agg_mid, c.agg_mid, rng)
        self.refine1 = nn.Conv2d(c.agg_mid, c.agg_mid, 3, rng, pad=1)
        self.up2 = nn.ConvTranspose2d(c.agg_mid, c.agg_mid, rng)
        self.refine2 = nn.Conv2d(c.agg_mid, c.final_dim, 3, rng, pad=1)

        dec_in = (c.dim if c.use_global_token else 0) + c.final_dim + 3
        self.dec1 = nn.Linear(dec_in, c.decoder_hidden, rng)
        self.dec2 = nn.Linear(c.decoder_hidden, c.decoder_hidden, rng)
        self.dec3 = nn.Linear(c.decoder_hidden, c.decoder_hidden, rng)
        self.geo_head = nn.Linear(c.decoder_hidden, c.k_per_vertex * 10, rng, zero_init=True)
        self.app_head = nn.Linear(c.decoder_hidden, c.k_per_vertex * 4, rng, zero_init=True)

        # per-k offset caps: componentwise tanh scaled so the l2 budget holds
        off = np.full((c.k_per_vertex, 3), c.free_offset / math.sqrt(3.0), np.float32)
        off[: c.n_tight] = c.tight_offset / math.sqrt(3.0)
        self.register_buffer("offset_caps", off)
        self.register_buffer(
            "scale_shift", np.array(math.log(math.expm1(c.scale_init)), np.float32)
        )

    # -- pose image maps ----------------------------------------------------

    def pose_image_map(self, view: ViewBundle) -> Tensor:
        """(H*W, 3*C_t) map: tri-plane features at the rasterized canonical coords."""
        h, w = view.camera.height, view.camera.width
        ct3 = 3 * self.config.triplane_channels
        if view.covered_idx.size == 0:
            return Tensor(np.zeros((h * w, ct3), np.float32))
        feats = sample_triplane(self.triplane, view.canon_coords)
        return T.scatter_rows(feats, view.covered_idx, h * w)

    # -- tokenizer ----------------------------------------------------------

    def tokenize(self, views: list[ViewBundle], posemaps: list[Tensor]) -> Tensor:
        """(N*T, D) tokens: patchified [RGB | Plucker | pose map], projected,
        plus positional and per-view embeddings."""
        c = self.config
        p = c.patch
        h, w = views[0].camera.height, views[0].camera.width
        if h % p or w % p:
            raise ConfigError(f"image {h}x{w} not divisible by patch {p}")
        if len(views) > c.max_views:
            raise ContractError(f"{len(views)} views exceeds max_views={c.max_views}")
        gh, gw = h // p, w // p
        pos = self._pos_embedding(gh, gw)  # (gh*gw, D)
        per_view = []
        for i, view in enumerate(views):
            static = np.concatenate([view.image, view.plucker], axis=-1)  # (H, W, 9)
            pm = T.reshape(posemaps[i], (h, w, 3 * c.triplane_channels))
            chans = T.concat([Tensor(static.astype(np.float32)), pm], axis=2)
            patches = T.reshape(chans, (gh, p, gw, p, static.shape[-1] + 3 * c.triplane_channels))
            patches = T.transpose(patches, (0, 2, 1, 3, 4))
            flat = T.reshape(patches, (gh * gw, p * p * (static.shape[-1] + 3 * c.triplane_channels)))
            tok = self.patch_proj(flat)
            tok = T.add(tok, pos)
            tok = T.add(tok, T.expand0(self.view_emb[i], gh * gw))
            per_view.append(tok)
        return T.concat(per_view, axis=0)

    def _pos_embedding(self, gh: int, gw: int) -> Tensor:
        c = self.config
        if gh == c.base_grid and gw == c.base_grid:
            return self.pos_emb
        # bilinear resize of the learned grid for other token resolutions
        plane = T.transpose(T.reshape(self.pos_emb, (c.base_grid, c.base_grid, c.dim)), (2, 0, 1))
        ys, xs = np.meshgrid(
            2 * (np.arange(gh) + 0.5) / gh - 1, 2 * (np.arange(gw) + 0.5) / gw - 1, indexing="ij"
        )
        coords = Tensor(np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float32))
        return T.grid_sample_bilinear(plane, coords)

    # -- encoder ------------------------------------------------------------

    def encode(self, tokens: Tensor, n_views: int, grid: tuple[int, int]):
        """Run the transformer with a prepended global token; tap the spatial
        grids at depths L/4, L/2, 3L/4, L (the last after the final norm)."""
        c = self.config
        gh, gw = grid
        seq = T.concat([self.global_token, tokens], axis=0)
        seq = T.reshape(seq, (1, 1 + n_views * gh * gw, c.dim))
        tap_at = {c.layers // 4, c.layers // 2, 3 * c.layers // 4}
        taps = []
        for i, block in enumerate(self.blocks.items, start=1):
            seq = block(seq)
            if i in tap_at:
                taps.append(self._spatial(seq, n_views, gh, gw))
        final = self.final_ln(seq)
        taps.append(self._spatial(final, n_views, gh, gw))
        global_vec = T.reshape(final[:, 0, :], (c.dim,))
        return taps, global_vec

    @staticmethod
    def _spatial(seq: Tensor, n_views: int, gh: int, gw: int) -> Tensor:
        spatial = seq[:, 1:, :]
        return T.reshape(spatial, (n_views, gh, gw, spatial.shape[-1]))

    # -- aggregation --------------------------------------------------------

    def aggregate_features(self, taps: list[Tensor], training: bool) -> Tensor:
        """Fuse tap grids and upsample 4x: (N, 4*gh, 4*gw, final_dim)."""
        use_all = self.config.use_intermediate_aggregation
        picked = taps if use_all else [taps[-1]]
        if len({t.shape[1:3] for t in picked}) != 1:
            raise ContractError("tap grids differ in spatial size")
        projected = []
        for conv, tap in zip(self.tap_proj.items, picked):
            x = T.transpose(tap, (0, 3, 1, 2))  # NHWC -> NCHW
            projected.append(conv(x))
        x = T.concat(projected, axis=1) if len(projected) > 1 else projected[0]
        x = T.leaky_relu(self.fuse_bn(self.fuse(x), training))
        x = T.leaky_relu(self.up1(x))
        x = T.leaky_relu(self.refine1(x))
        x = T.leaky_relu(self.up2(x))
        x = self.refine2(x)
        return T.transpose(x, (0, 2, 3, 1))

    # -- vertex-aligned sampling ---------------------------------------------

    def sample_vertex_features(self, featmaps: Tensor, views: list[ViewBundle]):
        """Mean-pool bilinear samples at projected posed vertices over the views
        that see them; invisible-everywhere vertices get the zero vector."""
        n, hf, wf, cdim = featmaps.shape
        nv = self.body.n_vertices
        acc = None
        counts = np.zeros(nv, np.float32)
        for i, view in enumerate(views):
            vis = np.flatnonzero(view.visibility)
            counts[vis] += 1.0
            if vis.size == 0:
                continue
            uv = view.vertex_uv[vis]
            h, w = view.camera.height, view.camera.width
            coords = np.stack([2 * uv[:, 0] / w - 1, 2 * uv[:, 1] / h - 1], axis=1)
            fmap = T.transpose(T.reshape(featmaps[i], (hf, wf, cdim)), (2, 0, 1))
            sampled = T.grid_sample_bilinear(fmap, Tensor(coords.astype(np.float32)))
            spread = T.scatter_rows(sampled, vis, nv)
            acc = spread if acc is None else T.add(acc, spread)
        if acc is None:
            return Tensor(np.zeros((nv, cdim), np.float32)), counts
        inv = np.zeros((nv, cdim), np.float32)
        inv[counts > 0] = 1.0 / counts[counts > 0, None]
        return T.mul(acc, Tensor(inv)), counts

    # -- decoder ------------------------------------------------------------

    def decode_vertices(self, global_vec: Tensor, f_local: Tensor) -> "AssetTensors":
        c = self.config
        nv = self.body.n_vertices
        parts = []
        if c.use_global_token:
            parts.append(T.expand0(global_vec, nv))
        parts.append(f_local)
        parts.append(Tensor(self.body.rest_vertices))
        x = T.concat(parts, axis=1)
        h = T.gelu(self.dec1(x))
        h = T.gelu(self.dec2(h))
        h = T.gelu(self.dec3(h))
        geo = T.reshape(self.geo_head(h), (nv, c.k_per_vertex, 10))
        app = T.reshape(self.app_head(h), (nv, c.k_per_vertex, 4))

        offsets = T.mul(T.tanh(geo[:, :, 0:3]), Tensor(self.offset_caps))
        quats = T.normalize_lastdim(T.add(geo[:, :, 3:7], Tensor(np.array([1, 0, 0, 0], np.float32))))
        scales = T.minimum(
            T.add(T.softplus(T.add(geo[:, :, 7:10], float(self.scale_shift))), 1e-4),
            c.scale_max,
        )
        opacities = T.sigmoid(app[:, :, 0])
        colors = T.sigmoid(app[:, :, 1:4])
        return AssetTensors(self.body, offsets, quats, scales, opacities, colors, c.n_tight)

    # -- full forward ---------------------------------------------------------

    def forward_tensors(self, views: list[ViewBundle], training: bool) -> "AssetTensors":
        if not views:
            raise ContractError("forward requires at least one view")
        h, w = views[0].camera.height, views[0].camera.width
        p = self.config.patch
        posemaps = [self.pose_image_map(v) for v in views]
        tokens = self.tokenize(views, posemaps)
        taps, global_vec = self.encode(tokens, len(views), (h // p, w // p))
        featmaps = self.aggregate_features(taps, training)
        f_local, _ = self.sample_vertex_features(featmaps, views)
        return self.decode_vertices(global_vec, f_local)

    def forward(self, views: list[ViewBundle]) -> CanonicalGaussianAsset:
        """Inference entry point: eval mode, counts as one network invocation."""
        count_network_invocation()
        return self.forward_tensors(views, training=False).materialize()


class _BlockList(nn.Module):
    """Minimal sequential container that registers children for parameters."""

    def __init__(self, items):
        super().__init__()
        self.items = list(items)
        for i, mod in enumerate(self.items):
            setattr(self, f"m{i}", mod)


@dataclass
class AssetTensors:
    """Asset attributes still on the tape (training-time form of the asset)."""

    body: BodyModel
    offsets: Tensor  # (Nv, K, 3)
    quats: Tensor  # (Nv, K, 4), unit rows
    scales: Tensor  # (Nv, K, 3)
    opacities: Tensor  # (Nv, K)
    colors: Tensor  # (Nv, K, 3)
    n_tight: int

    def materialize(self) -> CanonicalGaussianAsset:
        op = np.clip(self.opacities.data, 1e-6, 1 - 1e-6)
        return CanonicalGaussianAsset(
            body=self.body,
            offsets=self.offsets.data.copy(),
            quats=self.quats.data.copy(),
            scales=self.scales.data.copy(),
            opacities=op.astype(np.float32),
            colors=np.clip(self.colors.data, 0.0, 1.0).astype(np.float32),
            n_tight=self.n_tight,
        )
