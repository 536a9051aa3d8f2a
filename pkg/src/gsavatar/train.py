"""Losses, the differentiable pose+render path, the training loop, evaluation.

The reconstruction loss is MSE plus a multi-scale Sobel-gradient L1 term (the
perceptual surrogate; no pretrained features are available to this build),
averaged over the target views of the step. Tightness penalizes the squared
offsets of each vertex's first primitive.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import nn
from . import tensor as T
from .avatar import AssetTensors, AvatarNet, NetConfig, ViewBundle, precompute_view
from .body import Pose, blend_transforms, closest_rotation, joint_transforms, matrix_to_quat
from .camera import Camera
from .errors import ConfigError, ContractError, PoisonedGradientError
from .gsplat import render_image_op, render_tiled
from .metrics import psnr, ssim
from .optim import AdamW
from .synthetic import SyntheticScene, make_synthetic_scene
from .tensor import Tensor


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], np.float32).reshape(1, 1, 3, 3)
_SOBEL_Y = _SOBEL_X.transpose(0, 1, 3, 2).copy()


def _sobel_l1(pred: Tensor, target: Tensor) -> Tensor:
    """Mean |Sobel(pred) - Sobel(target)| over both derivative maps, valid region."""
    h, w, c = pred.shape
    p = T.reshape(T.transpose(pred, (2, 0, 1)), (c, 1, h, w))
    t = T.reshape(T.transpose(target, (2, 0, 1)), (c, 1, h, w))
    kx, ky = Tensor(_SOBEL_X), Tensor(_SOBEL_Y)
    gx = T.sub(T.conv2d(p, kx), T.conv2d(t, kx))
    gy = T.sub(T.conv2d(p, ky), T.conv2d(t, ky))
    return T.mul(T.add(T.mean(T.abs_(gx)), T.mean(T.abs_(gy))), 0.5)


def _avg_pool2(x: Tensor) -> Tensor:
    h, w, c = x.shape
    x = x[: h - h % 2, : w - w % 2]
    return T.mean(T.reshape(x, (h // 2, 2, w // 2, 2, c)), axis=(1, 3))


def perceptual_surrogate(pred: Tensor, target: Tensor) -> Tensor:
    """Multi-scale (1, 1/2, 1/4) Sobel-gradient L1 between the two images."""
    perc_terms = []
    p_s, t_s = pred, target
    for level in range(3):
        if level:
            p_s, t_s = _avg_pool2(p_s), _avg_pool2(t_s)
        perc_terms.append(_sobel_l1(p_s, t_s))
    return T.mul(T.add(T.add(perc_terms[0], perc_terms[1]), perc_terms[2]), 1.0 / 3.0)


def loss_recon(pred: Tensor, target: np.ndarray, lambda_perc: float) -> Tensor:
    """MSE + lambda * perceptual surrogate."""
    if pred.shape != target.shape:
        from .errors import ShapeError

        raise ShapeError(f"loss_recon: pred {pred.shape} vs target {target.shape}")
    tgt = Tensor(np.asarray(target, np.float32))
    mse = T.mean(T.square(T.sub(pred, tgt)))
    if lambda_perc == 0.0:
        return mse
    return T.add(mse, T.mul(perceptual_surrogate(pred, tgt), lambda_perc))


def loss_tightness(asset: AssetTensors) -> Tensor:
    """(1/Nv) * sum_i ||offset_{i,1}||^2 over the first (tight) primitive."""
    nv = asset.offsets.shape[0]
    tight = asset.offsets[:, 0:1, :]
    return T.mul(T.sum_(T.square(tight)), 1.0 / nv)


def _sum_terms(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = T.add(acc, t)
    return acc


# ---------------------------------------------------------------------------
# differentiable posing of asset tensors
# ---------------------------------------------------------------------------


def _quat_left_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((q.shape[0], 4, 4), np.float32)
    m[:, 0] = np.stack([w, -x, -y, -z], axis=1)
    m[:, 1] = np.stack([x, w, -z, y], axis=1)
    m[:, 2] = np.stack([y, z, w, -x], axis=1)
    m[:, 3] = np.stack([z, -y, x, w], axis=1)
    return m


@dataclass
class PoseCache:
    """Per-pose constants for the differentiable skinning map."""

    rot_t: np.ndarray  # (Nv, 3, 3): blended rotation, transposed for row vectors
    trans: np.ndarray  # (Nv, 1, 3)
    quat_left_t: np.ndarray  # (Nv, 4, 4): left-multiply matrix of the blend quat


def build_pose_cache(body, pose: Pose) -> PoseCache:
    tf = joint_transforms(body, pose)
    blend = blend_transforms(tf, body.weight_joints, body.weight_values)
    qb = matrix_to_quat(closest_rotation(blend[:, :, :3]))
    return PoseCache(
        rot_t=np.ascontiguousarray(blend[:, :, :3].transpose(0, 2, 1)),
        trans=blend[:, None, :, 3].copy(),
        quat_left_t=np.ascontiguousarray(_quat_left_matrix(qb).transpose(0, 2, 1)),
    )


def pose_asset_tensors(asset: AssetTensors, cache: PoseCache):
    """Skin the on-tape asset into world space; returns flat render-op inputs."""
    nv, k = asset.offsets.shape[:2]
    rest = np.broadcast_to(asset.body.rest_vertices[:, None], (nv, k, 3)).copy()
    cano = T.add(asset.offsets, Tensor(rest))
    posed = T.matmul(cano, Tensor(cache.rot_t))
    posed = T.add(posed, Tensor(np.broadcast_to(cache.trans, (nv, k, 3)).copy()))
    quats = T.matmul(asset.quats, Tensor(cache.quat_left_t))
    return (
        T.reshape(posed, (nv * k, 3)),
        T.reshape(quats, (nv * k, 4)),
        T.reshape(asset.scales, (nv * k, 3)),
        T.reshape(asset.opacities, (nv * k,)),
        T.reshape(asset.colors, (nv * k, 3)),
    )


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    lambda_perc: float = 1.0
    lambda_reg: float = 0.1
    lr: float = 4e-4
    weight_decay: float = 0.05
    steps: int = 2000
    target_views_per_step: int = 2
    n_input_views: int = 4
    resolution: int = 64
    schedule: str = ""  # progressive stages "res:steps,res:steps"; empty = single stage
    seed: int = 0
    view_sampling: str = "fixed"  # "variable" samples 1..n_input_views inputs per step
    n_vertices: int = 400
    n_views: int = 8
    n_poses: int = 3
    n_subjects: int = 1
    checkpoint_every: int = 250
    eval_every: int = 100
    net: NetConfig = field(default_factory=NetConfig)

    def validate(self) -> None:
        if self.lambda_perc < 0 or self.lambda_reg < 0:
            raise ConfigError("loss weights must be non-negative")
        for res, _ in self.stages():
            if res % self.net.patch:
                raise ConfigError(f"resolution {res} not divisible by patch {self.net.patch}")
        if self.view_sampling not in ("fixed", "variable"):
            raise ConfigError(f"unknown view_sampling {self.view_sampling!r}")
        self.net.validate()

    def stages(self) -> list[tuple[int, int]]:
        if not self.schedule:
            return [(self.resolution, self.steps)]
        out = []
        for part in self.schedule.split(","):
            res, steps = part.split(":")
            out.append((int(res), int(steps)))
        return out


def parse_train_config(text: str) -> TrainConfig:
    """key=value lines; net.* keys configure the network. Unknown keys rejected."""
    own = {f.name: f.type for f in fields(TrainConfig) if f.name != "net"}
    kwargs = {}
    net_lines = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key.startswith("net."):
            net_lines.append(f"{key[4:]} = {val}")
            continue
        if key not in own:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        kind = own[key]
        if kind in ("int", int):
            kwargs[key] = int(val)
        elif kind in ("float", float):
            kwargs[key] = float(val)
        else:
            kwargs[key] = val
    from .avatar import parse_net_config

    cfg = TrainConfig(net=parse_net_config("\n".join(net_lines)), **kwargs)
    cfg.validate()
    return cfg


def load_train_config(path: str) -> TrainConfig:
    with open(path) as f:
        return parse_train_config(f.read())


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class SubjectData:
    scene: SyntheticScene
    bundles: dict  # camera index -> ViewBundle (paired with its training pose)
    pose_caches: dict  # pose index -> PoseCache


@dataclass
class TrainResult:
    net: AvatarNet
    config: TrainConfig
    subjects: list[SubjectData]
    log: list[dict]
    baseline_loss: float
    aborted: bool = False
    wall_seconds: float = 0.0


def _prepare_subject(scene: SyntheticScene) -> SubjectData:
    bundles = {}
    for cam_idx in range(scene.n_views):
        pose_idx = scene.view_pose[cam_idx]
        img, _ = scene.ground_truth(cam_idx, pose_idx)
        bundles[cam_idx] = precompute_view(
            scene.body, scene.poses[pose_idx], scene.cameras[cam_idx], img
        )
    caches = {i: build_pose_cache(scene.body, p) for i, p in enumerate(scene.poses)}
    return SubjectData(scene, bundles, caches)


def build_subjects(config: TrainConfig, base_scene: SyntheticScene | None = None,
                   resolution: int | None = None) -> list[SubjectData]:
    res = resolution or config.resolution
    subjects = []
    for s in range(config.n_subjects):
        if base_scene is not None and s == 0 and base_scene.resolution == res:
            scene = base_scene
        else:
            seed = base_scene.seed if base_scene is not None else config.seed
            scene = make_synthetic_scene(
                seed, config.n_vertices, config.n_views, config.n_poses,
                resolution=res, albedo_seed=seed + 1 + 97 * s,
            )
        subjects.append(_prepare_subject(scene))
    return subjects


def input_camera_indices(scene: SyntheticScene, n_input: int) -> list[int]:
    held_in = scene.held_in_cameras
    if n_input > len(held_in):
        raise ContractError(f"requested {n_input} input views, only {len(held_in)} held in")
    # spread the inputs around the ring rather than taking one side
    picks = np.linspace(0, len(held_in), n_input, endpoint=False).astype(int)
    return [held_in[i] for i in picks]


def train(config: TrainConfig, scene: SyntheticScene | None = None) -> TrainResult:
    """Feed-forward training on synthetic subjects; returns the net + metrics log."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    stages = config.stages()
    subjects = build_subjects(config, scene, resolution=stages[0][0])
    net = AvatarNet(config.net, subjects[0].scene.body, np.random.default_rng(config.seed + 7))
    params = net.parameters()
    total_steps = sum(s for _, s in stages)
    opt = AdamW(params, lr=config.lr, weight_decay=config.weight_decay, total_steps=total_steps)

    log: list[dict] = []
    baseline_loss = math.nan
    aborted = False
    snapshot = None
    t_start = time.perf_counter()
    step = 0
    for stage_idx, (res, stage_steps) in enumerate(stages):
        if stage_idx > 0:
            subjects = build_subjects(config, scene, resolution=res)
        for _ in range(stage_steps):
            step += 1
            subj = subjects[rng.integers(len(subjects))] if len(subjects) > 1 else subjects[0]
            scene_ = subj.scene
            inputs_all = input_camera_indices(scene_, config.n_input_views)
            if config.view_sampling == "variable":
                sizes = [n for n in (1, 2, 4) if n <= len(inputs_all)]
                n_in = int(rng.choice(sizes))
                chosen = list(rng.choice(inputs_all, size=n_in, replace=False))
            else:
                chosen = inputs_all
            targets = list(
                rng.choice(scene_.held_in_cameras, size=config.target_views_per_step, replace=False)
            )

            asset_t = net.forward_tensors([subj.bundles[i] for i in chosen], training=True)
            mse_terms, perc_terms = [], []
            for cam_idx in targets:
                pose_idx = scene_.view_pose[cam_idx]
                flat = pose_asset_tensors(asset_t, subj.pose_caches[pose_idx])
                pred = render_image_op(*flat, scene_.cameras[cam_idx])
                gt, _ = scene_.ground_truth(cam_idx, pose_idx)
                tgt = Tensor(gt)
                mse_terms.append(T.mean(T.square(T.sub(pred, tgt))))
                if config.lambda_perc:
                    perc_terms.append(perceptual_surrogate(pred, tgt))
            inv_m = 1.0 / len(targets)
            mse = T.mul(_sum_terms(mse_terms), inv_m)
            recon = mse
            perc_val = 0.0
            if perc_terms:
                perc = T.mul(_sum_terms(perc_terms), inv_m)
                perc_val = perc.item()
                recon = T.add(mse, T.mul(perc, config.lambda_perc))
            reg = loss_tightness(asset_t)
            loss = T.add(recon, T.mul(reg, config.lambda_reg))

            loss_val = loss.item()
            if step == 1:
                baseline_loss = loss_val
            row = {"step": step, "loss": loss_val, "mse": mse.item(),
                   "perc": perc_val, "reg": reg.item(), "psnr": math.nan}

            if not math.isfinite(loss_val):
                aborted = True
                if snapshot is not None:
                    for p, data in zip(params, snapshot):
                        p.data[...] = data
                log.append(row)
                break
            opt.zero_grad()
            T.grad(loss, params)
            try:
                opt.step()
            except PoisonedGradientError:
                aborted = True
                if snapshot is not None:
                    for p, data in zip(params, snapshot):
                        p.data[...] = data
                log.append(row)
                break

            if step % config.eval_every == 0 or step == total_steps:
                row["psnr"] = evaluate_training_views(net, subj, config.n_input_views)
            if step % config.checkpoint_every == 0:
                snapshot = [p.data.copy() for p in params]
            log.append(row)
        if aborted:
            break
    return TrainResult(net, config, subjects, log, baseline_loss, aborted,
                       time.perf_counter() - t_start)


def save_metrics_csv(path: str, log: list[dict]) -> None:
    with open(path, "w") as f:
        f.write("step,loss,mse,perc,reg,psnr\n")
        for row in log:
            cells = [str(row["step"])]
            for key in ("loss", "mse", "perc", "reg", "psnr"):
                v = row[key]
                cells.append("" if isinstance(v, float) and math.isnan(v) else f"{v:.6f}")
            f.write(",".join(cells) + "\n")


# ---------------------------------------------------------------------------
# evaluation protocols
# ---------------------------------------------------------------------------


def _render_asset(asset, pose: Pose, camera: Camera):
    from .asset import pose_asset

    posed = pose_asset(asset, asset.body, pose)
    return render_tiled(posed.gaussians, camera)


def build_asset_from_inputs(net: AvatarNet, subj: SubjectData, n_input: int):
    chosen = input_camera_indices(subj.scene, n_input)
    return net.forward([subj.bundles[i] for i in chosen])


def evaluate_training_views(net: AvatarNet, subj: SubjectData, n_input: int) -> float:
    """Mean PSNR re-rendering the input views themselves."""
    asset = build_asset_from_inputs(net, subj, n_input)
    scene = subj.scene
    vals = []
    for cam_idx in input_camera_indices(scene, n_input):
        pose_idx = scene.view_pose[cam_idx]
        img, _ = _render_asset(asset, scene.poses[pose_idx], scene.cameras[cam_idx])
        gt, _ = scene.ground_truth(cam_idx, pose_idx)
        vals.append(psnr(img, gt))
    return float(np.mean(vals))


def evaluate_protocol(net: AvatarNet, subj: SubjectData, protocol: str, n_input: int):
    """'recon': held-out cameras at a seen pose. 'anim': held-out camera + unseen pose.

    Returns {"psnr": float, "ssim": float, "views": [...]} averaged over eval views.
    """
    scene = subj.scene
    asset = build_asset_from_inputs(net, subj, n_input)
    if protocol == "recon":
        pose_indices = [scene.seen_poses[0]] * len(scene.held_out_cameras)
        cams = scene.held_out_cameras
    elif protocol == "anim":
        if scene.unseen_pose is None:
            raise ContractError("scene has no held-out pose for the anim protocol")
        pose_indices = [scene.unseen_pose] * len(scene.held_out_cameras)
        cams = scene.held_out_cameras
    else:
        raise ConfigError(f"unknown protocol {protocol!r}")
    rows = []
    for cam_idx, pose_idx in zip(cams, pose_indices):
        img, _ = _render_asset(asset, scene.poses[pose_idx], scene.cameras[cam_idx])
        gt, _ = scene.ground_truth(cam_idx, pose_idx)
        rows.append({"camera": cam_idx, "pose": pose_idx,
                     "psnr": psnr(img, gt), "ssim": ssim(img, gt)})
    return {
        "psnr": float(np.mean([r["psnr"] for r in rows])),
        "ssim": float(np.mean([r["ssim"] for r in rows])),
        "views": rows,
    }
