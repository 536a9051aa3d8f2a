"""Command-line entry points; thin wrappers over the library.

Exit codes: 0 success, 1 runtime failure (diagnostic on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np


def _cmd_train(args) -> int:
    from .checkpoint import save_weights
    from .train import TrainConfig, load_train_config, save_metrics_csv, train

    cfg = load_train_config(args.config) if args.config else TrainConfig()
    if args.scene_seed is not None:
        cfg.seed = args.scene_seed
    if args.steps is not None:
        cfg.steps = args.steps
    result = train(cfg)
    save_weights(args.out, result.net.state_arrays())
    with open(args.out + ".cfg", "w") as f:
        f.write(_train_config_text(cfg))
    csv_path = args.metrics or (args.out + ".metrics.csv")
    save_metrics_csv(csv_path, result.log)
    last = result.log[-1]
    print(f"trained {last['step']} steps in {result.wall_seconds:.1f}s; "
          f"final loss {last['loss']:.5f}; weights -> {args.out}")
    if result.aborted:
        print("training aborted on non-finite loss; weights are the last good checkpoint",
              file=sys.stderr)
        return 1
    return 0


def _train_config_text(cfg) -> str:
    from dataclasses import fields

    from .avatar import NetConfig
    from .train import TrainConfig

    lines = []
    for f in fields(TrainConfig):
        if f.name == "net":
            continue
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    for f in fields(NetConfig):
        v = getattr(cfg.net, f.name)
        lines.append(f"net.{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


def _load_net_for_weights(weights_path: str):
    from .checkpoint import load_weights
    from .train import load_train_config

    cfg = load_train_config(weights_path + ".cfg")
    arrays = load_weights(weights_path)
    return cfg, arrays


def _build_asset(weights: str, scene_seed: int, n_views: int):
    from .avatar import AvatarNet
    from .synthetic import make_synthetic_scene
    from .train import _prepare_subject, input_camera_indices

    cfg, arrays = _load_net_for_weights(weights)
    scene = make_synthetic_scene(scene_seed, cfg.n_vertices, cfg.n_views, cfg.n_poses,
                                 resolution=cfg.resolution)
    subj = _prepare_subject(scene)
    net = AvatarNet(cfg.net, scene.body, np.random.default_rng(cfg.seed + 7))
    net.load_state_arrays(arrays)
    views = [subj.bundles[i] for i in input_camera_indices(scene, n_views)]
    t0 = time.perf_counter()
    asset = net.forward(views)
    modeling_s = time.perf_counter() - t0
    return asset, modeling_s, subj, net, cfg


def _cmd_build_asset(args) -> int:
    from .asset import save_asset

    asset, modeling_s, _, _, _ = _build_asset(args.weights, args.scene_seed, args.views)
    save_asset(args.out, asset)
    print(f"modeling_s {modeling_s:.3f}")
    print(f"asset {args.out}: {asset.count} gaussians ({asset.offsets.shape[0]} vertices x K={asset.k})")
    return 0


def _cmd_animate(args) -> int:
    from .asset import animate, load_asset, load_clip

    asset = load_asset(args.asset)
    clip = load_clip(args.clip)
    report = animate(asset, clip, args.out)
    s = report.summary()
    print(f"frames {s['frames']}  synthesis_s_per_frame {s['frame_ms'] / 1e3:.4f}  "
          f"lbs_ms {s['lbs_ms']:.2f}  raster_ms {s['raster_ms']:.2f}  "
          f"encode_ms {s['encode_ms']:.2f}  network_invocations {s['network_invocations']}")
    return 0


def _cmd_bench(args) -> int:
    from .asset import load_asset, make_turntable_clip, pose_asset
    from .gsplat import render_oracle, render_tiled

    asset = load_asset(args.asset)
    try:
        h, w = (int(x) for x in args.res.lower().split("x"))
    except ValueError:
        print(f"bad --res {args.res!r}, expected HxW", file=sys.stderr)
        return 2
    clip = make_turntable_clip(asset, n_frames=args.frames, resolution=max(h, w))
    lbs_ms, raster_ms = [], []
    for pose, cam in clip.frames:
        cam.height, cam.width = h, w
        t0 = time.perf_counter()
        posed = pose_asset(asset, asset.body, pose)
        t1 = time.perf_counter()
        render_tiled(posed.gaussians, cam)
        t2 = time.perf_counter()
        lbs_ms.append((t1 - t0) * 1e3)
        raster_ms.append((t2 - t1) * 1e3)
    frame_ms = float(np.mean(lbs_ms) + np.mean(raster_ms))
    pose0, cam0 = clip.frames[0]
    cam0.height, cam0.width = h, w
    posed0 = pose_asset(asset, asset.body, pose0)
    t0 = time.perf_counter()
    img_t, _ = render_tiled(posed0.gaussians, cam0)
    tiled_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    img_o, _ = render_oracle(posed0.gaussians, cam0)
    oracle_s = time.perf_counter() - t0
    print(f"gaussians {posed0.gaussians.count}  res {w}x{h}  frames {args.frames}")
    print(f"lbs_ms {np.mean(lbs_ms):.2f}  raster_ms {np.mean(raster_ms):.2f}  fps {1000.0 / frame_ms:.2f}")
    print(f"oracle_s {oracle_s:.3f}  tiled_s {tiled_s:.3f}  speedup {oracle_s / tiled_s:.1f}x  "
          f"max_abs_diff {np.abs(img_t - img_o).max():.2e}")
    return 0


def _cmd_eval(args) -> int:
    from .train import evaluate_protocol

    _, _, subj, net, cfg = _build_asset(args.weights, args.scene_seed, args.views)
    report = evaluate_protocol(net, subj, args.protocol, args.views)
    print(f"protocol {args.protocol}  views {args.views}")
    print("camera,pose,psnr,ssim")
    for row in report["views"]:
        print(f"{row['camera']},{row['pose']},{row['psnr']:.3f},{row['ssim']:.4f}")
    print(f"mean,,{report['psnr']:.3f},{report['ssim']:.4f}")
    return 0


def _cmd_ablate(args) -> int:
    from .ablation import AXES, run_ablation, save_ablation_csv
    from .train import TrainConfig, load_train_config

    cfg = load_train_config(args.config) if args.config else TrainConfig(
        steps=args.steps, n_vertices=200, n_views=6, n_poses=2, resolution=32,
        n_input_views=4, eval_every=10**9,
    )
    if args.scene_seed is not None:
        cfg.seed = args.scene_seed
    report = run_ablation(cfg, args.axis)
    for row in report["rows"]:
        print(row)
    if args.out:
        save_ablation_csv(args.out, report)
        print(f"report -> {args.out}")
    return 0


def _cmd_serve(args) -> int:
    from .asset import load_asset
    from .service import serve

    asset = load_asset(args.asset)
    print(f"serving {asset.count} gaussians on ws://{args.host}:{args.port}/ws")
    serve(asset, args.port, resolution=args.res, host=args.host)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gsavatar",
                                description="canonical Gaussian avatars: train, animate, serve")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train the reconstructor on a synthetic scene")
    t.add_argument("--config", help="train config file (key=value, net.* for the network)")
    t.add_argument("--scene-seed", type=int, default=None)
    t.add_argument("--steps", type=int, default=None, help="override config steps")
    t.add_argument("--out", required=True, help="output weight checkpoint (HGSW)")
    t.add_argument("--metrics", help="metrics CSV path (default <out>.metrics.csv)")
    t.set_defaults(fn=_cmd_train)

    b = sub.add_parser("build-asset", help="one forward pass -> canonical asset file")
    b.add_argument("--weights", required=True)
    b.add_argument("--scene-seed", type=int, required=True)
    b.add_argument("--views", type=int, default=4)
    b.add_argument("--out", required=True)
    b.set_defaults(fn=_cmd_build_asset)

    a = sub.add_parser("animate", help="render an animation clip from an asset")
    a.add_argument("--asset", required=True)
    a.add_argument("--clip", required=True, help="clip JSON file")
    a.add_argument("--out", required=True, help="output directory for PNG frames")
    a.set_defaults(fn=_cmd_animate)

    bn = sub.add_parser("bench", help="throughput report: tiled renderer and LBS")
    bn.add_argument("--asset", required=True)
    bn.add_argument("--res", default="256x256")
    bn.add_argument("--frames", type=int, default=20)
    bn.set_defaults(fn=_cmd_bench)

    e = sub.add_parser("eval", help="PSNR/SSIM tables on held-out views/poses")
    e.add_argument("--weights", required=True)
    e.add_argument("--scene-seed", type=int, required=True)
    e.add_argument("--protocol", choices=("recon", "anim"), required=True)
    e.add_argument("--views", type=int, default=4)
    e.set_defaults(fn=_cmd_eval)

    ab = sub.add_parser("ablate", help="paired-model ablation on one axis")
    ab.add_argument("--axis", required=True,
                    choices=("global_token", "intermediate_aggregation", "k_per_vertex"))
    ab.add_argument("--config", help="train config file")
    ab.add_argument("--scene-seed", type=int, default=None)
    ab.add_argument("--steps", type=int, default=60)
    ab.add_argument("--out", help="CSV report path")
    ab.set_defaults(fn=_cmd_ablate)

    s = sub.add_parser("serve", help="run the live render service")
    s.add_argument("--asset", required=True)
    s.add_argument("--port", type=int, required=True)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--res", type=int, default=256)
    s.set_defaults(fn=_cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
