"""Paired-model ablations: global token, intermediate-feature aggregation,
Gaussian count per vertex. Each axis trains two models from a shared seed that
differ only on the toggled component, then compares them on held-out views.
"""

from __future__ import annotations

import copy
from dataclasses import replace

import numpy as np

from .errors import ConfigError
from .metrics import patch_metric, psnr, ssim
from .synthetic import SyntheticScene
from .train import (
    TrainConfig,
    build_asset_from_inputs,
    evaluate_protocol,
    train,
)

AXES = ("global_token", "intermediate_aggregation", "k_per_vertex")


def _variant_pair(base: TrainConfig, axis: str) -> tuple[TrainConfig, TrainConfig, str, str]:
    if axis == "global_token":
        on = copy.deepcopy(base)
        on.net = replace(base.net, use_global_token=True)
        on.view_sampling = "variable"
        off = copy.deepcopy(on)
        off.net = replace(on.net, use_global_token=False)
        return on, off, "with_global_token", "without_global_token"
    if axis == "intermediate_aggregation":
        on = copy.deepcopy(base)
        on.net = replace(base.net, use_intermediate_aggregation=True)
        off = copy.deepcopy(base)
        off.net = replace(base.net, use_intermediate_aggregation=False)
        return on, off, "intermediate_taps", "final_tap_only"
    if axis == "k_per_vertex":
        hybrid = copy.deepcopy(base)
        hybrid.net = replace(base.net, k_per_vertex=5, n_tight=1)
        single = copy.deepcopy(base)
        single.net = replace(base.net, k_per_vertex=1, n_tight=1)
        return hybrid, single, "k5_tight_plus_free", "k1_single"
    raise ConfigError(f"unknown ablation axis {axis!r}; valid: {AXES}")


def _render_heldout(result, subj, n_input: int):
    """Held-out renders plus ground truth for patch comparisons."""
    scene = subj.scene
    asset = build_asset_from_inputs(result.net, subj, n_input)
    from .asset import pose_asset
    from .gsplat import render_tiled

    out = []
    for cam_idx in scene.held_out_cameras:
        for pose_idx in scene.seen_poses:
            posed = pose_asset(asset, asset.body, scene.poses[pose_idx])
            img, _ = render_tiled(posed.gaussians, scene.cameras[cam_idx])
            gt, mask = scene.ground_truth(cam_idx, pose_idx)
            out.append((img, gt, mask))
    return out


def run_ablation(base: TrainConfig, axis: str, scene: SyntheticScene | None = None,
                 patch: int = 16) -> dict:
    """Train the paired variants and produce the comparison report."""
    cfg_a, cfg_b, name_a, name_b = _variant_pair(base, axis)
    res_a = train(cfg_a, scene)
    res_b = train(cfg_b, scene)
    report: dict = {"axis": axis, "seed": base.seed, "variants": [name_a, name_b]}

    if axis == "global_token":
        rows = []
        for n in (1, 2, 4):
            if n > base.n_input_views:
                continue
            pa = np.mean([evaluate_protocol(res_a.net, s, "recon", n)["psnr"] for s in res_a.subjects])
            pb = np.mean([evaluate_protocol(res_b.net, s, "recon", n)["psnr"] for s in res_b.subjects])
            sa = np.mean([evaluate_protocol(res_a.net, s, "recon", n)["ssim"] for s in res_a.subjects])
            sb = np.mean([evaluate_protocol(res_b.net, s, "recon", n)["ssim"] for s in res_b.subjects])
            rows.append({"views": n, f"psnr_{name_a}": float(pa), f"psnr_{name_b}": float(pb),
                         f"ssim_{name_a}": float(sa), f"ssim_{name_b}": float(sb),
                         "psnr_margin": float(pa - pb)})
        report["rows"] = rows
    elif axis == "intermediate_aggregation":
        deltas = []
        for subj_a, subj_b in zip(res_a.subjects, res_b.subjects):
            rendered_a = _render_heldout(res_a, subj_a, base.n_input_views)
            rendered_b = _render_heldout(res_b, subj_b, base.n_input_views)
            for (img_a, gt, mask), (img_b, _, _) in zip(rendered_a, rendered_b):
                pa, coords = patch_metric(img_a, gt, mask, patch=patch)
                pb, coords_b = patch_metric(img_b, gt, mask, patch=patch)
                assert coords == coords_b  # same ground truth, same valid patches
                deltas.extend(float(x - y) for x, y in zip(pa, pb))
        report["rows"] = [{
            "valid_patches": len(deltas),
            "median_delta": float(np.median(deltas)) if deltas else float("nan"),
            "positive_fraction": float(np.mean([d > 0 for d in deltas])) if deltas else float("nan"),
        }]
        report["deltas"] = deltas
    else:  # k_per_vertex: a Table-5-shaped two-row comparison
        rows = []
        for name, res in ((name_a, res_a), (name_b, res_b)):
            evals = [evaluate_protocol(res.net, s, "recon", base.n_input_views) for s in res.subjects]
            rows.append({"variant": name,
                         "psnr": float(np.mean([e["psnr"] for e in evals])),
                         "ssim": float(np.mean([e["ssim"] for e in evals]))})
        report["rows"] = rows
    return report


def save_ablation_csv(path: str, report: dict) -> None:
    rows = report["rows"]
    keys = list(rows[0].keys())
    with open(path, "w") as f:
        f.write(",".join(keys) + "\n")
        for row in rows:
            f.write(",".join(f"{row[k]:.6f}" if isinstance(row[k], float) else str(row[k]) for k in keys) + "\n")
