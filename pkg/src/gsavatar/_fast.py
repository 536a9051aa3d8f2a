"""Optional numba-jitted hot loops: tile compositing and skinning.

Same float32 arithmetic as the numpy reference paths (verified equal in
tests); used automatically when numba imports, otherwise callers fall back.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(f):
            return f

        return deco if not args else deco(args[0])


@njit(cache=True)
def composite_tiles(
    mx, my, ca, cb, cc, opac, colors, rank_sorted, bounds,
    h, w, ntx, nty, tile, cutoff, alpha_max, t_early,
):
    """Sequential front-to-back compositing per pixel within binned tiles.

    All per-splat arrays are already in global depth order; rank_sorted holds
    indices into them, grouped per tile by `bounds`.
    """
    color = np.zeros((h, w, 3), np.float32)
    alpha_img = np.zeros((h, w), np.float32)
    one = np.float32(1.0)
    half = np.float32(0.5)
    for tid in range(ntx * nty):
        lo, hi = bounds[tid], bounds[tid + 1]
        if hi <= lo:
            continue
        ty = tid // ntx
        tx = tid - ty * ntx
        y0 = ty * tile
        x0 = tx * tile
        y1 = min(y0 + tile, h)
        x1 = min(x0 + tile, w)
        for py in range(y0, y1):
            fy = np.float32(py) + half
            for px in range(x0, x1):
                fx = np.float32(px) + half
                t = one
                r = np.float32(0.0)
                g = np.float32(0.0)
                b = np.float32(0.0)
                acc = np.float32(0.0)
                for s in range(lo, hi):
                    if t < t_early:
                        break
                    i = rank_sorted[s]
                    dx = fx - mx[i]
                    dy = fy - my[i]
                    power = half * (ca[i] * dx * dx + cc[i] * dy * dy) + cb[i] * dx * dy
                    if power > cutoff:
                        continue
                    al = opac[i] * np.float32(np.exp(-power))
                    if al > alpha_max:
                        al = alpha_max
                    wgt = t * al
                    r += wgt * colors[i, 0]
                    g += wgt * colors[i, 1]
                    b += wgt * colors[i, 2]
                    acc += wgt
                    t *= one - al
                color[py, px, 0] = r
                color[py, px, 1] = g
                color[py, px, 2] = b
                alpha_img[py, px] = acc
    return color, alpha_img


@njit(cache=True)
def skin_gaussians(blend, rot_polar, means, quats, k):
    """Apply per-vertex blended affines/rotations to K gaussians per vertex.

    blend: (Nv, 3, 4) blended joint transforms; rot_polar: (Nv, 3, 3) closest
    rotations of the blend; means/quats flat (Nv*K, .). Returns posed means
    and unit quaternions.
    """
    nv = blend.shape[0]
    out_means = np.empty_like(means)
    out_quats = np.empty_like(quats)
    for v in range(nv):
        b00 = blend[v, 0, 0]; b01 = blend[v, 0, 1]; b02 = blend[v, 0, 2]; b03 = blend[v, 0, 3]
        b10 = blend[v, 1, 0]; b11 = blend[v, 1, 1]; b12 = blend[v, 1, 2]; b13 = blend[v, 1, 3]
        b20 = blend[v, 2, 0]; b21 = blend[v, 2, 1]; b22 = blend[v, 2, 2]; b23 = blend[v, 2, 3]
        r = rot_polar[v]
        # quaternion of the polar rotation (Shepperd, scalar branch per vertex)
        tr = r[0, 0] + r[1, 1] + r[2, 2]
        if tr > 0.0:
            s = np.sqrt(tr + 1.0) * 2.0
            qw = 0.25 * s
            qx = (r[2, 1] - r[1, 2]) / s
            qy = (r[0, 2] - r[2, 0]) / s
            qz = (r[1, 0] - r[0, 1]) / s
        elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
            s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
            qw = (r[2, 1] - r[1, 2]) / s
            qx = 0.25 * s
            qy = (r[0, 1] + r[1, 0]) / s
            qz = (r[0, 2] + r[2, 0]) / s
        elif r[1, 1] > r[2, 2]:
            s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
            qw = (r[0, 2] - r[2, 0]) / s
            qx = (r[0, 1] + r[1, 0]) / s
            qy = 0.25 * s
            qz = (r[1, 2] + r[2, 1]) / s
        else:
            s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
            qw = (r[1, 0] - r[0, 1]) / s
            qx = (r[0, 2] + r[2, 0]) / s
            qy = (r[1, 2] + r[2, 1]) / s
            qz = 0.25 * s
        n = np.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        qw /= n; qx /= n; qy /= n; qz /= n
        for j in range(k):
            g = v * k + j
            x = means[g, 0]; y = means[g, 1]; z = means[g, 2]
            out_means[g, 0] = b00 * x + b01 * y + b02 * z + b03
            out_means[g, 1] = b10 * x + b11 * y + b12 * z + b13
            out_means[g, 2] = b20 * x + b21 * y + b22 * z + b23
            aw = quats[g, 0]; ax = quats[g, 1]; ay = quats[g, 2]; az = quats[g, 3]
            ow = qw * aw - qx * ax - qy * ay - qz * az
            ox = qw * ax + qx * aw + qy * az - qz * ay
            oy = qw * ay - qx * az + qy * aw + qz * ax
            oz = qw * az + qx * ay - qy * ax + qz * aw
            n2 = np.sqrt(ow * ow + ox * ox + oy * oy + oz * oz)
            out_quats[g, 0] = ow / n2
            out_quats[g, 1] = ox / n2
            out_quats[g, 2] = oy / n2
            out_quats[g, 3] = oz / n2
    return out_means, out_quats


@njit(cache=True)
def polar_rotations(blend):
    """Orthogonal polar factors of (N, 3, 3) blends via Newton-Schulz.

    Valid for convex blends of rotations (singular values in (0, 1]); exact
    for inputs that are already rotations. Unrolled scalar arithmetic: the
    per-vertex matrices are too small for array ops to pay off.
    """
    n = blend.shape[0]
    out = np.empty_like(blend)
    for v in range(n):
        a00 = np.float64(blend[v, 0, 0]); a01 = np.float64(blend[v, 0, 1]); a02 = np.float64(blend[v, 0, 2])
        a10 = np.float64(blend[v, 1, 0]); a11 = np.float64(blend[v, 1, 1]); a12 = np.float64(blend[v, 1, 2])
        a20 = np.float64(blend[v, 2, 0]); a21 = np.float64(blend[v, 2, 1]); a22 = np.float64(blend[v, 2, 2])
        for _ in range(24):
            # s = x x^T (symmetric), then x_next = 1.5 x - 0.5 s x
            s00 = a00 * a00 + a01 * a01 + a02 * a02
            s01 = a00 * a10 + a01 * a11 + a02 * a12
            s02 = a00 * a20 + a01 * a21 + a02 * a22
            s11 = a10 * a10 + a11 * a11 + a12 * a12
            s12 = a10 * a20 + a11 * a21 + a12 * a22
            s22 = a20 * a20 + a21 * a21 + a22 * a22
            b00 = 1.5 * a00 - 0.5 * (s00 * a00 + s01 * a10 + s02 * a20)
            b01 = 1.5 * a01 - 0.5 * (s00 * a01 + s01 * a11 + s02 * a21)
            b02 = 1.5 * a02 - 0.5 * (s00 * a02 + s01 * a12 + s02 * a22)
            b10 = 1.5 * a10 - 0.5 * (s01 * a00 + s11 * a10 + s12 * a20)
            b11 = 1.5 * a11 - 0.5 * (s01 * a01 + s11 * a11 + s12 * a21)
            b12 = 1.5 * a12 - 0.5 * (s01 * a02 + s11 * a12 + s12 * a22)
            b20 = 1.5 * a20 - 0.5 * (s02 * a00 + s12 * a10 + s22 * a20)
            b21 = 1.5 * a21 - 0.5 * (s02 * a01 + s12 * a11 + s22 * a21)
            b22 = 1.5 * a22 - 0.5 * (s02 * a02 + s12 * a12 + s22 * a22)
            diff = abs(b00 - a00) + abs(b01 - a01) + abs(b02 - a02) \
                + abs(b10 - a10) + abs(b11 - a11) + abs(b12 - a12) \
                + abs(b20 - a20) + abs(b21 - a21) + abs(b22 - a22)
            a00, a01, a02 = b00, b01, b02
            a10, a11, a12 = b10, b11, b12
            a20, a21, a22 = b20, b21, b22
            if diff < 1e-11:
                break
        out[v, 0, 0] = a00; out[v, 0, 1] = a01; out[v, 0, 2] = a02
        out[v, 1, 0] = a10; out[v, 1, 1] = a11; out[v, 1, 2] = a12
        out[v, 2, 0] = a20; out[v, 2, 1] = a21; out[v, 2, 2] = a22
    return out
