"""Linear-blend-skinned parametric body: kinematic chain, LBS, toy body generator.

Conventions: quaternions are (w, x, y, z) Hamilton products; joint world
transforms have the rest-pose inverse baked in, so the canonical pose maps
every point to itself. Vertices carry at most 4 sparse skinning weights.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DegenerateRotationError, FormatError

# ---------------------------------------------------------------------------
# quaternion / rotation helpers (vectorized over leading axes)
# ---------------------------------------------------------------------------


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float32)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """(..., 4) unit quaternions -> (..., 3, 3) rotation matrices."""
    q = np.asarray(q, dtype=np.float32)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float32)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """(..., 3, 3) rotation matrices -> (..., 4) unit quaternions (w >= 0)."""
    m = np.asarray(m, dtype=np.float64)
    t = np.einsum("...ii->...", m)
    # four Shepperd candidates; pick the numerically largest pivot per matrix
    qw = np.stack(
        [
            1.0 + t,
            1.0 + m[..., 0, 0] - m[..., 1, 1] - m[..., 2, 2],
            1.0 - m[..., 0, 0] + m[..., 1, 1] - m[..., 2, 2],
            1.0 - m[..., 0, 0] - m[..., 1, 1] + m[..., 2, 2],
        ],
        axis=-1,
    )
    pick = qw.argmax(axis=-1)
    s = 2.0 * np.sqrt(np.maximum(np.take_along_axis(qw, pick[..., None], axis=-1)[..., 0], 1e-12))
    q = np.empty(m.shape[:-2] + (4,), dtype=np.float64)
    c0 = pick == 0
    q[c0] = np.stack(
        [
            0.25 * s[c0],
            (m[c0][..., 2, 1] - m[c0][..., 1, 2]) / s[c0],
            (m[c0][..., 0, 2] - m[c0][..., 2, 0]) / s[c0],
            (m[c0][..., 1, 0] - m[c0][..., 0, 1]) / s[c0],
        ],
        axis=-1,
    )
    c1 = pick == 1
    q[c1] = np.stack(
        [
            (m[c1][..., 2, 1] - m[c1][..., 1, 2]) / s[c1],
            0.25 * s[c1],
            (m[c1][..., 0, 1] + m[c1][..., 1, 0]) / s[c1],
            (m[c1][..., 0, 2] + m[c1][..., 2, 0]) / s[c1],
        ],
        axis=-1,
    )
    c2 = pick == 2
    q[c2] = np.stack(
        [
            (m[c2][..., 0, 2] - m[c2][..., 2, 0]) / s[c2],
            (m[c2][..., 0, 1] + m[c2][..., 1, 0]) / s[c2],
            0.25 * s[c2],
            (m[c2][..., 1, 2] + m[c2][..., 2, 1]) / s[c2],
        ],
        axis=-1,
    )
    c3 = pick == 3
    q[c3] = np.stack(
        [
            (m[c3][..., 1, 0] - m[c3][..., 0, 1]) / s[c3],
            (m[c3][..., 0, 2] + m[c3][..., 2, 0]) / s[c3],
            (m[c3][..., 1, 2] + m[c3][..., 2, 1]) / s[c3],
            0.25 * s[c3],
        ],
        axis=-1,
    )
    sign = np.where(q[..., :1] < 0, -1.0, 1.0)
    q = q * sign
    return quat_normalize(q.astype(np.float32))


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a * b, broadcast over leading axes."""
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    ).astype(np.float32)


def quat_from_axis_angle(axis, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = angle_rad / 2.0
    return np.concatenate([[np.cos(half)], np.sin(half) * axis]).astype(np.float32)


def _inv3x3(m: np.ndarray) -> np.ndarray:
    """Closed-form batched 3x3 inverse."""
    a = m[..., 0, 0]; b = m[..., 0, 1]; c = m[..., 0, 2]
    d = m[..., 1, 0]; e = m[..., 1, 1]; f = m[..., 1, 2]
    g = m[..., 2, 0]; h = m[..., 2, 1]; i = m[..., 2, 2]
    A = e * i - f * h; B = c * h - b * i; C = b * f - c * e
    D = f * g - d * i; E = a * i - c * g; F = c * d - a * f
    G = d * h - e * g; H = b * g - a * h; I = a * e - b * d
    det = a * A + d * B + g * C
    adj = np.stack(
        [np.stack([A, B, C], -1), np.stack([D, E, F], -1), np.stack([G, H, I], -1)], axis=-2
    )
    return adj / det[..., None, None]


def closest_rotation(m: np.ndarray) -> np.ndarray:
    """Orthogonal polar factor of (..., 3, 3) matrices (Higham iteration).

    Requires positive determinant; exact in one step for inputs that are
    already rotations.
    """
    m = np.asarray(m, dtype=np.float64)
    det = np.linalg.det(m)
    if np.any(det <= 0):
        raise DegenerateRotationError("blended rotation has non-positive determinant")
    x = m
    for _ in range(12):
        x_next = 0.5 * (x + np.swapaxes(_inv3x3(x), -1, -2))
        if np.max(np.abs(x_next - x)) < 1e-9:
            x = x_next
            break
        x = x_next
    return x.astype(np.float32)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass
class BodyModel:
    """Rest mesh + joint tree + sparse skinning weights (canonical T-pose)."""

    rest_vertices: np.ndarray  # (N_v, 3) f32, meters
    faces: np.ndarray  # (F, 3) int32
    joints: np.ndarray  # (J, 3) f32 rest positions
    parents: np.ndarray  # (J,) int32, root = -1 at index 0
    weight_joints: np.ndarray  # (N_v, 4) int32, zero-padded
    weight_values: np.ndarray  # (N_v, 4) f32, rows sum to 1

    @property
    def n_vertices(self) -> int:
        return self.rest_vertices.shape[0]

    @property
    def n_joints(self) -> int:
        return self.joints.shape[0]

    def validate(self) -> None:
        nv, nj = self.n_vertices, self.n_joints
        sums = self.weight_values.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise ContractError(f"skin weights must sum to 1 (worst {np.abs(sums - 1).max():.2e})")
        if self.weight_values.min() < 0:
            raise ContractError("skin weights must be non-negative")
        if self.weight_joints.min() < 0 or self.weight_joints.max() >= nj:
            raise ContractError("skin weight joint indices out of range")
        if self.parents[0] != -1:
            raise ContractError("joint 0 must be the root (parent -1)")
        if np.any(self.parents[1:] < 0) or np.any(self.parents[1:] >= np.arange(1, nj)):
            raise ContractError("parents must form a tree: parent[j] in [0, j)")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= nv):
            raise ContractError("face indices out of range")

    def subtree(self, joint: int) -> np.ndarray:
        """All joints in the subtree rooted at `joint` (inclusive)."""
        keep = np.zeros(self.n_joints, dtype=bool)
        keep[joint] = True
        for j in range(joint + 1, self.n_joints):
            if keep[self.parents[j]]:
                keep[j] = True
        return np.flatnonzero(keep)


@dataclass
class Pose:
    """Per-joint unit quaternions plus a root translation."""

    joint_rotations: np.ndarray  # (J, 4) f32 (w, x, y, z)
    root_translation: np.ndarray  # (3,) f32

    def validate(self) -> None:
        norms = np.linalg.norm(self.joint_rotations, axis=1)
        if np.abs(norms - 1.0).max() > 1e-6:
            raise ContractError(f"pose quaternions must be unit norm (worst {np.abs(norms - 1).max():.2e})")


@dataclass
class JointTransforms:
    world: np.ndarray  # (J, 4, 4) f32; canonical-space -> posed-space


def canonical_pose(model: BodyModel) -> Pose:
    q = np.zeros((model.n_joints, 4), dtype=np.float32)
    q[:, 0] = 1.0
    return Pose(q, np.zeros(3, dtype=np.float32))


def pose_to_arrays(pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    return pose.joint_rotations, pose.root_translation


# ---------------------------------------------------------------------------
# forward kinematics and skinning
# ---------------------------------------------------------------------------


def joint_transforms(model: BodyModel, pose: Pose) -> JointTransforms:
    """Forward kinematics; identity pose yields identity transforms."""
    j = model.n_joints
    if pose.joint_rotations.shape[0] != j:
        raise ContractError(
            f"pose has {pose.joint_rotations.shape[0]} joints, model has {j}"
        )
    pose.validate()
    rots = quat_to_matrix(pose.joint_rotations)
    world = np.zeros((j, 4, 4), dtype=np.float32)
    for idx in range(j):
        p = model.parents[idx]
        local = np.eye(4, dtype=np.float32)
        local[:3, :3] = rots[idx]
        offset = model.joints[idx] - (model.joints[p] if p >= 0 else 0.0)
        if p < 0:
            offset = offset + pose.root_translation
        local[:3, 3] = offset
        world[idx] = local if p < 0 else world[p] @ local
    # bake in the rest-pose inverse: G_j = world_j . T(-rest_joint_j)
    out = world.copy()
    out[:, :3, 3] -= np.einsum("jab,jb->ja", world[:, :3, :3], model.joints)
    return JointTransforms(out)


def _check_weights(weight_values: np.ndarray) -> None:
    sums = weight_values.sum(axis=-1)
    if np.abs(sums - 1.0).max() > 1e-4:
        raise ContractError(f"weights must be normalized (worst sum error {np.abs(sums - 1).max():.2e})")


def blend_transforms(
    transforms: JointTransforms, weight_joints: np.ndarray, weight_values: np.ndarray
) -> np.ndarray:
    """Per-point blended affine (M, 3, 4) = sum_k w_k G_{j_k}."""
    g = transforms.world[weight_joints][:, :, :3, :]  # M,4,3,4
    return np.einsum("mk,mkab->mab", weight_values, g).astype(np.float32)


def lbs_points(
    points: np.ndarray,
    weight_joints: np.ndarray,
    weight_values: np.ndarray,
    transforms: JointTransforms,
) -> np.ndarray:
    """Skin points by their blended joint transforms."""
    _check_weights(weight_values)
    if weight_joints.min() < 0 or weight_joints.max() >= transforms.world.shape[0]:
        raise ContractError("weights reference joints outside the transform set")
    a = blend_transforms(transforms, weight_joints, weight_values)
    return (np.einsum("mab,mb->ma", a[:, :, :3], points) + a[:, :, 3]).astype(np.float32)


def lbs_rotation(
    q: np.ndarray,
    weight_joints: np.ndarray,
    weight_values: np.ndarray,
    transforms: JointTransforms,
) -> np.ndarray:
    """Blend rotation blocks, project to the closest rotation, compose with q.

    q: (M, 4) unit quaternions. Returns unit quaternions.
    """
    _check_weights(weight_values)
    blend = np.einsum(
        "mk,mkab->mab", weight_values, transforms.world[weight_joints][:, :, :3, :3]
    )
    q_blend = matrix_to_quat(closest_rotation(blend))
    return quat_normalize(quat_multiply(q_blend, np.asarray(q, dtype=np.float32)))


# ---------------------------------------------------------------------------
# procedural toy body
# ---------------------------------------------------------------------------

# joint template: (name, parent index, T-pose position). Order fixes indices;
# limbs attach as in a T-pose (arms horizontal, y up, meters).
_JOINT_TEMPLATE = [
    ("pelvis", -1, (0.00, 0.95, 0.00)),
    ("chest", 0, (0.00, 1.30, 0.00)),
    ("head", 1, (0.00, 1.52, 0.00)),
    ("l_arm", 1, (-0.18, 1.42, 0.00)),
    ("r_arm", 1, (0.18, 1.42, 0.00)),
    ("l_leg", 0, (-0.10, 0.92, 0.00)),
    ("r_leg", 0, (0.10, 0.92, 0.00)),
    ("l_forearm", 3, (-0.48, 1.42, 0.00)),
    ("r_forearm", 4, (0.48, 1.42, 0.00)),
    ("l_shin", 5, (-0.12, 0.50, 0.00)),
    ("r_shin", 6, (0.12, 0.50, 0.00)),
    ("neck", 1, (0.00, 1.44, 0.00)),
    ("l_hand", 7, (-0.72, 1.42, 0.00)),
    ("r_hand", 8, (0.72, 1.42, 0.00)),
    ("l_foot", 9, (-0.13, 0.08, 0.00)),
    ("r_foot", 10, (0.13, 0.08, 0.00)),
]

# capsule segments: (driving joint, tip offset or child joint, radius).
# Each joint drives the segment from itself toward its structural end.
_SEGMENT_SPECS = {
    "pelvis": ("chest", 0.15),
    "chest": ("head", 0.13),
    "head": ((0.0, 0.20, 0.0), 0.10),
    "l_arm": ("l_forearm", 0.055),
    "r_arm": ("r_forearm", 0.055),
    "l_forearm": ("l_hand", 0.045),
    "r_forearm": ("r_hand", 0.045),
    "l_hand": ((-0.08, 0.0, 0.0), 0.045),
    "r_hand": ((0.08, 0.0, 0.0), 0.045),
    "l_leg": ("l_shin", 0.075),
    "r_leg": ("r_shin", 0.075),
    "l_shin": ("l_foot", 0.06),
    "r_shin": ("r_foot", 0.06),
    "l_foot": ((-0.01, -0.06, 0.10), 0.05),
    "r_foot": ((0.01, -0.06, 0.10), 0.05),
    "neck": ("head", 0.06),
}
# fallback tips when the named child joint is not instantiated (small n_joints)
_FALLBACK_TIP = {
    "l_arm": (-0.54, 0.0, 0.0),
    "r_arm": (0.54, 0.0, 0.0),
    "l_forearm": (-0.24, 0.0, 0.0),
    "r_forearm": (0.24, 0.0, 0.0),
    "l_leg": (-0.02, -0.84, 0.0),
    "r_leg": (0.02, -0.84, 0.0),
    "l_shin": (-0.01, -0.42, 0.0),
    "r_shin": (0.01, -0.42, 0.0),
    "pelvis": (0.0, 0.35, 0.0),
    "chest": (0.0, 0.22, 0.0),
    "neck": (0.0, 0.08, 0.0),
}


def _capsule_points(p0, p1, radius, count, rng):
    """Quasi-uniform points on a capsule surface (cylinder + hemispherical caps)."""
    axis = p1 - p0
    length = float(np.linalg.norm(axis))
    axis_n = axis / max(length, 1e-9)
    # orthonormal frame around the axis
    ref = np.array([1.0, 0.0, 0.0]) if abs(axis_n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(axis_n, ref)
    u /= np.linalg.norm(u)
    v = np.cross(axis_n, u)
    area_cyl = 2 * np.pi * radius * length
    area_cap = 2 * np.pi * radius * radius
    total = area_cyl + 2 * area_cap
    golden = np.pi * (3.0 - np.sqrt(5.0))
    i = np.arange(count)
    t = (i + 0.5) / count * total  # area parameter along the capsule
    phi = i * golden + rng.uniform(0, 2 * np.pi)
    rj = radius * (1.0 + 0.004 * rng.standard_normal(count))  # strict convexity jitter
    pts = np.empty((count, 3))
    for k in range(count):
        if t[k] < area_cap:  # bottom hemisphere: axial coord sweeps -1 -> 0 (area-uniform)
            z = t[k] / area_cap - 1.0
            sinb = np.sqrt(max(0.0, 1 - z * z))
            center = p0
            d = sinb * (np.cos(phi[k]) * u + np.sin(phi[k]) * v) + z * axis_n
        elif t[k] < area_cap + area_cyl:  # cylinder side
            frac = (t[k] - area_cap) / max(area_cyl, 1e-12)
            center = p0 + frac * length * axis_n
            d = np.cos(phi[k]) * u + np.sin(phi[k]) * v
        else:  # top hemisphere: axial coord sweeps 0 -> 1
            z = (t[k] - area_cap - area_cyl) / area_cap
            sinb = np.sqrt(max(0.0, 1 - z * z))
            center = p1
            d = sinb * (np.cos(phi[k]) * u + np.sin(phi[k]) * v) + z * axis_n
        pts[k] = center + rj[k] * d
    return pts


def _segment_distance(points: np.ndarray, p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
    d = p1 - p0
    denom = float(d @ d)
    t = np.clip((points - p0) @ d / max(denom, 1e-12), 0.0, 1.0)
    closest = p0 + t[:, None] * d
    return np.linalg.norm(points - closest, axis=1)


def make_toy_body(seed: int, n_vertices: int, n_joints: int) -> BodyModel:
    """Capsule-limb humanoid with smooth skinning weights; deterministic per seed."""
    if n_joints < 2:
        raise ConfigError(f"need at least 2 joints, got {n_joints}")
    if n_joints > len(_JOINT_TEMPLATE):
        raise ConfigError(f"toy body supports at most {len(_JOINT_TEMPLATE)} joints")
    if n_vertices < 8 * n_joints:
        raise ConfigError(f"need n_vertices >= 8*n_joints ({8 * n_joints}), got {n_vertices}")
    from scipy.spatial import ConvexHull  # mature hull code; toy mesh plumbing only

    rng = np.random.default_rng(seed)
    names = [t[0] for t in _JOINT_TEMPLATE[:n_joints]]
    parents = np.array([t[1] for t in _JOINT_TEMPLATE[:n_joints]], dtype=np.int32)
    joints = np.array([t[2] for t in _JOINT_TEMPLATE[:n_joints]], dtype=np.float64)
    # per-seed body proportions
    joints[:, 1] *= 1.0 + 0.04 * rng.standard_normal()
    joints[:, 0] *= 1.0 + 0.04 * rng.standard_normal()
    name_to_idx = {n: i for i, n in enumerate(names)}

    segments = []  # (joint index, p0, p1, radius)
    for j, name in enumerate(names):
        end, radius = _SEGMENT_SPECS[name]
        if isinstance(end, str) and end in name_to_idx:
            p1 = joints[name_to_idx[end]]
        else:
            tip = _FALLBACK_TIP.get(name, end if not isinstance(end, str) else (0.0, 0.1, 0.0))
            p1 = joints[j] + np.asarray(tip)
        radius = radius * (1.0 + 0.08 * rng.standard_normal())
        segments.append((j, joints[j].copy(), np.asarray(p1, dtype=np.float64), abs(radius)))

    # allocate vertices proportionally to capsule area, exact total
    areas = np.array(
        [2 * np.pi * r * (np.linalg.norm(p1 - p0) + 2 * r) for _, p0, p1, r in segments]
    )
    raw = areas / areas.sum() * n_vertices
    counts = np.maximum(np.floor(raw).astype(int), 6)
    while counts.sum() > n_vertices:
        counts[counts.argmax()] -= 1
    frac = raw - np.floor(raw)
    order = np.argsort(-frac)
    k = 0
    while counts.sum() < n_vertices:
        counts[order[k % len(order)]] += 1
        k += 1

    verts_parts, faces_parts = [], []
    offset = 0
    for (j, p0, p1, r), cnt in zip(segments, counts):
        pts = _capsule_points(p0, p1, r, int(cnt), rng)
        hull = ConvexHull(pts)
        verts_parts.append(pts)
        faces_parts.append(hull.simplices.astype(np.int32) + offset)
        offset += int(cnt)
    vertices = np.concatenate(verts_parts, axis=0)
    faces = np.concatenate(faces_parts, axis=0)

    # smooth distance-based weights to the nearest segments, top-4, normalized
    dists = np.stack([_segment_distance(vertices, p0, p1) - r for _, p0, p1, r in segments], axis=1)
    joint_ids = np.array([s[0] for s in segments], dtype=np.int32)
    sigma = 0.06
    raw_w = np.exp(-np.square(np.maximum(dists, 0.0) / sigma))
    # several segments can share one driving joint; merge before top-k
    per_joint = np.zeros((n_vertices, n_joints))
    for col, j in enumerate(joint_ids):
        per_joint[:, j] += raw_w[:, col]
    top = np.argsort(-per_joint, axis=1)[:, :4]
    vals = np.take_along_axis(per_joint, top, axis=1)
    vals = vals / np.maximum(vals.sum(axis=1, keepdims=True), 1e-12)
    vals64 = vals / vals.sum(axis=1, keepdims=True)

    model = BodyModel(
        rest_vertices=vertices.astype(np.float32),
        faces=faces,
        joints=joints.astype(np.float32),
        parents=parents,
        weight_joints=top.astype(np.int32),
        weight_values=vals64.astype(np.float32),
    )
    # float32 cast can nudge sums off 1; renormalize once in float32
    model.weight_values /= model.weight_values.sum(axis=1, keepdims=True)
    model.validate()
    return model


# ---------------------------------------------------------------------------
# HGSB file format
# ---------------------------------------------------------------------------

_BODY_MAGIC = b"HGSB"
_BODY_VERSION = 1
_ROOT_SENTINEL = 0xFFFFFFFF


def write_body(f, model: BodyModel) -> None:
    """Append the HGSB block for `model` to an open binary stream."""
    f.write(_BODY_MAGIC)
    nv, nf, nj = model.n_vertices, model.faces.shape[0], model.n_joints
    f.write(struct.pack("<IIII", _BODY_VERSION, nv, nf, nj))
    f.write(np.ascontiguousarray(model.rest_vertices, "<f4").tobytes())
    f.write(np.ascontiguousarray(model.faces, "<u4").tobytes())
    f.write(np.ascontiguousarray(model.joints, "<f4").tobytes())
    parents = model.parents.astype(np.int64)
    parents_u = np.where(parents < 0, _ROOT_SENTINEL, parents).astype("<u4")
    f.write(parents_u.tobytes())
    inter = np.empty((nv, 4, 2), dtype="<u4")
    inter[:, :, 0] = model.weight_joints.astype("<u4")
    inter[:, :, 1] = model.weight_values.astype("<f4").view("<u4")
    f.write(inter.tobytes())


def read_body(f) -> BodyModel:
    """Read one HGSB block from an open binary stream; validates invariants."""
    start = f.tell()

    def need(n, what):
        buf = f.read(n)
        if len(buf) != n:
            raise FormatError(f"body block truncated reading {what} at byte {f.tell() - start - len(buf)}")
        return buf

    if need(4, "magic") != _BODY_MAGIC:
        raise FormatError(f"bad body magic at byte {start} (expected HGSB)")
    version, nv, nf, nj = struct.unpack("<IIII", need(16, "header"))
    if version != _BODY_VERSION:
        raise FormatError(f"unsupported body version {version}")
    rest = np.frombuffer(need(12 * nv, "vertices"), "<f4").reshape(nv, 3).copy()
    faces = np.frombuffer(need(12 * nf, "faces"), "<u4").reshape(nf, 3).astype(np.int32)
    joints = np.frombuffer(need(12 * nj, "joints"), "<f4").reshape(nj, 3).copy()
    parents_u = np.frombuffer(need(4 * nj, "parents"), "<u4")
    parents = np.where(parents_u == _ROOT_SENTINEL, -1, parents_u.astype(np.int64)).astype(np.int32)
    inter = np.frombuffer(need(32 * nv, "weights"), "<u4").reshape(nv, 4, 2)
    wj = inter[:, :, 0].astype(np.int32)
    wv = inter[:, :, 1].copy().view("<f4").astype(np.float32)
    model = BodyModel(rest, faces, joints, parents, wj, wv)
    model.validate()
    return model


def save_body(path: str, model: BodyModel) -> None:
    with open(path, "wb") as f:
        write_body(f, model)


def load_body(path: str) -> BodyModel:
    with open(path, "rb") as f:
        return read_body(f)
