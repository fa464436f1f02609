"""Generic linear-blend-skinned body: skeleton, rest mesh, pose/shape parameters.

The body stands about one unit tall, y up, facing +z, arms in T-pose.
Shape parameters are a 6-vector: global xyz scale about the root followed by
arm / leg / torso length factors applied to bone offsets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .fields import SIGNED_DISTANCE, ScalarField
from .geometry import TriMesh

JOINT_NAMES = [
    "root", "spine1", "spine2", "neck", "head",
    "shoulder_l", "elbow_l", "wrist_l",
    "shoulder_r", "elbow_r", "wrist_r",
    "hip_l", "knee_l", "ankle_l",
    "hip_r", "knee_r", "ankle_r",
]
PARENTS = [-1, 0, 1, 2, 3, 2, 5, 6, 2, 8, 9, 0, 11, 12, 0, 14, 15]

N_SHAPE = 6  # sx, sy, sz, arm, leg, torso
_ARM_JOINTS = {6, 7, 9, 10}
_LEG_JOINTS = {12, 13, 15, 16}
_TORSO_JOINTS = {1, 2, 3, 4}

REST_JOINTS = np.array([
    [0.000, 0.570, 0.0],
    [0.000, 0.670, 0.0],
    [0.000, 0.780, 0.0],
    [0.000, 0.855, 0.0],
    [0.000, 0.930, 0.0],
    [0.105, 0.815, 0.0],
    [0.270, 0.810, 0.0],
    [0.430, 0.810, 0.0],
    [-0.105, 0.815, 0.0],
    [-0.270, 0.810, 0.0],
    [-0.430, 0.810, 0.0],
    [0.068, 0.530, 0.0],
    [0.072, 0.300, 0.0],
    [0.076, 0.070, 0.0],
    [-0.068, 0.530, 0.0],
    [-0.072, 0.300, 0.0],
    [-0.076, 0.070, 0.0],
])


def identity_pose() -> np.ndarray:
    return np.zeros((len(JOINT_NAMES), 3))


def identity_shape() -> np.ndarray:
    return np.ones(N_SHAPE)


def limb_factors(shape: np.ndarray) -> np.ndarray:
    """Per-joint bone-offset length factor from the shape vector."""
    f = np.ones(len(JOINT_NAMES))
    for j in _ARM_JOINTS:
        f[j] = shape[3]
    for j in _LEG_JOINTS:
        f[j] = shape[4]
    for j in _TORSO_JOINTS:
        f[j] = shape[5]
    return f


@dataclass
class WeakPerspectiveCamera:
    """pi(X) = s * (X_x, X_y) + t in normalized image coordinates ([-1, 1] span)."""

    s: float
    t: np.ndarray

    def __post_init__(self):
        if self.s <= 0:
            raise ValueError("camera scale must be positive")
        self.t = np.asarray(self.t, dtype=np.float64).reshape(2)

    def project(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return self.s * pts[:, :2] + self.t


@dataclass
class SkinnedBody:
    """Skeleton + rest mesh + skinning weights; pose/shape map is pure."""

    joints: np.ndarray           # (J, 3) rest joint positions
    parents: list[int]
    joint_names: list[str]
    rest_mesh: TriMesh
    weights: np.ndarray          # (V, J), rows sum to 1
    joint_regressor: np.ndarray = field(default=None)  # (J, V), rest-built

    def __post_init__(self):
        rows = self.weights.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-9) or np.any(self.weights < -1e-12):
            raise ValueError("skinning weight rows must be nonnegative and sum to 1")
        if self.joint_regressor is None:
            self.joint_regressor = _build_joint_regressor(self.joints, self.rest_mesh.vertices)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def posed_joints(self, pose, shape=None) -> tuple[np.ndarray, np.ndarray]:
        """World rotations (J, 3, 3) and positions (J, 3) of every joint."""
        pose = np.asarray(pose, dtype=np.float64).reshape(self.n_joints, 3)
        shape = identity_shape() if shape is None else np.asarray(shape, dtype=np.float64)
        local = Rotation.from_rotvec(pose).as_matrix()
        factors = limb_factors(shape)
        scale = shape[:3]
        root = self.joints[0]
        R = np.empty((self.n_joints, 3, 3))
        p = np.empty((self.n_joints, 3))
        for j, parent in enumerate(self.parents):
            if parent < 0:
                R[j] = local[j]
                p[j] = root
            else:
                off = (self.joints[j] - self.joints[parent]) * scale * factors[j]
                R[j] = R[parent] @ local[j]
                p[j] = p[parent] + R[parent] @ off
        return R, p

    def skin_vertices(self, verts: np.ndarray, weights: np.ndarray, pose, shape=None) -> np.ndarray:
        """LBS in joint-local form; exactly the identity at rest pose/shape."""
        shape_v = identity_shape() if shape is None else np.asarray(shape, dtype=np.float64)
        R, p = self.posed_joints(pose, shape_v)
        scale = shape_v[:3]
        local = verts[None, :, :] - self.joints[:, None, :]  # (J, V, 3)
        delta = np.einsum("jab,jvb->jva", R, local * scale) - local + (p - self.joints)[:, None, :]
        return verts + np.einsum("vj,jva->va", weights, delta)

    def regress_joints(self, verts: np.ndarray) -> np.ndarray:
        return self.joint_regressor @ verts


def skin_pose(body: SkinnedBody, pose, shape=None) -> tuple[TriMesh, np.ndarray]:
    """Posed body mesh and joint positions for the given parameters."""
    verts = body.skin_vertices(body.rest_mesh.vertices, body.weights, pose, shape)
    _, joints = body.posed_joints(pose, shape)
    return TriMesh(verts, body.rest_mesh.faces.copy()), joints


def _build_joint_regressor(joints: np.ndarray, verts: np.ndarray, k: int = 16) -> np.ndarray:
    reg = np.zeros((len(joints), len(verts)))
    for j, pos in enumerate(joints):
        d = np.linalg.norm(verts - pos, axis=1)
        near = np.argsort(d, kind="stable")[:k]
        w = 1.0 / (d[near] + 1e-6)
        reg[j, near] = w / w.sum()
    return reg


# ---------------------------------------------------------------------------
# default capsule body

BONES = [(parent, j) for j, parent in enumerate(PARENTS) if parent >= 0]
# pseudo-bones extend extremities so nearby vertices bind to the moving joint
_PSEUDO_BONES = [
    (7, np.array([0.46, 0.81, 0.0])),    # left hand
    (10, np.array([-0.46, 0.81, 0.0])),  # right hand
    (13, np.array([0.076, 0.03, 0.0])),  # left foot
    (16, np.array([-0.076, 0.03, 0.0])),  # right foot
    (4, np.array([0.0, 0.97, 0.0])),     # head top
]


def _bone_segments(joints: np.ndarray):
    """(segment starts, ends, carrier joint ids); the carrier is the rotating joint."""
    a, b, carrier = [], [], []
    for parent, j in BONES:
        a.append(joints[parent])
        b.append(joints[j])
        carrier.append(parent)
    for j, tip in _PSEUDO_BONES:
        a.append(joints[j])
        b.append(tip)
        carrier.append(j)
    return np.asarray(a), np.asarray(b), np.asarray(carrier, dtype=np.int64)


def _point_segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    len_sq = np.einsum("ij,ij->i", d, d)
    t = np.einsum("psj,sj->ps", points[:, None, :] - a[None, :, :], d) / np.maximum(len_sq, 1e-300)
    t = np.clip(t, 0.0, 1.0)
    cp = a[None, :, :] + t[:, :, None] * d[None, :, :]
    return np.linalg.norm(points[:, None, :] - cp, axis=2)


def bone_weights(verts: np.ndarray, joints: np.ndarray, n_joints: int,
                 top_k: int = 3, softness: float = 0.02) -> np.ndarray:
    """Skinning weights from inverse distance to the nearest bones."""
    a, b, carrier = _bone_segments(joints)
    d = _point_segment_distances(verts, a, b)
    raw = 1.0 / (d + softness) ** 4
    if top_k < raw.shape[1]:
        thresh = np.sort(raw, axis=1)[:, -top_k][:, None]
        raw = np.where(raw >= thresh, raw, 0.0)
    w = np.zeros((len(verts), n_joints))
    for s in range(raw.shape[1]):
        w[:, carrier[s]] += raw[:, s]
    return w / w.sum(axis=1, keepdims=True)


_CAPSULES = [
    # (ax, ay, az), (bx, by, bz), radius
    ((0.0, 0.530, 0.0), (0.0, 0.620, 0.0), 0.092),   # pelvis
    ((0.0, 0.600, 0.0), (0.0, 0.700, 0.0), 0.090),   # lower torso
    ((0.0, 0.690, 0.0), (0.0, 0.800, 0.0), 0.084),   # chest
    ((0.0, 0.800, 0.0), (0.0, 0.875, 0.0), 0.034),   # neck
    ((0.0, 0.925, 0.0), (0.0, 0.927, 0.0), 0.062),   # head
    ((-0.095, 0.815, 0.0), (0.095, 0.815, 0.0), 0.046),  # shoulder bar
    ((0.105, 0.815, 0.0), (0.270, 0.810, 0.0), 0.032),   # upper arms
    ((-0.105, 0.815, 0.0), (-0.270, 0.810, 0.0), 0.032),
    ((0.270, 0.810, 0.0), (0.445, 0.810, 0.0), 0.027),   # forearms + hand stubs
    ((-0.270, 0.810, 0.0), (-0.445, 0.810, 0.0), 0.027),
    ((0.068, 0.520, 0.0), (0.072, 0.300, 0.0), 0.048),   # thighs
    ((-0.068, 0.520, 0.0), (-0.072, 0.300, 0.0), 0.048),
    ((0.072, 0.300, 0.0), (0.076, 0.050, 0.0), 0.036),   # shins
    ((-0.072, 0.300, 0.0), (-0.076, 0.050, 0.0), 0.036),
]


class _CapsuleUnionSdf(ScalarField):
    convention = SIGNED_DISTANCE

    def __init__(self, capsules):
        self.a = np.asarray([c[0] for c in capsules], dtype=np.float64)
        self.b = np.asarray([c[1] for c in capsules], dtype=np.float64)
        self.r = np.asarray([c[2] for c in capsules], dtype=np.float64)

    def eval(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        d = _point_segment_distances(pts, self.a, self.b) - self.r[None, :]
        return d.min(axis=1)


def capsule_body_sdf() -> ScalarField:
    """Analytic signed distance of the default body's capsule union."""
    return _CapsuleUnionSdf(_CAPSULES)


def default_body(spacing: float = 0.012) -> SkinnedBody:
    """Capsule-union body polygonized with marching cubes, bound to 17 joints."""
    from .marching import marching_cubes

    sdf = _CapsuleUnionSdf(_CAPSULES)
    lo = np.minimum(sdf.a, sdf.b).min(axis=0) - sdf.r.max() - 4 * spacing
    hi = np.maximum(sdf.a, sdf.b).max(axis=0) + sdf.r.max() + 4 * spacing
    res = np.ceil((hi - lo) / spacing).astype(np.int64) + 1
    mesh = marching_cubes(sdf, lo, hi, res).check_indices()
    weights = bone_weights(mesh.vertices, REST_JOINTS, len(JOINT_NAMES))
    return SkinnedBody(
        joints=REST_JOINTS.copy(),
        parents=list(PARENTS),
        joint_names=list(JOINT_NAMES),
        rest_mesh=mesh,
        weights=weights,
    )
