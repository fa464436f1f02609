"""Body parameter initialization against 2D joints and the coarse shape mesh.

Gradients come from torch autograd (CPU, single-threaded, float64, so runs are
reproducible); the optimizer itself is plain gradient descent with step
halving, as in the other stages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body import SkinnedBody, WeakPerspectiveCamera, limb_factors
from .config import FitConfig


class InitError(RuntimeError):
    pass


@dataclass
class InitResult:
    pose: np.ndarray
    shape: np.ndarray
    camera: WeakPerspectiveCamera
    loss_trace: list
    iterations: int
    stop_reason: str


def _subsample(points: np.ndarray, count: int) -> np.ndarray:
    if len(points) <= count:
        return points
    idx = np.linspace(0, len(points) - 1, count).astype(np.int64)
    return points[idx]


def fit_body_init(body: SkinnedBody, joints_2d: np.ndarray,
                  camera0: WeakPerspectiveCamera, v_lres: np.ndarray | None,
                  cfg: FitConfig, pose0=None, shape0=None) -> InitResult:
    """Minimize joint reprojection MSE + pose regularizer + coarse-mesh chamfer
    over pose, shape, and the weak-perspective camera."""
    import torch

    torch.set_num_threads(1)

    joints_2d = np.asarray(joints_2d, dtype=np.float64)
    if joints_2d.shape != (body.n_joints, 3):
        raise InitError(f"expected ({body.n_joints}, 3) joints_2d (x, y, visibility)")
    visible = joints_2d[:, 2] > 0.5
    if visible.sum() < 4:
        raise InitError(f"need at least 4 visible joints, got {int(visible.sum())}")

    dt = torch.float64
    J = body.n_joints
    parents = body.parents
    rest_joints = torch.tensor(body.joints, dtype=dt)
    root = rest_joints[0]

    verts_np = body.rest_mesh.vertices
    sub_idx = np.linspace(0, len(verts_np) - 1,
                          min(len(verts_np), max(cfg.init_chamfer_samples // 2, 200))).astype(np.int64)
    rest_verts = torch.tensor(verts_np[sub_idx], dtype=dt)
    weights = torch.tensor(body.weights[sub_idx], dtype=dt)

    use_cd = cfg.shape_weight > 0 and v_lres is not None and len(v_lres) > 0
    if use_cd:
        lres = torch.tensor(_subsample(np.asarray(v_lres, dtype=np.float64),
                                       cfg.init_chamfer_samples), dtype=dt)

    j2d = torch.tensor(joints_2d[visible, :2], dtype=dt)
    vis_idx = torch.tensor(np.nonzero(visible)[0], dtype=torch.long)

    pose = torch.tensor(np.zeros((J, 3)) if pose0 is None else np.asarray(pose0, dtype=np.float64),
                        dtype=dt, requires_grad=True)
    # global scale is optimized isotropically: depth is unobservable under a
    # weak-perspective camera and the coarse-hull term would inflate it freely
    shape0_v = np.ones(6) if shape0 is None else np.asarray(shape0, dtype=np.float64)
    shape = torch.tensor(np.concatenate([[shape0_v[:3].mean()], shape0_v[3:]]),
                         dtype=dt, requires_grad=True)
    cam = torch.tensor([camera0.s, camera0.t[0], camera0.t[1]], dtype=dt, requires_grad=True)

    arm = torch.tensor([1.0 if j in (6, 7, 9, 10) else 0.0 for j in range(J)], dtype=dt)
    leg = torch.tensor([1.0 if j in (12, 13, 15, 16) else 0.0 for j in range(J)], dtype=dt)
    torso = torch.tensor([1.0 if j in (1, 2, 3, 4) else 0.0 for j in range(J)], dtype=dt)

    def rodrigues(rv):
        theta = torch.linalg.norm(rv, dim=1, keepdim=True).clamp_min(1e-12)
        axis = rv / theta
        k = torch.zeros(rv.shape[0], 3, 3, dtype=dt)
        k[:, 0, 1], k[:, 0, 2] = -axis[:, 2], axis[:, 1]
        k[:, 1, 0], k[:, 1, 2] = axis[:, 2], -axis[:, 0]
        k[:, 2, 0], k[:, 2, 1] = -axis[:, 1], axis[:, 0]
        th = theta[:, :, None]
        eye = torch.eye(3, dtype=dt).expand(rv.shape[0], 3, 3)
        small = (th < 1e-8).to(dt)
        sin_t = torch.sin(th)
        cos_t = torch.cos(th)
        full = eye + sin_t * k + (1 - cos_t) * (k @ k)
        taylor = eye + th * k + 0.5 * th * th * (k @ k)
        return small * taylor + (1 - small) * full

    def forward(pose_t, shape_t, cam_t):
        local = rodrigues(pose_t)
        factors = 1 + (shape_t[1] - 1) * arm + (shape_t[2] - 1) * leg + (shape_t[3] - 1) * torso
        scale = shape_t[0].expand(3)
        rots = [None] * J
        pos = [None] * J
        for j in range(J):
            parent = parents[j]
            if parent < 0:
                rots[j] = local[j]
                pos[j] = root
            else:
                off = (rest_joints[j] - rest_joints[parent]) * scale * factors[j]
                rots[j] = rots[parent] @ local[j]
                pos[j] = pos[parent] + rots[parent] @ off
        R = torch.stack(rots)
        p = torch.stack(pos)
        local_off = rest_verts[None, :, :] - rest_joints[:, None, :]
        delta = torch.einsum("jab,jvb->jva", R, local_off * scale) - local_off \
            + (p - rest_joints)[:, None, :]
        v = rest_verts + torch.einsum("vj,jva->va", weights, delta)
        proj = cam_t[0] * p[vis_idx, :2] + cam_t[1:]
        loss = torch.mean((proj - j2d) ** 2)
        loss = loss + cfg.pose_reg_weight * torch.sum(pose_t ** 2)
        if use_cd:
            d2 = torch.cdist(lres, v) ** 2
            cd = 0.5 * (d2.min(dim=1).values.mean() + d2.min(dim=0).values.mean())
            loss = loss + cfg.shape_weight * cd
        return loss

    def value(pose_t, shape_t, cam_t):
        with torch.no_grad():
            return float(forward(pose_t, shape_t, cam_t))

    loss = forward(pose, shape, cam)
    trace = [float(loss.detach())]
    if not np.isfinite(trace[0]):
        raise InitError("initial body loss is not finite")
    step = cfg.init_step
    reason = "cap"
    last_valid = (pose.detach().clone(), shape.detach().clone(), cam.detach().clone())
    for _ in range(cfg.init_iterations):
        for t in (pose, shape, cam):
            if t.grad is not None:
                t.grad = None
        loss.backward()
        grads = (pose.grad.clone(), shape.grad.clone(), cam.grad.clone())
        if any(not torch.all(torch.isfinite(g)) for g in grads):
            raise InitError("body initialization diverged (non-finite gradient); "
                            "last valid parameters retained")
        accepted = False
        s = step
        cur = float(loss.detach())
        for halving in range(21):
            with torch.no_grad():
                p_try = pose - s * grads[0]
                sh_try = shape - s * grads[1]
                c_try = cam - s * grads[2]
                c_try[0] = torch.clamp(c_try[0], min=1e-3)
            trial = value(p_try, sh_try, c_try)
            if np.isfinite(trial) and trial <= cur:
                accepted = True
                break
            s *= 0.5
        if not accepted:
            reason = "stationary"
            break
        step = s * (1.5 if halving == 0 else 1.0)
        with torch.no_grad():
            pose.copy_(p_try)
            shape.copy_(sh_try)
            cam.copy_(c_try)
        last_valid = (pose.detach().clone(), shape.detach().clone(), cam.detach().clone())
        loss = forward(pose, shape, cam)
        trace.append(float(loss.detach()))
        w = cfg.init_plateau_window
        if len(trace) > w:
            drop = trace[-w - 1] - trace[-1]
            if drop < cfg.plateau_tolerance * max(abs(trace[-w - 1]), 1e-12):
                reason = "plateau"
                break
    pose_f, shape_f, cam_f = last_valid
    camera = WeakPerspectiveCamera(float(cam_f[0]), cam_f[1:].numpy())
    shape_out = np.concatenate([np.repeat(float(shape_f[0]), 3), shape_f[1:].numpy()])
    return InitResult(pose_f.numpy(), shape_out, camera,
                      trace, len(trace) - 1, reason)
