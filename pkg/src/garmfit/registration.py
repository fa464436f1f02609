"""Three-stage explicit fitting: body init, boundary fit + propagation, shape fit."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .config import FitConfig
from .fields import (BoundaryCylinderField, ScalarField, SemanticFieldSet,
                     field_gradient)
from .geometry import TriMesh, graph_laplacian, polyline_distances, vertex_normals
from .solve import solve_constrained_bilaplacian
from .templates import (BOUNDARY_NAMES, BoundaryType, GarmentTemplate,
                        deform_template_with_body)


class FitError(RuntimeError):
    pass


class BoundaryPairingError(FitError):
    """A template loop has no boundary field of its type (or vice versa)."""


def chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean squared nearest-neighbor distance between point sets, halved."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance of an empty point set")
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return 0.5 * (float(np.mean(d_ab**2)) + float(np.mean(d_ba**2)))


# ---------------------------------------------------------------------------
# stage 2: boundary fitting


def _loop_loss_grad(points: np.ndarray, fld: BoundaryCylinderField,
                    edge_avg_weight: float, edge_var_weight: float):
    """Mean field value + edge-length mean/variance terms on one closed loop."""
    n = len(points)
    d, cp = polyline_distances(points, fld.curve)
    value = float(np.mean(d - fld.radius))
    diff = points - cp
    with np.errstate(invalid="ignore", divide="ignore"):
        dir_d = np.where(d[:, None] > 1e-12, diff / np.maximum(d, 1e-300)[:, None], 0.0)
    grad = dir_d / n

    e = np.roll(points, -1, axis=0) - points        # edge j: x_{j+1} - x_j
    ell = np.linalg.norm(e, axis=1)
    u = e / np.maximum(ell, 1e-300)[:, None]
    avg = float(ell.mean())
    var = float(np.mean(ell**2) - avg**2)
    # d avg / d x_i = (u_{i-1} - u_i) / n
    d_avg = (np.roll(u, 1, axis=0) - u) / n
    ell_u = ell[:, None] * u
    d_var = 2.0 * (np.roll(ell_u, 1, axis=0) - ell_u) / n - 2.0 * avg * d_avg

    value += edge_avg_weight * avg + edge_var_weight * var
    grad = grad + edge_avg_weight * d_avg + edge_var_weight * d_var
    return value, grad


@dataclass
class StageReport:
    name: str
    enabled: bool = True
    iterations: int = 0
    loss_trace: list = field(default_factory=list)
    seconds: float = 0.0
    stop_reason: str = "plateau"  # plateau | stationary | cap | failed | skipped
    extra: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.stop_reason == "failed"

    def to_dict(self):
        return {
            "name": self.name, "enabled": self.enabled, "iterations": self.iterations,
            "seconds": self.seconds, "stop_reason": self.stop_reason,
            "loss_trace": [float(v) for v in self.loss_trace], "extra": self.extra,
        }


def _descend(x0: np.ndarray, loss_grad, step0: float, max_iter: int,
             plateau_tol: float, plateau_window: int, max_halvings: int = 20):
    """Gradient descent with step halving on increase and growth on easy wins."""
    x = x0.copy()
    loss, grad = loss_grad(x)
    if not np.isfinite(loss):
        raise FitError("loss is not finite at the initial iterate")
    trace = [loss]
    step = step0
    reason = "cap"
    for _ in range(max_iter):
        accepted = False
        s = step
        for halving in range(max_halvings + 1):
            x_try = x - s * grad
            loss_try, grad_try = loss_grad(x_try)
            if np.isfinite(loss_try) and loss_try <= loss:
                accepted = True
                break
            s *= 0.5
        if not accepted:
            reason = "stationary"  # no descent direction at this resolution
            break
        step = s * (1.5 if halving == 0 else 1.0)
        x, loss, grad = x_try, loss_try, grad_try
        trace.append(loss)
        w = plateau_window
        if len(trace) > w:
            drop = trace[-w - 1] - trace[-1]
            if drop < plateau_tol * max(abs(trace[-w - 1]), 1e-12):
                reason = "plateau"
                break
    return x, trace, reason


def pair_loops_with_fields(loops: list[tuple[BoundaryType, np.ndarray]],
                           fields: list[tuple[BoundaryType, BoundaryCylinderField]]):
    """Match the k-th loop of each type with the k-th field of that type."""
    by_type: dict[BoundaryType, list[BoundaryCylinderField]] = {}
    for t, fld in fields:
        by_type.setdefault(BoundaryType(t), []).append(fld)
    used: dict[BoundaryType, int] = {}
    paired = []
    for t, loop in loops:
        k = used.get(t, 0)
        pool = by_type.get(t, [])
        if k >= len(pool):
            raise BoundaryPairingError(
                f"no boundary field for template loop of type {BOUNDARY_NAMES[t]!r}")
        paired.append((t, loop, pool[k]))
        used[t] = k + 1
    return paired


def fit_boundaries(mesh: TriMesh, loops: list[tuple[BoundaryType, np.ndarray]],
                   fields: list[tuple[BoundaryType, BoundaryCylinderField]],
                   cfg: FitConfig) -> tuple[dict[int, np.ndarray], StageReport]:
    """Optimize each boundary loop's vertex positions against its cylinder field.

    Returns constraints {vertex id -> optimized position} over all loops.
    """
    report = StageReport("boundary")
    t0 = time.perf_counter()
    constraints: dict[int, np.ndarray] = {}
    paired = pair_loops_with_fields(loops, fields)
    final_losses = []
    for t, loop, fld in paired:
        def loss_grad(x):
            return _loop_loss_grad(x, fld, cfg.edge_avg_weight, cfg.edge_var_weight)

        x0 = mesh.vertices[loop]
        x, trace, reason = _descend(
            x0, loss_grad, cfg.boundary_step, cfg.boundary_iterations,
            cfg.plateau_tolerance, cfg.boundary_plateau_window)
        report.iterations += len(trace) - 1
        if reason == "cap":
            report.stop_reason = "cap"
        final_losses.append((trace[0], trace[-1]))
        for vid, pos in zip(loop, x):
            constraints[int(vid)] = pos
    report.loss_trace = [sum(t0_ for t0_, _ in final_losses),
                         sum(t1_ for _, t1_ in final_losses)]
    report.seconds = time.perf_counter() - t0
    return constraints, report


def propagate_boundary_deformation(mesh: TriMesh,
                                   constraints: dict[int, np.ndarray]) -> TriMesh:
    """Bi-harmonic propagation of boundary displacements into the interior."""
    lap = graph_laplacian(mesh)
    out = solve_constrained_bilaplacian(lap, constraints, mesh.vertices)
    return TriMesh(out, mesh.faces.copy())


# ---------------------------------------------------------------------------
# stage 3: active-area probing and shape fitting


@dataclass
class ProbeResult:
    active: np.ndarray     # (V,) bool
    targets: np.ndarray    # (V, 3); rows meaningful where active
    distances: np.ndarray  # (V,); ||X_i - target_i|| where active


def probe_active_area(mesh: TriMesh, target: ScalarField, semantics: SemanticFieldSet,
                      own_label: str, cfg: FitConfig,
                      normals: np.ndarray | None = None) -> ProbeResult:
    """Per-vertex iso-crossing search along +-normal with a semantic gate.

    Samples 2k+1 points spaced probe_extent / probe_count apart; the crossing
    nearest to the vertex (linearly interpolated between bracketing samples)
    becomes the target. A vertex activates only when a crossing exists and the
    semantic argmax at the crossing matches own_label. With cfg.probe_gate off,
    every vertex activates and vertices without a crossing are attracted to
    their sample nearest the iso level.
    """
    if target.convention.kind != "occupancy":
        raise FitError("active-area probing expects an occupancy target field")
    verts = mesh.vertices
    n_verts = len(verts)
    if normals is None:
        normals = vertex_normals(mesh)
    k = int(cfg.probe_count)
    spacing = cfg.probe_extent / k
    offsets = spacing * np.arange(-k, k + 1)
    samples = verts[:, None, :] + offsets[None, :, None] * normals[:, None, :]
    vals = target.eval(samples.reshape(-1, 3)).reshape(n_verts, 2 * k + 1)
    s = vals - cfg.iso_threshold

    big = np.inf
    # crossings between consecutive samples (marching-cubes edge logic)
    sa, sb = s[:, :-1], s[:, 1:]
    cross = sa * sb < 0
    with np.errstate(invalid="ignore", divide="ignore"):
        t_frac = np.where(cross, sa / np.where(sa == sb, 1.0, sa - sb), 0.0)
    cross_off = offsets[:-1][None, :] + t_frac * spacing
    cross_cost = np.where(cross, np.abs(cross_off), big)
    # samples landing exactly on the iso level are crossings at the sample
    zero_cost = np.where(s == 0, np.abs(offsets)[None, :], big)
    cost = np.concatenate([cross_cost, zero_cost], axis=1)
    all_off = np.concatenate([cross_off, np.broadcast_to(offsets, s.shape)], axis=1)
    best = np.argmin(cost, axis=1)
    rows = np.arange(n_verts)
    has_crossing = cost[rows, best] < big
    best_off = np.where(has_crossing, all_off[rows, best], 0.0)

    if not cfg.probe_gate:
        # nearest-sample attraction: no semantic gate, no crossing requirement
        fallback = np.argmin(np.abs(s) + np.abs(offsets)[None, :] * 1e-9, axis=1)
        best_off = np.where(has_crossing, best_off, offsets[fallback])
        targets = verts + best_off[:, None] * normals
        return ProbeResult(np.ones(n_verts, dtype=bool), targets, np.abs(best_off))

    targets = verts + best_off[:, None] * normals
    active = has_crossing.copy()
    if np.any(has_crossing):
        idx = semantics.argmax_indices(targets[has_crossing])
        own = semantics.labels.index(own_label)
        active[has_crossing] = idx == own
    return ProbeResult(active, targets, np.abs(best_off))


def shape_loss_and_grad(x: np.ndarray, probe: ProbeResult, lap_csr,
                        loops_fields, tsdf_field: ScalarField | None,
                        cfg: FitConfig, include_tsdf: bool = True):
    """Frozen-target shape loss: active-area pull, penetration hinge,
    boundary loss on loop vertices, Laplacian magnitude. Analytic gradient
    except the penetration term, which differentiates the TSDF numerically."""
    n = len(x)
    grad = np.zeros_like(x)
    value = 0.0

    n_active = int(probe.active.sum())
    if n_active > 0:
        diff = x[probe.active] - probe.targets[probe.active]
        value += float(np.einsum("ij,ij->", diff, diff)) / n_active
        grad[probe.active] += 2.0 * diff / n_active

    if include_tsdf and tsdf_field is not None and cfg.penetration_weight > 0:
        td = tsdf_field.eval(x)
        pen = td < 0
        value += -cfg.penetration_weight * float(np.minimum(td, 0.0).sum()) / n
        if np.any(pen):
            g = field_gradient(tsdf_field, x[pen])
            grad[pen] += -(cfg.penetration_weight / n) * g

    if loops_fields and cfg.boundary_weight > 0:
        # the garment's boundary loss is the sum of its per-loop losses
        for _, loop, fld in loops_fields:
            v, g = _loop_loss_grad(x[loop], fld, cfg.edge_avg_weight, cfg.edge_var_weight)
            value += cfg.boundary_weight * v
            grad[loop] += cfg.boundary_weight * g

    if cfg.laplacian_weight > 0:
        lx = lap_csr @ x
        value += cfg.laplacian_weight * float(np.einsum("ij,ij->", lx, lx)) / n
        grad += (2.0 * cfg.laplacian_weight / n) * (lap_csr @ lx)

    return value, grad


def shape_fit(mesh: TriMesh, target: ScalarField, semantics: SemanticFieldSet,
              own_label: str, loops: list[tuple[BoundaryType, np.ndarray]],
              boundary_fields: list[tuple[BoundaryType, BoundaryCylinderField]],
              tsdf_field: ScalarField | None, cfg: FitConfig) -> tuple[TriMesh, StageReport]:
    """ICP-style shape fitting: per iteration, re-probe then take one descended
    gradient step against the frozen-target loss."""
    report = StageReport("shape")
    t0 = time.perf_counter()
    x = mesh.vertices.copy()
    faces = mesh.faces
    lap_csr = graph_laplacian(mesh).matrix
    loops_fields = pair_loops_with_fields(loops, boundary_fields) if loops else []

    step = cfg.shape_step
    trace: list[float] = []
    report.stop_reason = "cap"
    for it in range(cfg.shape_iterations):
        normals = vertex_normals(TriMesh(x, faces))
        probe = probe_active_area(TriMesh(x, faces), target, semantics, own_label,
                                  cfg, normals=normals)

        def frozen(xx):
            return shape_loss_and_grad(xx, probe, lap_csr, loops_fields, tsdf_field, cfg)

        loss, grad = frozen(x)
        if not np.isfinite(loss):
            report.stop_reason = "failed"
            report.extra["failure"] = "non-finite loss"
            break
        if it == 0:
            trace.append(loss)
        accepted = False
        s = step
        for halving in range(21):
            x_try = x - s * grad
            loss_try, _ = frozen(x_try)
            if np.isfinite(loss_try) and loss_try <= loss:
                accepted = True
                break
            s *= 0.5
        if not accepted:
            report.stop_reason = "stationary"
            break
        step = s * (1.5 if halving == 0 else 1.0)
        x = x_try
        trace.append(loss_try)
        w = cfg.shape_plateau_window
        if len(trace) > w:
            drop = trace[-w - 1] - trace[-1]
            if drop < cfg.plateau_tolerance * max(abs(trace[-w - 1]), 1e-12):
                report.stop_reason = "plateau"
                break
    report.iterations = max(len(trace) - 1, 0)
    report.loss_trace = trace
    report.seconds = time.perf_counter() - t0
    return TriMesh(x, faces.copy()), report


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class FitReport:
    stages: list[StageReport] = field(default_factory=list)
    posed_template: TriMesh | None = None
    boundary_deformed: TriMesh | None = None
    output: TriMesh | None = None
    converged: bool = True
    metrics: dict = field(default_factory=dict)

    def stage(self, name: str) -> StageReport:
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self):
        return {
            "converged": self.converged,
            "stages": [s.to_dict() for s in self.stages],
            "metrics": self.metrics,
        }


def _loop_curve_distances(verts, loops_fields):
    out = {}
    for idx, (t, loop, fld) in enumerate(loops_fields):
        d, _ = polyline_distances(verts[loop], fld.curve)
        out[f"{BOUNDARY_NAMES[t]}[{idx}]"] = float(d.mean())
    return out


def run_pipeline(scene, template: GarmentTemplate, cfg: FitConfig) -> tuple[TriMesh, FitReport]:
    """Full registration: init -> boundary fit -> propagation -> shape fit.

    Stage toggles in cfg implement the ablations; disabling probe keeps the
    shape stage but replaces the gated probing with nearest-sample attraction.
    """
    report = FitReport()
    body = scene.body_model
    pose = np.asarray(scene.init_pose, dtype=np.float64)
    shape_v = np.asarray(scene.init_shape, dtype=np.float64)

    # stage 1: body initialization
    init_rep = StageReport("init", enabled=cfg.enable_init, stop_reason="skipped")
    if cfg.enable_init:
        from .body_init import fit_body_init

        t0 = time.perf_counter()
        result = fit_body_init(
            body, scene.joints_2d, scene.camera, scene.coarse_vertices(), cfg,
            pose0=pose, shape0=shape_v)
        pose, shape_v = result.pose, result.shape
        init_rep.iterations = result.iterations
        init_rep.loss_trace = result.loss_trace
        init_rep.stop_reason = result.stop_reason
        init_rep.seconds = time.perf_counter() - t0
    report.stages.append(init_rep)

    posed = deform_template_with_body(template, body, pose, shape_v)
    report.posed_template = posed
    report.metrics["pose"] = pose.tolist()
    report.metrics["shape"] = shape_v.tolist()

    # stage 2: boundary fitting + bi-harmonic propagation
    bound_rep = StageReport("boundary", enabled=cfg.enable_boundary, stop_reason="skipped")
    deformed = posed
    if cfg.enable_boundary:
        constraints, bound_rep = fit_boundaries(
            posed, template.boundaries, scene.boundary_fields, cfg)
        bound_rep.enabled = True
        deformed = propagate_boundary_deformation(posed, constraints)
    report.stages.append(bound_rep)
    report.boundary_deformed = deformed

    paired = pair_loops_with_fields(template.boundaries, scene.boundary_fields)
    report.metrics["boundary_distance_after_stage2"] = _loop_curve_distances(
        deformed.vertices, paired)

    # stage 3: shape fitting
    shape_rep = StageReport("shape", enabled=cfg.enable_shape, stop_reason="skipped")
    output = deformed
    if cfg.enable_shape:
        output, shape_rep = shape_fit(
            deformed, scene.target_field, scene.semantics, template.semantic_label,
            template.boundaries, scene.boundary_fields, scene.body_tsdf_grid, cfg)
    report.stages.append(shape_rep)
    report.output = output
    report.metrics["boundary_distance_after_stage3"] = _loop_curve_distances(
        output.vertices, paired)
    # convergence here means "no stage aborted"; stopping at the iteration cap
    # is a normal termination of the descent
    report.converged = not any(s.failed for s in report.stages if s.enabled)
    return output, report
