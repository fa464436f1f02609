"""Synthetic scene generation: implicit targets, boundary/semantic fields, joints.

A scene bundles everything the registration pipeline consumes, generated from
ground-truth layered meshes so the full loop is verifiable end to end.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .body import SkinnedBody, WeakPerspectiveCamera, default_body, skin_pose
from .fields import (ConstantField, BoundaryCylinderField, GridField,
                     MeshOccupancyField, ScalarField, SemanticFieldSet, TsdfField,
                     bake_to_grid, bake_tsdf_grid, load_grid, save_grid)
from .geometry import MeshError, Polyline3, TriMesh, load_obj, save_obj
from .marching import marching_cubes
from .primitives import capped
from .templates import (BOUNDARY_BY_NAME, BOUNDARY_NAMES, CATEGORY_BY_NAME,
                        CATEGORY_NAMES, BoundaryType, GarmentCategory,
                        procedural_template)

SEMANTIC_LABELS = ["upper", "lower", "body"]  # garments first: ties favor them


@dataclass
class GarmentSpec:
    """One ground-truth garment: open shell mesh + typed boundary polylines."""

    label: str
    mesh: TriMesh
    boundaries: list[tuple[BoundaryType, Polyline3]]
    category: GarmentCategory | None = None


@dataclass
class SceneBundle:
    name: str
    body_model: SkinnedBody
    body_mesh: TriMesh
    target_field: GridField
    coarse_field: GridField
    boundary_fields: list[tuple[BoundaryType, BoundaryCylinderField]]
    semantics: SemanticFieldSet
    body_tsdf: TsdfField
    body_tsdf_grid: GridField
    gt_garments: list[GarmentSpec]
    joints_2d: np.ndarray
    camera: WeakPerspectiveCamera
    gt_pose: np.ndarray
    gt_shape: np.ndarray
    init_pose: np.ndarray
    init_shape: np.ndarray
    body_spacing: float = 0.012
    _coarse_verts: np.ndarray | None = field(default=None, repr=False)

    def coarse_vertices(self) -> np.ndarray:
        """Vertices of the mesh extracted from the coarse field (cached)."""
        if self._coarse_verts is None:
            g = self.coarse_field
            lo, hi = g.bounds()
            mesh = marching_cubes(g, lo, hi, g.dims)
            self._coarse_verts = mesh.vertices
        return self._coarse_verts

    def gt_garment(self, label: str) -> TriMesh:
        for spec in self.gt_garments:
            if spec.label == label:
                return spec.mesh
        raise KeyError(f"scene has no ground-truth garment labeled {label!r}")

    def gt_polylines(self) -> list[tuple[BoundaryType, Polyline3]]:
        return [(t, f.curve) for t, f in self.boundary_fields]


def _scene_grid_geometry(meshes: list[TriMesh], resolution: int, margin: float = 0.05):
    los = np.stack([m.bounds()[0] for m in meshes])
    his = np.stack([m.bounds()[1] for m in meshes])
    lo = los.min(axis=0) - margin
    hi = his.max(axis=0) + margin
    extent = hi - lo
    spacing = float(extent.max()) / (resolution - 1)
    dims = np.floor(extent / spacing).astype(np.int64) + 2
    return lo, spacing, dims


def synth_scene(body_model: SkinnedBody, gt_pose, gt_shape,
                garments: list[GarmentSpec], camera: WeakPerspectiveCamera,
                resolution: int = 256, coarse_factor: int = 4,
                boundary_radius: float = 1e-3, truncation: float = 0.05,
                init_pose=None, init_shape=None, name: str = "scene",
                body_spacing: float = 0.012) -> SceneBundle:
    """Bake a full scene from a posed body and ground-truth garment shells.

    Occupancy targets are the union of the body and the capped garment solids;
    per-label semantic occupancies come from the individual closed meshes with
    garment labels winning ties over the body.
    """
    gt_pose = np.asarray(gt_pose, dtype=np.float64)
    gt_shape = np.asarray(gt_shape, dtype=np.float64)
    body_mesh, joints = skin_pose(body_model, gt_pose, gt_shape)
    if not body_mesh.is_closed():
        raise MeshError("body mesh is not watertight")

    solids: dict[str, list[TriMesh]] = {"upper": [], "lower": []}
    for spec in garments:
        solid = spec.mesh if spec.mesh.is_closed() else capped(spec.mesh)
        if not solid.is_closed():
            raise MeshError(f"garment {spec.label!r} is not watertight after capping")
        if spec.label not in solids:
            raise ValueError(f"unknown garment label {spec.label!r}")
        solids[spec.label].append(solid)

    all_meshes = [body_mesh] + [m for ms in solids.values() for m in ms]
    lo, spacing, dims = _scene_grid_geometry(all_meshes, resolution)

    body_grid = bake_to_grid(MeshOccupancyField(body_mesh), lo, spacing, dims)
    label_grids: dict[str, GridField | None] = {}
    union_values = body_grid.values.copy()
    for label, meshes in solids.items():
        if not meshes:
            label_grids[label] = None
            continue
        vals = None
        for m in meshes:
            g = bake_to_grid(MeshOccupancyField(m), lo, spacing, dims)
            vals = g.values if vals is None else np.maximum(vals, g.values)
        label_grids[label] = GridField(lo, spacing, vals, body_grid.convention, 0.0)
        union_values = np.maximum(union_values, vals)
    target = GridField(lo, spacing, union_values, body_grid.convention, 0.0)

    # coarse field: same union occupancy sampled on its own reduced lattice
    c_res = max(int(resolution // coarse_factor), 8)
    c_lo, c_spacing, c_dims = _scene_grid_geometry(all_meshes, c_res)
    coarse_vals = bake_to_grid(MeshOccupancyField(body_mesh), c_lo, c_spacing, c_dims).values
    for meshes in solids.values():
        for m in meshes:
            g = bake_to_grid(MeshOccupancyField(m), c_lo, c_spacing, c_dims)
            coarse_vals = np.maximum(coarse_vals, g.values)
    coarse = GridField(c_lo, c_spacing, coarse_vals, body_grid.convention, 0.0)

    sem_fields: list[ScalarField] = []
    for label in SEMANTIC_LABELS:
        if label == "body":
            sem_fields.append(body_grid)
        else:
            sem_fields.append(label_grids[label] or ConstantField(0.0))
    semantics = SemanticFieldSet(list(SEMANTIC_LABELS), sem_fields)

    boundary_fields = []
    for spec in garments:
        for btype, poly in spec.boundaries:
            boundary_fields.append((btype, BoundaryCylinderField(poly, boundary_radius)))

    b_lo, b_hi = body_mesh.bounds()
    t_lo = b_lo - truncation - 3 * spacing
    t_extent = (b_hi + truncation + 3 * spacing) - t_lo
    t_dims = np.floor(t_extent / spacing).astype(np.int64) + 2
    body_tsdf_grid = bake_tsdf_grid(body_mesh, t_lo, spacing, t_dims, truncation)

    proj = camera.project(joints)
    joints_2d = np.concatenate([proj, np.ones((len(proj), 1))], axis=1)

    return SceneBundle(
        name=name, body_model=body_model, body_mesh=body_mesh,
        target_field=target, coarse_field=coarse,
        boundary_fields=boundary_fields, semantics=semantics,
        body_tsdf=TsdfField(body_mesh, truncation), body_tsdf_grid=body_tsdf_grid,
        gt_garments=list(garments), joints_2d=joints_2d, camera=camera,
        gt_pose=gt_pose, gt_shape=gt_shape,
        init_pose=np.asarray(init_pose if init_pose is not None else gt_pose, dtype=np.float64),
        init_shape=np.asarray(init_shape if init_shape is not None else gt_shape, dtype=np.float64),
        body_spacing=body_spacing,
    )


# ---------------------------------------------------------------------------
# recipes: parametric scene descriptions (bundled + user JSON)


def builtin_recipes() -> dict[str, dict]:
    base_init = {"root_rot_deg": 15.0, "root_axis": [0.25, 1.0, 0.3], "scale": 1.10}
    return {
        "skirt_basic": {
            "name": "skirt_basic", "resolution": 128, "coarse_factor": 4, "seed": 11,
            "camera": {"s": 1.8, "t": [0.0, -0.95]},
            # untucked top over the skirt waist: the waistband is occluded, so
            # fitting the skirt exercises the semantic probe gate
            "garments": [{
                "label": "lower", "category": "skirt",
                "params": {"waist_y": 0.558, "waist_radius": 0.104, "hem_y": 0.245,
                           "hem_radius": 0.185, "wrinkle_amp": 0.009, "wrinkle_freq": 9,
                           "body_clearance": 0.012},
            }, {
                "label": "upper", "category": "upper-no-sleeve",
                "params": {"hem_y": 0.455, "hem_radius": 0.158, "chest_radius": 0.136,
                           "wrinkle_amp": 0.006, "wrinkle_freq": 8, "body_clearance": 0.012},
            }],
            "init": dict(base_init),
        },
        "vest_basic": {
            "name": "vest_basic", "resolution": 128, "coarse_factor": 4, "seed": 12,
            "camera": {"s": 1.8, "t": [0.0, -0.95]},
            # high-waisted skirt worn over the top's hem occludes it from outside
            "garments": [{
                "label": "upper", "category": "upper-no-sleeve",
                "params": {"hem_y": 0.455, "hem_radius": 0.145, "chest_radius": 0.132,
                           "wrinkle_amp": 0.007, "wrinkle_freq": 8, "body_clearance": 0.012},
            }, {
                "label": "lower", "category": "skirt",
                "params": {"waist_y": 0.60, "waist_radius": 0.168, "hem_y": 0.33,
                           "hem_radius": 0.20, "wrinkle_amp": 0.006, "wrinkle_freq": 8,
                           "body_clearance": 0.012},
            }],
            "init": {"root_rot_deg": 14.0, "root_axis": [0.2, 1.0, -0.35], "scale": 0.905},
        },
        "pants_basic": {
            "name": "pants_basic", "resolution": 128, "coarse_factor": 4, "seed": 13,
            "camera": {"s": 1.8, "t": [0.0, -0.95]},
            # the untucked top occludes the pants waistband, so fitting the pants
            # has to rely on the semantic gate to ignore the upper garment
            "garments": [{
                "label": "lower", "category": "pants-long",
                "params": {"waist_y": 0.558, "cuff_y": 0.075, "leg_radius": 0.066,
                           "cuff_radius": 0.058, "wrinkle_amp": 0.005, "wrinkle_freq": 7,
                           "body_clearance": 0.012},
            }, {
                "label": "upper", "category": "upper-no-sleeve",
                "params": {"hem_y": 0.438, "hem_radius": 0.165, "chest_radius": 0.138,
                           "wrinkle_amp": 0.006, "wrinkle_freq": 8, "body_clearance": 0.012},
            }],
            "init": {"root_rot_deg": 15.0, "root_axis": [-0.2, 1.0, 0.25], "scale": 1.10},
        },
    }


def _init_from_recipe(recipe: dict, n_joints: int):
    init = recipe.get("init", {})
    pose = np.zeros((n_joints, 3))
    axis = np.asarray(init.get("root_axis", [0.0, 1.0, 0.0]), dtype=np.float64)
    axis = axis / max(np.linalg.norm(axis), 1e-12)
    pose[0] = axis * np.deg2rad(float(init.get("root_rot_deg", 0.0)))
    shape = np.ones(6)
    shape[:3] = float(init.get("scale", 1.0))
    return pose, shape


def scene_from_recipe(recipe: dict) -> SceneBundle:
    """Build a SceneBundle from a recipe mapping (see builtin_recipes)."""
    body = default_body(float(recipe.get("body", {}).get("spacing", 0.012)))
    gt_pose = np.asarray(recipe.get("gt_pose", np.zeros((body.n_joints, 3))), dtype=np.float64)
    gt_shape = np.asarray(recipe.get("gt_shape", np.ones(6)), dtype=np.float64)

    specs = []
    for g in recipe["garments"]:
        category = CATEGORY_BY_NAME[g["category"]]
        template = procedural_template(category, body, _params_for(category, g.get("params", {})))
        mesh = template.mesh
        if np.any(gt_pose != 0) or np.any(gt_shape != 1):
            from .templates import deform_template_with_body
            mesh = deform_template_with_body(template, body, gt_pose, gt_shape)
        boundaries = [(t, Polyline3(mesh.vertices[loop], closed=True))
                      for t, loop in template.boundaries]
        specs.append(GarmentSpec(g["label"], mesh, boundaries, category))

    cam = recipe.get("camera", {"s": 1.8, "t": [0.0, -0.95]})
    camera = WeakPerspectiveCamera(float(cam["s"]), np.asarray(cam["t"], dtype=np.float64))
    init_pose, init_shape = _init_from_recipe(recipe, body.n_joints)
    return synth_scene(
        body, gt_pose, gt_shape, specs, camera,
        resolution=int(recipe.get("resolution", 256)),
        coarse_factor=int(recipe.get("coarse_factor", 4)),
        boundary_radius=float(recipe.get("boundary_radius", 1e-3)),
        truncation=float(recipe.get("truncation", 0.05)),
        init_pose=init_pose, init_shape=init_shape,
        name=recipe.get("name", "scene"),
        body_spacing=float(recipe.get("body", {}).get("spacing", 0.012)),
    )


def _params_for(category: GarmentCategory, params: dict):
    from .templates import _PARAM_TYPES

    cls = _PARAM_TYPES[category]
    return cls(**params)


# ---------------------------------------------------------------------------
# bundle persistence


def save_scene(bundle: SceneBundle, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_grid(out / "target.grid", bundle.target_field)
    save_grid(out / "coarse.grid", bundle.coarse_field)
    save_grid(out / "body_tsdf.grid", bundle.body_tsdf_grid)
    save_obj(out / "body.obj", bundle.body_mesh)
    radius = bundle.boundary_fields[0][1].radius if bundle.boundary_fields else 1e-3
    garments = []
    polylines = []
    for i, spec in enumerate(bundle.gt_garments):
        fname = f"gt_{i}_{spec.label}.obj"
        save_obj(out / fname, spec.mesh)
        garments.append({"label": spec.label, "mesh": fname,
                         "category": None if spec.category is None
                         else CATEGORY_NAMES[spec.category]})
        for btype, poly in spec.boundaries:
            polylines.append({
                "type": BOUNDARY_NAMES[btype], "garment": i,
                "closed": bool(poly.closed), "points": poly.points.tolist(),
                "radius": radius,
            })
    (out / "boundaries.json").write_text(json.dumps({"polylines": polylines}), encoding="utf-8")
    (out / "joints.json").write_text(
        json.dumps({"joints": bundle.joints_2d.tolist()}), encoding="utf-8")
    sem_labels_present = [lbl for lbl, fld in zip(bundle.semantics.labels, bundle.semantics.fields)
                          if isinstance(fld, GridField)]
    for lbl in sem_labels_present:
        g = bundle.semantics.fields[bundle.semantics.labels.index(lbl)]
        save_grid(out / f"sem_{lbl}.grid", g)
    manifest = {
        "name": bundle.name,
        "camera": {"s": bundle.camera.s, "t": bundle.camera.t.tolist()},
        "grids": {"target": "target.grid", "coarse": "coarse.grid",
                  "body_tsdf": "body_tsdf.grid"},
        "semantic_grids": {lbl: f"sem_{lbl}.grid" for lbl in sem_labels_present},
        "body_mesh": "body.obj",
        "body_spacing": bundle.body_spacing,
        "garments": garments,
        "boundaries": "boundaries.json",
        "joints": "joints.json",
        "gt_pose": bundle.gt_pose.tolist(),
        "gt_shape": bundle.gt_shape.tolist(),
        "init_pose": bundle.init_pose.tolist(),
        "init_shape": bundle.init_shape.tolist(),
        "truncation": bundle.body_tsdf.truncation,
    }
    (out / "scene.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")


def load_scene(scene_dir) -> SceneBundle:
    root = Path(scene_dir)
    manifest_path = root / "scene.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no scene manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    body_model = default_body(float(manifest.get("body_spacing", 0.012)))
    body_mesh = load_obj(root / manifest["body_mesh"], strict=False)
    target = load_grid(root / manifest["grids"]["target"])
    coarse = load_grid(root / manifest["grids"]["coarse"])
    tsdf_grid = load_grid(root / manifest["grids"]["body_tsdf"])
    truncation = float(manifest.get("truncation", 0.05))

    garments = []
    for g in manifest["garments"]:
        mesh = load_obj(root / g["mesh"], strict=False)
        category = CATEGORY_BY_NAME.get(g["category"]) if g.get("category") else None
        garments.append(GarmentSpec(g["label"], mesh, [], category))

    boundaries_doc = json.loads((root / manifest["boundaries"]).read_text(encoding="utf-8"))
    boundary_fields = []
    for item in boundaries_doc["polylines"]:
        btype = BOUNDARY_BY_NAME[item["type"]]
        poly = Polyline3(np.asarray(item["points"]), closed=bool(item["closed"]))
        boundary_fields.append((btype, BoundaryCylinderField(poly, float(item["radius"]))))
        garments[int(item.get("garment", 0))].boundaries.append((btype, poly))

    sem_fields: list[ScalarField] = []
    for label in SEMANTIC_LABELS:
        fname = manifest.get("semantic_grids", {}).get(label)
        sem_fields.append(load_grid(root / fname) if fname else ConstantField(0.0))
    semantics = SemanticFieldSet(list(SEMANTIC_LABELS), sem_fields)

    joints = np.asarray(json.loads((root / manifest["joints"]).read_text(encoding="utf-8"))["joints"])
    cam = manifest["camera"]
    return SceneBundle(
        name=manifest["name"], body_model=body_model, body_mesh=body_mesh,
        target_field=target, coarse_field=coarse, boundary_fields=boundary_fields,
        semantics=semantics, body_tsdf=TsdfField(body_mesh, truncation),
        body_tsdf_grid=tsdf_grid, gt_garments=garments, joints_2d=joints,
        camera=WeakPerspectiveCamera(float(cam["s"]), np.asarray(cam["t"])),
        gt_pose=np.asarray(manifest["gt_pose"]), gt_shape=np.asarray(manifest["gt_shape"]),
        init_pose=np.asarray(manifest["init_pose"]), init_shape=np.asarray(manifest["init_shape"]),
        body_spacing=float(manifest.get("body_spacing", 0.012)),
    )
