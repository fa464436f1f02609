"""Garment templates: typed boundary loops on procedural meshes bound to the body.

Generators cover the desk-scale subset (skirt, no-sleeve upper, long pants,
long-sleeve upper); the remaining categories load from OBJ + annotation JSON.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from .body import SkinnedBody, bone_weights
from .geometry import MeshError, Polyline3, TriMesh, graph_laplacian, load_obj, save_obj
from .solve import solve_constrained_bilaplacian


class BoundaryType(IntEnum):
    NECKLINE = 0
    CENTER_FRONT_LINE = 1
    HEMLINE = 2
    SLEEVE_CUFF = 3
    WAISTLINE = 4
    PANT_CUFF = 5
    SKIRT_HEM = 6
    ARMHOLE = 7
    DRESS_HEM = 8


BOUNDARY_NAMES = {
    BoundaryType.NECKLINE: "neckline",
    BoundaryType.CENTER_FRONT_LINE: "center-front-line",
    BoundaryType.HEMLINE: "hemline",
    BoundaryType.SLEEVE_CUFF: "sleeve-cuff",
    BoundaryType.WAISTLINE: "waistline",
    BoundaryType.PANT_CUFF: "pant-cuff",
    BoundaryType.SKIRT_HEM: "skirt-hem",
    BoundaryType.ARMHOLE: "armhole",
    BoundaryType.DRESS_HEM: "dress-hem",
}
BOUNDARY_BY_NAME = {v: k for k, v in BOUNDARY_NAMES.items()}


class GarmentCategory(IntEnum):
    UPPER_LONG_SLEEVE = 0
    UPPER_SHORT_SLEEVE = 1
    UPPER_NO_SLEEVE = 2
    DRESS_LONG_SLEEVE = 3
    DRESS_SHORT_SLEEVE = 4
    DRESS_NO_SLEEVE = 5
    COAT_LONG_SLEEVE = 6
    COAT_SHORT_SLEEVE = 7
    COAT_NO_SLEEVE = 8
    PANTS_LONG = 9
    PANTS_SHORT = 10
    SKIRT = 11


CATEGORY_NAMES = {
    GarmentCategory.UPPER_LONG_SLEEVE: "upper-long-sleeve",
    GarmentCategory.UPPER_SHORT_SLEEVE: "upper-short-sleeve",
    GarmentCategory.UPPER_NO_SLEEVE: "upper-no-sleeve",
    GarmentCategory.DRESS_LONG_SLEEVE: "dress-long-sleeve",
    GarmentCategory.DRESS_SHORT_SLEEVE: "dress-short-sleeve",
    GarmentCategory.DRESS_NO_SLEEVE: "dress-no-sleeve",
    GarmentCategory.COAT_LONG_SLEEVE: "coat-long-sleeve",
    GarmentCategory.COAT_SHORT_SLEEVE: "coat-short-sleeve",
    GarmentCategory.COAT_NO_SLEEVE: "coat-no-sleeve",
    GarmentCategory.PANTS_LONG: "pants-long",
    GarmentCategory.PANTS_SHORT: "pants-short",
    GarmentCategory.SKIRT: "skirt",
}
CATEGORY_BY_NAME = {v: k for k, v in CATEGORY_NAMES.items()}

LOWER_CATEGORIES = {GarmentCategory.PANTS_LONG, GarmentCategory.PANTS_SHORT, GarmentCategory.SKIRT}

PROCEDURAL_CATEGORIES = (
    GarmentCategory.SKIRT,
    GarmentCategory.UPPER_NO_SLEEVE,
    GarmentCategory.PANTS_LONG,
    GarmentCategory.UPPER_LONG_SLEEVE,
)


class TemplateError(ValueError):
    pass


@dataclass
class GarmentTemplate:
    """Garment mesh with typed boundary loops and a body skinning binding."""

    category: GarmentCategory
    mesh: TriMesh
    boundaries: list[tuple[BoundaryType, np.ndarray]]
    semantic_label: str
    joint_names: list[str]
    binding: np.ndarray  # (V, J)

    def __post_init__(self):
        self.boundaries = [(BoundaryType(t), np.asarray(loop, dtype=np.int64))
                           for t, loop in self.boundaries]
        self.binding = np.asarray(self.binding, dtype=np.float64)

    def validate(self) -> "GarmentTemplate":
        self.mesh.validate()
        edge_set = {tuple(e) for e in np.sort(self.mesh.edges(directed=True), axis=1).tolist()}
        seen: set[int] = set()
        for btype, loop in self.boundaries:
            if len(loop) < 3:
                raise TemplateError(f"{BOUNDARY_NAMES[btype]} loop too short")
            if loop.min() < 0 or loop.max() >= self.mesh.n_vertices:
                raise TemplateError("boundary index out of range")
            if len(set(loop.tolist())) != len(loop):
                raise TemplateError(f"{BOUNDARY_NAMES[btype]} loop repeats a vertex")
            for a, b in zip(loop, np.roll(loop, -1)):
                if (min(a, b), max(a, b)) not in edge_set:
                    raise TemplateError("loop not edge-connected")
            overlap = seen.intersection(loop.tolist())
            if overlap:
                raise TemplateError(f"boundary loops share vertex {sorted(overlap)[0]}")
            seen.update(loop.tolist())
        if self.binding.shape[0] != self.mesh.n_vertices:
            raise TemplateError("binding weight count does not match vertex count")
        rows = self.binding.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-9) or np.any(self.binding < -1e-12):
            raise TemplateError("binding weights not normalized")
        return self

    def loop(self, btype: BoundaryType) -> np.ndarray:
        for t, loop in self.boundaries:
            if t == btype:
                return loop
        raise KeyError(BOUNDARY_NAMES[btype])

    def loop_types(self) -> list[BoundaryType]:
        return [t for t, _ in self.boundaries]

    def boundary_polyline(self, btype_or_loop) -> Polyline3:
        loop = btype_or_loop if isinstance(btype_or_loop, np.ndarray) else self.loop(btype_or_loop)
        return Polyline3(self.mesh.vertices[loop], closed=True)

    def undeclared_boundary_edges(self) -> np.ndarray:
        """Open mesh edges not covered by any declared loop (should be empty)."""
        declared = set()
        for _, loop in self.boundaries:
            for a, b in zip(loop, np.roll(loop, -1)):
                declared.add((min(int(a), int(b)), max(int(a), int(b))))
        be = self.mesh.boundary_edges()
        keys = [tuple(e) for e in np.sort(be, axis=1).tolist()]
        missing = [k for k in keys if k not in declared]
        return np.asarray(missing, dtype=np.int64).reshape(-1, 2)


def deform_template_with_body(template: GarmentTemplate, body: SkinnedBody,
                              pose, shape=None) -> TriMesh:
    """Template skinned through the body's joint transforms (the posed template)."""
    if template.binding.shape[1] != body.n_joints:
        raise TemplateError("template is not bound to this body")
    verts = body.skin_vertices(template.mesh.vertices, template.binding, pose, shape)
    return TriMesh(verts, template.mesh.faces.copy())


# ---------------------------------------------------------------------------
# procedural construction helpers


def _ring_points(y: float, rx: float, rz: float, n: int,
                 radial_offset: np.ndarray | None = None) -> np.ndarray:
    theta = 2 * np.pi * np.arange(n) / n
    scale = 1.0 if radial_offset is None else 1.0 + radial_offset
    return np.stack([rx * np.sin(theta) * scale, np.full(n, float(y)),
                     rz * np.cos(theta) * scale], axis=1)


def _lattice_faces(n_rings: int, n_around: int, skip: set[tuple[int, int]] | None = None):
    """Quad strip faces for a (rings x around) closed tube lattice."""
    faces = []
    for r in range(n_rings - 1):
        for a in range(n_around):
            if skip and (r, a) in skip:
                continue
            a2 = (a + 1) % n_around
            v00 = r * n_around + a
            v01 = r * n_around + a2
            v10 = (r + 1) * n_around + a
            v11 = (r + 1) * n_around + a2
            faces.append([v00, v01, v11])
            faces.append([v00, v11, v10])
    return np.asarray(faces, dtype=np.int64)


def _orient_open_tube(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Flip all faces when the consistent orientation points inward."""
    fc = verts[faces]
    normals = np.cross(fc[:, 1] - fc[:, 0], fc[:, 2] - fc[:, 0])
    centers = fc.mean(axis=1)
    axis_pt = np.array([0.0, 1.0, 0.0])
    radial = centers - np.array([0.0, 0.0, 0.0])
    radial[:, 1] = 0.0  # outward from the vertical axis
    score = np.einsum("ij,ij->i", normals, radial).sum()
    if score < 0:
        return faces[:, ::-1].copy()
    return faces


def _strip_faces(lower: np.ndarray, upper: np.ndarray, reverse: bool) -> np.ndarray:
    """Triangles joining two same-length vertex cycles."""
    n = len(lower)
    lo = lower[::-1] if reverse else lower
    up = upper[::-1] if reverse else upper
    faces = []
    for a in range(n):
        a2 = (a + 1) % n
        faces.append([lo[a], lo[a2], up[a2]])
        faces.append([lo[a], up[a2], up[a]])
    return np.asarray(faces, dtype=np.int64)


def _strip_orientation(existing_faces: np.ndarray, cycle: np.ndarray) -> bool:
    """True when the new strip must traverse the cycle reversed to stay manifold."""
    directed = {(int(a), int(b)) for f in existing_faces for a, b in
                ((f[0], f[1]), (f[1], f[2]), (f[2], f[0]))}
    a, b = int(cycle[0]), int(cycle[1])
    # the strip reuses cycle edges in the direction (a -> b); if that direction
    # is already taken by an existing face, reverse the cycle
    return (a, b) in directed


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3 - 2 * t)


def _push_clear_of_body(verts: np.ndarray, margin: float, iterations: int = 3) -> np.ndarray:
    """Push vertices out of the capsule body until they clear it by margin.

    Garments are authored as tubes of revolution; this drapes them over the
    actual body (shoulders, hips, thighs) the way worn fabric rests on skin.
    """
    from .body import capsule_body_sdf
    from .fields import field_gradient

    if margin <= 0:
        return verts
    sdf = capsule_body_sdf()
    out = verts.copy()
    for _ in range(iterations):
        d = sdf.eval(out)
        mask = d < margin
        if not np.any(mask):
            break
        g = field_gradient(sdf, out[mask], h=1e-5)
        g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)
        out[mask] += (margin - d[mask])[:, None] * g
    return out


def _compact(verts: np.ndarray, faces: np.ndarray, loops: list[np.ndarray]):
    """Drop vertices not referenced by any face, remapping faces and loops."""
    used = np.zeros(len(verts), dtype=bool)
    used[faces.ravel()] = True
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(int(used.sum()))
    new_loops = []
    for loop in loops:
        if np.any(~used[loop]):
            raise TemplateError("boundary loop references an unreferenced vertex")
        new_loops.append(remap[loop])
    return verts[used], remap[faces], new_loops


# ---------------------------------------------------------------------------
# category parameter blocks


@dataclass
class SkirtParams:
    waist_y: float = 0.565
    waist_radius: float = 0.107
    hem_y: float = 0.335
    hem_radius: float = 0.155
    depth_ratio: float = 0.88   # z radius relative to x
    segments: int = 64
    rings: int = 24
    wrinkle_amp: float = 0.0
    wrinkle_freq: int = 9
    wrinkle_phase: float = 0.0
    body_clearance: float = 0.006


@dataclass
class VestParams:
    hem_y: float = 0.525
    hem_radius: float = 0.128
    chest_radius: float = 0.126
    shoulder_y: float = 0.785
    neck_y: float = 0.872
    neck_radius: float = 0.058
    depth_ratio: float = 0.82
    segments: int = 64
    rings: int = 28
    armhole_lo: float = 0.742
    armhole_hi: float = 0.845
    armhole_half_width: float = 0.38  # radians around each side
    wrinkle_amp: float = 0.0
    wrinkle_freq: int = 7
    wrinkle_phase: float = 0.0
    body_clearance: float = 0.006


@dataclass
class PantsParams:
    waist_y: float = 0.565
    waist_radius: float = 0.104
    crotch_y: float = 0.505
    cuff_y: float = 0.145
    leg_radius: float = 0.060
    cuff_radius: float = 0.054
    depth_ratio: float = 0.86
    half_segments: int = 26    # hip ring has twice this many columns
    hip_rings: int = 6
    leg_rings: int = 24
    seam_points: int = 6
    wrinkle_amp: float = 0.0
    wrinkle_freq: int = 7
    wrinkle_phase: float = 0.0
    body_clearance: float = 0.006


@dataclass
class LongSleeveParams:
    vest: VestParams = field(default_factory=lambda: VestParams(armhole_lo=0.75))
    cuff_x: float = 0.41
    sleeve_radius: float = 0.042
    cuff_radius: float = 0.036
    sleeve_rings: int = 11
    wrinkle_amp: float = 0.0
    wrinkle_freq: int = 6
    wrinkle_phase: float = 0.0
    body_clearance: float = 0.006


# ---------------------------------------------------------------------------
# generators


def _build_skirt(p: SkirtParams):
    t = np.linspace(0.0, 1.0, p.rings)
    ys = p.waist_y + (p.hem_y - p.waist_y) * t
    radii = p.waist_radius + (p.hem_radius - p.waist_radius) * _smoothstep(t) ** 0.9
    env = np.sin(np.pi * t) ** 0.8
    theta = 2 * np.pi * np.arange(p.segments) / p.segments
    rings = []
    for i in range(p.rings):
        offset = p.wrinkle_amp * env[i] * np.sin(p.wrinkle_freq * theta + p.wrinkle_phase) / max(radii[i], 1e-9)
        rings.append(_ring_points(ys[i], radii[i], radii[i] * p.depth_ratio, p.segments, offset))
    verts = np.concatenate(rings, axis=0)
    faces = _orient_open_tube(verts, _lattice_faces(p.rings, p.segments))
    loops = [
        (BoundaryType.WAISTLINE, np.arange(p.segments)),
        (BoundaryType.SKIRT_HEM, np.arange(p.segments) + (p.rings - 1) * p.segments),
    ]
    return TriMesh(verts, faces), loops


def _vest_profile(p: VestParams, t: np.ndarray):
    ys = p.hem_y + (p.neck_y - p.hem_y) * t
    taper = _smoothstep((ys - p.shoulder_y) / max(p.neck_y - p.shoulder_y, 1e-9))
    radii = p.hem_radius + (p.chest_radius - p.hem_radius) * _smoothstep(t)
    radii = radii * (1 - taper) + p.neck_radius * taper
    return ys, radii


def _armhole_patches(p: VestParams, ys: np.ndarray):
    """(vertex-row range, column ranges) of the lattice patches removed for armholes."""
    rows = [r for r in range(1, len(ys) - 1) if p.armhole_lo <= ys[r] <= p.armhole_hi]
    if len(rows) < 2:
        raise TemplateError("armhole band does not cover at least two lattice rows")
    r0, r1 = rows[0], rows[-1]
    theta = 2 * np.pi * np.arange(p.segments) / p.segments

    def band(center):
        cols = np.nonzero(np.abs(((theta - center + np.pi) % (2 * np.pi)) - np.pi)
                          <= p.armhole_half_width)[0]
        cols = np.sort(cols)
        if cols.max() - cols.min() != len(cols) - 1:
            raise TemplateError("armhole column band wraps the seam; rotate or shrink it")
        return int(cols.min()), int(cols.max()) + 1

    # sides sit at theta = pi/2 (x > 0) and 3*pi/2 (x < 0)
    return (r0, r1), band(np.pi / 2), band(3 * np.pi / 2)


def _hole_perimeter(r0: int, r1: int, c0: int, c1: int, n_around: int) -> np.ndarray:
    """Vertex cycle around a removed [r0, r1) x [c0, c1) quad patch."""
    bottom = [r0 * n_around + c for c in range(c0, c1 + 1)]
    right = [r * n_around + c1 for r in range(r0 + 1, r1 + 1)]
    top = [r1 * n_around + c for c in range(c1 - 1, c0 - 1, -1)]
    left = [r * n_around + c0 for r in range(r1 - 1, r0, -1)]
    return np.asarray(bottom + right + top + left, dtype=np.int64)


def _build_vest(p: VestParams, keep_armhole_loops: bool = True):
    t = np.linspace(0.0, 1.0, p.rings)
    ys, radii = _vest_profile(p, t)
    env = np.sin(np.pi * t) ** 0.8
    theta = 2 * np.pi * np.arange(p.segments) / p.segments
    rings = []
    for i in range(p.rings):
        offset = p.wrinkle_amp * env[i] * np.sin(p.wrinkle_freq * theta + p.wrinkle_phase) / max(radii[i], 1e-9)
        rings.append(_ring_points(ys[i], radii[i], radii[i] * p.depth_ratio, p.segments, offset))
    verts = np.concatenate(rings, axis=0)

    (r0, r1), (lc0, lc1), (rc0, rc1) = _armhole_patches(p, ys)
    skip = {(r, c) for r in range(r0, r1) for c in range(lc0, lc1)}
    skip |= {(r, c) for r in range(r0, r1) for c in range(rc0, rc1)}
    faces = _orient_open_tube(verts, _lattice_faces(p.rings, p.segments, skip))
    neckline = np.arange(p.segments) + (p.rings - 1) * p.segments
    hemline = np.arange(p.segments)
    holes = [_hole_perimeter(r0, r1, lc0, lc1, p.segments),
             _hole_perimeter(r0, r1, rc0, rc1, p.segments)]
    verts, faces, (neckline, hemline, *holes) = _compact(
        verts, faces, [neckline, hemline] + holes)
    loops = [(BoundaryType.NECKLINE, neckline), (BoundaryType.HEMLINE, hemline)]
    if keep_armhole_loops:
        loops += [(BoundaryType.ARMHOLE, h) for h in holes]
    return TriMesh(verts, faces), loops, holes


def _build_pants(p: PantsParams):
    two_m = 2 * p.half_segments
    t_hip = np.linspace(0.0, 1.0, p.hip_rings)
    ys = p.waist_y + (p.crotch_y - p.waist_y) * t_hip
    radii = np.full(p.hip_rings, p.waist_radius)
    rings = [_ring_points(ys[i], radii[i], radii[i] * p.depth_ratio, two_m) for i in range(p.hip_rings)]
    verts = [np.concatenate(rings, axis=0)]
    faces = [_lattice_faces(p.hip_rings, two_m)]
    n_base = p.hip_rings * two_m
    hip_ring = np.arange(two_m) + (p.hip_rings - 1) * two_m

    # crotch seam between the front (i=0) and back (i=m) hip columns
    m = p.half_segments
    front = verts[0][hip_ring[0]]
    back = verts[0][hip_ring[m]]
    seam_t = (np.arange(p.seam_points) + 1.0) / (p.seam_points + 1.0)
    seam = (1 - seam_t)[:, None] * front + seam_t[:, None] * back
    seam[:, 1] = p.crotch_y - 0.012
    seam_ids = n_base + np.arange(p.seam_points)
    verts.append(seam)
    next_free = n_base + p.seam_points

    all_faces = np.concatenate(faces, axis=0)
    cuff_rings = []
    for side in (0, 1):
        if side == 0:
            cycle = np.concatenate([hip_ring[0:m + 1], seam_ids[::-1]])
        else:
            cycle = np.concatenate([hip_ring[m:], hip_ring[:1], seam_ids])
        cycle_pts = np.concatenate(verts, axis=0)[cycle]
        cx = cycle_pts[:, 0].mean()
        phi = np.arctan2(cycle_pts[:, 2], cycle_pts[:, 0] - cx)
        n_leg = len(cycle)
        t_leg = np.linspace(0.0, 1.0, p.leg_rings + 1)[1:]
        leg_y = p.crotch_y + (p.cuff_y - p.crotch_y) * t_leg
        blend = _smoothstep(t_leg / 0.4)
        env = np.sin(np.pi * t_leg) ** 0.8
        ring_ids = [cycle]
        for k in range(p.leg_rings):
            r_k = p.leg_radius + (p.cuff_radius - p.leg_radius) * t_leg[k]
            wr = p.wrinkle_amp * env[k] * np.sin(p.wrinkle_freq * phi + p.wrinkle_phase + side * 1.3)
            circle = np.stack([cx + (r_k + wr) * np.cos(phi),
                               np.full(n_leg, leg_y[k]),
                               (r_k + wr) * np.sin(phi)], axis=1)
            dropped = cycle_pts.copy()
            dropped[:, 1] = leg_y[k]
            pts = (1 - blend[k]) * dropped + blend[k] * circle
            ids = next_free + np.arange(n_leg)
            next_free += n_leg
            verts.append(pts)
            ring_ids.append(ids)
        reverse = _strip_orientation(all_faces, ring_ids[0])
        for a, b in zip(ring_ids[:-1], ring_ids[1:]):
            all_faces = np.concatenate([all_faces, _strip_faces(a, b, reverse)], axis=0)
        cuff_rings.append(ring_ids[-1])

    verts = np.concatenate(verts, axis=0)
    all_faces = _orient_open_tube(verts, all_faces)
    loops = [
        (BoundaryType.WAISTLINE, np.arange(two_m)),
        (BoundaryType.PANT_CUFF, cuff_rings[0]),
        (BoundaryType.PANT_CUFF, cuff_rings[1]),
    ]
    return TriMesh(verts, all_faces), loops


def _build_long_sleeve(p: LongSleeveParams):
    mesh, loops, holes = _build_vest(p.vest, keep_armhole_loops=False)
    verts = [mesh.vertices]
    all_faces = mesh.faces
    next_free = mesh.n_vertices
    cuff_loops = []
    for hole, sign in zip(holes, (1.0, -1.0)):
        cycle_pts = mesh.vertices[hole]
        ay, az = cycle_pts[:, 1].mean(), cycle_pts[:, 2].mean()
        x0 = cycle_pts[:, 0].mean()
        phi = np.arctan2(cycle_pts[:, 2] - az, cycle_pts[:, 1] - ay)
        n_s = len(hole)
        t_s = np.linspace(0.0, 1.0, p.sleeve_rings + 1)[1:]
        blend = _smoothstep(t_s / 0.35)
        env = np.sin(np.pi * t_s) ** 0.8
        ring_ids = [hole]
        reverse = None
        for k in range(p.sleeve_rings):
            x_k = x0 * (1 - t_s[k]) + sign * p.cuff_x * t_s[k]
            r_k = p.sleeve_radius + (p.cuff_radius - p.sleeve_radius) * t_s[k]
            wr = p.wrinkle_amp * env[k] * np.sin(p.wrinkle_freq * phi + p.wrinkle_phase)
            circle = np.stack([np.full(n_s, x_k),
                               ay + (r_k + wr) * np.cos(phi),
                               az + (r_k + wr) * np.sin(phi)], axis=1)
            shifted = cycle_pts.copy()
            shifted[:, 0] = x_k
            pts = (1 - blend[k]) * shifted + blend[k] * circle
            ids = next_free + np.arange(n_s)
            next_free += n_s
            verts.append(pts)
            ring_ids.append(ids)
        for a, b in zip(ring_ids[:-1], ring_ids[1:]):
            if reverse is None:
                reverse = _strip_orientation(all_faces, a)
            all_faces = np.concatenate([all_faces, _strip_faces(a, b, reverse)], axis=0)
        cuff_loops.append(ring_ids[-1])
    verts = np.concatenate(verts, axis=0)
    loops = loops + [(BoundaryType.SLEEVE_CUFF, c) for c in cuff_loops]
    return TriMesh(verts, all_faces), loops


_PARAM_TYPES = {
    GarmentCategory.SKIRT: SkirtParams,
    GarmentCategory.UPPER_NO_SLEEVE: VestParams,
    GarmentCategory.PANTS_LONG: PantsParams,
    GarmentCategory.UPPER_LONG_SLEEVE: LongSleeveParams,
}


def procedural_template(category: GarmentCategory, body: SkinnedBody,
                        params=None) -> GarmentTemplate:
    """Generate a template mesh with typed loops, bound to the given body."""
    if category not in PROCEDURAL_CATEGORIES:
        supported = ", ".join(CATEGORY_NAMES[c] for c in PROCEDURAL_CATEGORIES)
        raise TemplateError(
            f"no procedural generator for {CATEGORY_NAMES[category]}; supported: {supported}")
    if params is None:
        params = _PARAM_TYPES[category]()
    if category == GarmentCategory.SKIRT:
        mesh, loops = _build_skirt(params)
    elif category == GarmentCategory.UPPER_NO_SLEEVE:
        mesh, loops, _ = _build_vest(params)
    elif category == GarmentCategory.PANTS_LONG:
        mesh, loops = _build_pants(params)
    else:
        mesh, loops = _build_long_sleeve(params)
    mesh = TriMesh(_push_clear_of_body(mesh.vertices, params.body_clearance), mesh.faces)
    label = "lower" if category in LOWER_CATEGORIES else "upper"
    binding = bone_weights(mesh.vertices, body.joints, body.n_joints)
    return GarmentTemplate(
        category=category, mesh=mesh, boundaries=loops, semantic_label=label,
        joint_names=list(body.joint_names), binding=binding,
    ).validate()


# ---------------------------------------------------------------------------
# annotation JSON + OBJ persistence


def save_template(mesh_path, annotation_path, template: GarmentTemplate) -> None:
    save_obj(mesh_path, template.mesh)
    doc = {
        "category": CATEGORY_NAMES[template.category],
        "semantic": template.semantic_label,
        "boundaries": [
            {"type": BOUNDARY_NAMES[t], "loop": [int(i) for i in loop]}
            for t, loop in template.boundaries
        ],
        "binding": {
            "joints": list(template.joint_names),
            "weights": template.binding.tolist(),
        },
    }
    with open(annotation_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_template(mesh_path, annotation_path) -> GarmentTemplate:
    mesh = load_obj(mesh_path)
    with open(annotation_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        category = CATEGORY_BY_NAME[doc["category"]]
        semantic = doc["semantic"]
        boundaries = [(BOUNDARY_BY_NAME[b["type"]], np.asarray(b["loop"], dtype=np.int64))
                      for b in doc["boundaries"]]
        joints = list(doc["binding"]["joints"])
        weights = np.asarray(doc["binding"]["weights"], dtype=np.float64)
    except KeyError as exc:
        raise TemplateError(f"annotation missing or unknown key: {exc}") from exc
    if semantic not in ("upper", "lower"):
        raise TemplateError(f"semantic label must be upper or lower, got {semantic!r}")
    return GarmentTemplate(
        category=category, mesh=mesh, boundaries=boundaries,
        semantic_label=semantic, joint_names=joints, binding=weights,
    ).validate()


# ---------------------------------------------------------------------------
# collars


def procedural_collar(name: str, neckline_points: np.ndarray):
    """Collar band authored on a neckline ring.

    Returns (collar mesh, correspondence (K, 2): collar vertex -> neckline position
    index). Supported names: band, rolled.
    """
    n = len(neckline_points)
    center = neckline_points.mean(axis=0)
    radial = neckline_points - center
    radial[:, 1] = 0.0
    radial /= np.maximum(np.linalg.norm(radial, axis=1, keepdims=True), 1e-12)
    if name == "band":
        offsets = [(0.0, 0.0), (0.004, 0.022), (0.008, 0.042)]
    elif name == "rolled":
        offsets = [(0.0, 0.0), (0.006, 0.024), (0.020, 0.030), (0.030, 0.018)]
    else:
        raise TemplateError(f"unknown collar {name!r}; supported: band, rolled")
    rings = [neckline_points + dr * radial + np.array([0.0, dy, 0.0]) for dr, dy in offsets]
    verts = np.concatenate(rings, axis=0)
    faces = _orient_open_tube(verts - center, _lattice_faces(len(rings), n))
    correspondence = np.stack([np.arange(n), np.arange(n)], axis=1)
    return TriMesh(verts, faces), correspondence


def attach_collar(garment: TriMesh, neckline_loop: np.ndarray, collar: TriMesh,
                  correspondence: np.ndarray) -> TriMesh:
    """Rigidly align a collar to the neckline, relax it bi-harmonically, merge.

    correspondence rows are (collar vertex id, neckline loop position index).
    The corresponded collar ring lands exactly on the neckline vertices.
    """
    correspondence = np.asarray(correspondence, dtype=np.int64)
    if len(correspondence) < 3:
        raise TemplateError("collar correspondence covers fewer than 3 neckline vertices")
    src = collar.vertices[correspondence[:, 0]]
    dst = garment.vertices[neckline_loop[correspondence[:, 1]]]

    # least-squares rigid fit (rotation + translation)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    H = (src - mu_s).T @ (dst - mu_d)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    aligned = (collar.vertices - mu_s) @ R.T + mu_d

    lap = graph_laplacian(collar)
    constraints = {int(c): dst[k] for k, c in enumerate(correspondence[:, 0])}
    relaxed = solve_constrained_bilaplacian(lap, constraints, aligned)

    # keep the rigid alignment where the solve has no constraints to work from
    merged_verts = np.concatenate([garment.vertices, relaxed], axis=0)
    merged_faces = np.concatenate([garment.faces, collar.faces + garment.n_vertices], axis=0)
    return TriMesh(merged_verts, merged_faces)