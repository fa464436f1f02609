"""Iso-surface extraction from scalar fields over axis-aligned regions."""

from __future__ import annotations

import warnings

import numpy as np
from skimage import measure

from .fields import BoundaryCylinderField, GridField, ScalarField, bake_to_grid
from .geometry import TriMesh


def marching_cubes(field: ScalarField, region_lo, region_hi, resolution,
                   iso: float | None = None) -> TriMesh:
    """Extract the iso-level set of a field over a box as a triangle mesh.

    resolution is the node count per axis (scalar or triple, >= 2); iso
    defaults to the field convention's level. Faces are oriented outward
    (toward the exterior side of the convention). A field with no crossing
    inside the region yields an empty mesh.
    """
    lo = np.asarray(region_lo, dtype=np.float64)
    hi = np.asarray(region_hi, dtype=np.float64)
    res = np.broadcast_to(np.asarray(resolution, dtype=np.int64), (3,)).copy()
    if np.any(res < 2):
        raise ValueError("resolution must be at least 2 per axis")
    if np.any(hi <= lo):
        raise ValueError("region must have positive extent")
    if iso is None:
        iso = field.convention.iso

    spacing_vec = (hi - lo) / (res - 1)
    if isinstance(field, GridField) and np.allclose(field.origin, lo) \
            and np.all(field.dims == res) and np.allclose(spacing_vec, field.spacing):
        volume = field.values
    else:
        # anisotropic sampling: evaluate on the lattice directly
        xs = lo[0] + np.arange(res[0]) * spacing_vec[0]
        ys = lo[1] + np.arange(res[1]) * spacing_vec[1]
        zs = lo[2] + np.arange(res[2]) * spacing_vec[2]
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
        pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
        volume = field.eval(pts).reshape(tuple(res))

    vmin = float(volume.min())
    vmax = float(volume.max())
    if not (vmin < iso < vmax):
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    direction = "descent" if field.convention.inside_above else "ascent"
    verts, faces, _, _ = measure.marching_cubes(
        volume, level=iso, spacing=tuple(spacing_vec), gradient_direction=direction)
    verts = verts + lo
    # the extractor winds faces toward the interior side; flip for CCW outward
    faces = faces[:, ::-1].astype(np.int64)
    return _weld(verts, faces)


def _weld(verts: np.ndarray, faces: np.ndarray) -> TriMesh:
    """Merge coincident vertices and drop the sliver faces that collapse."""
    uniq, inverse = np.unique(verts, axis=0, return_inverse=True)
    faces = inverse.ravel()[faces]
    keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    return TriMesh(uniq, faces[keep])


def extract_boundary_isosurface(field: BoundaryCylinderField, region_lo, region_hi,
                                resolution) -> TriMesh:
    """Tube mesh around a boundary curve, inflating the radius when the grid
    is too coarse to resolve it (extraction only; the field is unchanged)."""
    lo = np.asarray(region_lo, dtype=np.float64)
    hi = np.asarray(region_hi, dtype=np.float64)
    res = np.broadcast_to(np.asarray(resolution, dtype=np.int64), (3,))
    cell = float(((hi - lo) / (res - 1)).max())
    radius = field.radius
    if radius < 2.0 * cell:
        radius = 2.0 * cell
        warnings.warn(
            f"boundary radius {field.radius:g} below 2 cells ({2 * cell:g}); "
            f"inflating to {radius:g} for extraction only")
    inflated = BoundaryCylinderField(field.curve, radius)
    return marching_cubes(inflated, lo, hi, res)
