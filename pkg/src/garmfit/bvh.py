"""Bounding-volume hierarchy for exact point-to-mesh distance queries."""

from __future__ import annotations

import numpy as np

from .geometry import TriMesh


def closest_points_on_triangles(tri_a, tri_b, tri_c, points):
    """Closest point on each triangle (a[i], b[i], c[i]) to points[i].

    Vectorized region classification (Ericson, Real-Time Collision Detection).
    All inputs (N, 3); returns (N, 3).
    """
    a, b, c, p = (np.asarray(x, dtype=np.float64) for x in (tri_a, tri_b, tri_c, points))
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp_ = p - c
    d5 = np.einsum("ij,ij->i", ab, cp_)
    d6 = np.einsum("ij,ij->i", ac, cp_)

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def settle(mask, value):
        m = mask & ~done
        out[m] = value[m] if value.ndim == 2 else value
        done[m] = True

    settle((d1 <= 0) & (d2 <= 0), a)  # vertex a
    settle((d3 >= 0) & (d4 <= d3), b)  # vertex b

    vc = d1 * d4 - d3 * d2
    denom_ab = d1 - d3
    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = np.where(denom_ab != 0, d1 / denom_ab, 0.0)
    settle((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v_ab[:, None] * ab)  # edge ab

    settle((d6 >= 0) & (d5 <= d6), c)  # vertex c

    vb = d5 * d2 - d1 * d6
    denom_ac = d2 - d6
    with np.errstate(divide="ignore", invalid="ignore"):
        w_ac = np.where(denom_ac != 0, d2 / denom_ac, 0.0)
    settle((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w_ac[:, None] * ac)  # edge ac

    va = d3 * d6 - d5 * d4
    denom_bc = (d4 - d3) + (d5 - d6)
    with np.errstate(divide="ignore", invalid="ignore"):
        w_bc = np.where(denom_bc != 0, (d4 - d3) / denom_bc, 0.0)
    settle((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), b + w_bc[:, None] * (c - b))  # edge bc

    # interior
    denom = va + vb + vc
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(denom != 0, vb / denom, 0.0)
        w = np.where(denom != 0, vc / denom, 0.0)
    inner = a + v[:, None] * ab + w[:, None] * ac
    out[~done] = inner[~done]
    return out


class DistanceAccelerator:
    """Median-split AABB tree over mesh triangles.

    Queries return the exact nearest triangle (matches brute force to 1e-10).
    Immutable after construction; queries are pure.
    """

    LEAF_SIZE = 8

    def __init__(self, mesh: TriMesh):
        mesh.check_indices()
        self.mesh = mesh
        f = mesh.faces
        v = mesh.vertices
        self._tri = v[f]  # (F, 3, 3)
        lo = self._tri.min(axis=1)
        hi = self._tri.max(axis=1)
        centroids = self._tri.mean(axis=1)

        # flat node arrays: bounds, children (-1 for leaf), triangle slice
        n_tris = len(f)
        order = np.arange(n_tris)
        node_lo, node_hi, node_left, node_right, node_start, node_end = [], [], [], [], [], []

        def build(idx):
            node = len(node_lo)
            node_lo.append(lo[idx].min(axis=0))
            node_hi.append(hi[idx].max(axis=0))
            node_left.append(-1)
            node_right.append(-1)
            node_start.append(-1)
            node_end.append(-1)
            if len(idx) <= self.LEAF_SIZE:
                node_start[node] = len(self._leaf_order)
                self._leaf_order.extend(idx.tolist())
                node_end[node] = len(self._leaf_order)
                return node
            extent = node_hi[node] - node_lo[node]
            axis = int(np.argmax(extent))
            half = len(idx) // 2
            part = idx[np.argsort(centroids[idx, axis], kind="stable")]
            node_left[node] = build(part[:half])
            node_right[node] = build(part[half:])
            return node

        self._leaf_order: list[int] = []
        import sys

        old_limit = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old_limit, 10000))
        try:
            build(order)
        finally:
            sys.setrecursionlimit(old_limit)

        self.node_lo = np.asarray(node_lo)
        self.node_hi = np.asarray(node_hi)
        self.node_left = np.asarray(node_left, dtype=np.int64)
        self.node_right = np.asarray(node_right, dtype=np.int64)
        self.node_start = np.asarray(node_start, dtype=np.int64)
        self.node_end = np.asarray(node_end, dtype=np.int64)
        self.leaf_order = np.asarray(self._leaf_order, dtype=np.int64)
        del self._leaf_order

    def _aabb_dist_sq(self, node, p):
        d = np.maximum(self.node_lo[node] - p, 0.0) + np.maximum(p - self.node_hi[node], 0.0)
        return float(d @ d)

    def query(self, point) -> tuple[float, np.ndarray, int]:
        """(distance, closest point, triangle id) for one query point."""
        p = np.asarray(point, dtype=np.float64)
        best_sq = np.inf
        best_cp = None
        best_tri = -1
        stack = [0]
        while stack:
            node = stack.pop()
            if self._aabb_dist_sq(node, p) >= best_sq:
                continue
            left = self.node_left[node]
            if left < 0:
                ids = self.leaf_order[self.node_start[node]:self.node_end[node]]
                tri = self._tri[ids]
                pts = np.broadcast_to(p, (len(ids), 3))
                cp = closest_points_on_triangles(tri[:, 0], tri[:, 1], tri[:, 2], pts)
                d_sq = np.einsum("ij,ij->i", cp - pts, cp - pts)
                k = int(np.argmin(d_sq))
                if d_sq[k] < best_sq:
                    best_sq = float(d_sq[k])
                    best_cp = cp[k]
                    best_tri = int(ids[k])
            else:
                right = self.node_right[node]
                dl = self._aabb_dist_sq(left, p)
                dr = self._aabb_dist_sq(right, p)
                # visit nearer child first
                if dl <= dr:
                    stack.append(right)
                    stack.append(left)
                else:
                    stack.append(left)
                    stack.append(right)
        return float(np.sqrt(best_sq)), best_cp, best_tri

    def distances(self, points) -> np.ndarray:
        """Unsigned distances for a batch of points."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.array([self.query(p)[0] for p in pts])


def point_to_mesh_distance(p, accel: DistanceAccelerator) -> tuple[float, np.ndarray, int]:
    """Unsigned distance from a point to the accelerated mesh."""
    return accel.query(p)


def brute_force_distance(mesh: TriMesh, p) -> float:
    """Reference nearest-triangle distance by scanning every triangle."""
    tri = mesh.vertices[mesh.faces]
    pts = np.broadcast_to(np.asarray(p, dtype=np.float64), (len(tri), 3))
    cp = closest_points_on_triangles(tri[:, 0], tri[:, 1], tri[:, 2], pts)
    return float(np.sqrt(np.einsum("ij,ij->i", cp - pts, cp - pts).min()))
