"""Triangle meshes, polylines, and the small geometry kernel everything else uses.

Scene convention: scenes are normalized so the body is about one unit tall,
y is up, and all meshes use counter-clockwise outward face orientation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

DEGENERATE_AREA_SQ = 1e-12


class MeshError(ValueError):
    """Invalid mesh topology or geometry."""


@dataclass
class TriMesh:
    """Indexed triangle mesh.

    vertices: (V, 3) float array, faces: (F, 3) int array, CCW outward.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError("vertices must be (V, 3)")
        if self.faces.size and (self.faces.ndim != 2 or self.faces.shape[1] != 3):
            raise MeshError("faces must be (F, 3)")
        if self.faces.size == 0:
            self.faces = self.faces.reshape(0, 3)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def check_indices(self) -> "TriMesh":
        """Check face index range and repeated indices. Returns self."""
        if self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= self.n_vertices:
                raise MeshError("face index out of range")
            f = self.faces
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise MeshError("face references the same vertex twice")
        return self

    def validate(self) -> "TriMesh":
        """check_indices plus the zero-area face gate (squared area > 1e-12).

        Applied to meshes entering from disk or authored data. Iso-surface
        extraction output is exempt: marching cubes legitimately emits sliver
        triangles, and every consumer here tolerates them.
        """
        self.check_indices()
        if self.faces.size:
            bad = self.face_areas_sq() <= DEGENERATE_AREA_SQ
            if np.any(bad):
                raise MeshError(f"{int(bad.sum())} zero-area face(s), first at index {int(np.argmax(bad))}")
        return self

    def face_cross(self) -> np.ndarray:
        """Per-face cross product (edge1 x edge2); norm is twice the face area."""
        v = self.vertices
        f = self.faces
        e1 = v[f[:, 1]] - v[f[:, 0]]
        e2 = v[f[:, 2]] - v[f[:, 0]]
        return np.cross(e1, e2)

    def face_areas_sq(self) -> np.ndarray:
        c = self.face_cross()
        return 0.25 * np.einsum("ij,ij->i", c, c)

    def face_areas(self) -> np.ndarray:
        return np.sqrt(self.face_areas_sq())

    def edges(self, directed: bool = False) -> np.ndarray:
        """(E, 2) array of edges; undirected edges are sorted pairs, deduplicated."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=0)
        if directed:
            return e
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges()) + self.n_faces

    def is_closed(self) -> bool:
        """True when every undirected edge is shared by exactly two faces."""
        if self.n_faces == 0:
            return False
        e = np.sort(self.edges(directed=True), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def boundary_edges(self) -> np.ndarray:
        """Directed edges that belong to exactly one face."""
        e = self.edges(directed=True)
        key = np.sort(e, axis=1)
        _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        return e[counts[inv] == 1]

    def boundary_loops(self) -> list[np.ndarray]:
        """Boundary cycles as ordered vertex-index arrays (mesh winding order)."""
        be = self.boundary_edges()
        nxt = {int(a): int(b) for a, b in be}
        loops = []
        seen = set()
        for start in sorted(nxt):
            if start in seen:
                continue
            loop = [start]
            seen.add(start)
            cur = nxt[start]
            while cur != start:
                loop.append(cur)
                seen.add(cur)
                if cur not in nxt:
                    raise MeshError("open boundary chain (mesh is not manifold along its boundary)")
                cur = nxt[cur]
            loops.append(np.asarray(loop, dtype=np.int64))
        return loops

    def copy(self) -> "TriMesh":
        return TriMesh(self.vertices.copy(), self.faces.copy())

    def translated(self, t) -> "TriMesh":
        return TriMesh(self.vertices + np.asarray(t, dtype=np.float64), self.faces.copy())


@dataclass
class Polyline3:
    """Ordered 3D point chain, optionally closed."""

    points: np.ndarray
    closed: bool = False

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or len(self.points) < 2:
            raise ValueError("polyline needs at least 2 points of dimension 3")
        seg = np.diff(self.points, axis=0)
        if np.any(np.einsum("ij,ij->i", seg, seg) <= 1e-24):
            raise ValueError("consecutive polyline points must be distinct")

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Segment start/end arrays, including the closing segment when closed."""
        a = self.points
        b = np.roll(self.points, -1, axis=0)
        if not self.closed:
            a, b = a[:-1], b[:-1]
        return a, b

    def length(self) -> float:
        a, b = self.segments()
        return float(np.linalg.norm(b - a, axis=1).sum())

    def resampled(self, max_spacing: float) -> np.ndarray:
        """Points along the polyline with spacing at most max_spacing (keeps originals)."""
        a, b = self.segments()
        out = []
        for p, q in zip(a, b):
            n = max(1, int(np.ceil(np.linalg.norm(q - p) / max_spacing)))
            t = np.arange(n, dtype=np.float64)[:, None] / n
            out.append(p + t * (q - p))
        if not self.closed:
            out.append(self.points[-1:])
        return np.concatenate(out, axis=0)


@dataclass
class SparseOperator:
    """Square sparse operator; wraps a scipy CSR matrix."""

    matrix: sp.csr_matrix

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x


def vertex_normals(mesh: TriMesh) -> np.ndarray:
    """Area-weighted unit vertex normals.

    Isolated vertices get (0, 0, 1) and a warning; faces are assumed valid.
    """
    acc = np.zeros((mesh.n_vertices, 3))
    cross = mesh.face_cross()  # norm = 2 * area, so accumulation is area weighted
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], cross)
    norms = np.linalg.norm(acc, axis=1)
    isolated = norms <= 1e-300
    if np.any(isolated):
        warnings.warn(f"{int(isolated.sum())} isolated vertex/vertices given fixed normal (0,0,1)")
        acc[isolated] = (0.0, 0.0, 1.0)
        norms[isolated] = 1.0
    return acc / norms[:, None]


def graph_laplacian(mesh: TriMesh) -> SparseOperator:
    """Uniform (combinatorial) graph Laplacian: diag(deg) - adjacency."""
    e = mesh.edges()
    n = mesh.n_vertices
    i = np.concatenate([e[:, 0], e[:, 1]])
    j = np.concatenate([e[:, 1], e[:, 0]])
    data = -np.ones(len(i))
    adj = sp.coo_matrix((data, (i, j)), shape=(n, n)).tocsr()
    deg = -np.asarray(adj.sum(axis=1)).ravel()
    lap = sp.diags(deg) + adj
    return SparseOperator(lap.tocsr())


def polyline_distances(points: np.ndarray, polyline: Polyline3) -> tuple[np.ndarray, np.ndarray]:
    """Exact distance from each point to the polyline, with closest points.

    Returns (distances (P,), closest points (P, 3)).
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    a, b = polyline.segments()
    d = b - a  # (S, 3)
    len_sq = np.einsum("ij,ij->i", d, d)
    # (P, S) parameter of the perpendicular foot, clamped to the segment
    ap = points[:, None, :] - a[None, :, :]
    t = np.einsum("psj,sj->ps", ap, d) / len_sq[None, :]
    t = np.clip(t, 0.0, 1.0)
    cp = a[None, :, :] + t[:, :, None] * d[None, :, :]
    diff = points[:, None, :] - cp
    dist_sq = np.einsum("psj,psj->ps", diff, diff)
    best = np.argmin(dist_sq, axis=1)
    rows = np.arange(len(points))
    return np.sqrt(dist_sq[rows, best]), cp[rows, best]


def point_to_polyline_distance(p, polyline: Polyline3) -> float:
    d, _ = polyline_distances(np.asarray(p, dtype=np.float64)[None, :], polyline)
    return float(d[0])


def load_obj(path, strict: bool = True) -> TriMesh:
    """Read an OBJ file (positions and faces only; polygons fan-triangulated).

    strict applies the zero-area face gate; loaders of extraction products
    (marching-cubes meshes) pass strict=False.
    """
    verts = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("v "):
                parts = line.split()
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif line.startswith("f "):
                idx = [int(tok.split("/")[0]) for tok in line.split()[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    mesh = TriMesh(np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64))
    return mesh.validate() if strict else mesh.check_indices()


def save_obj(path, mesh: TriMesh) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
