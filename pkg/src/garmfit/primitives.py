"""Small closed-mesh primitives used by tests and the synthetic scene builder."""

from __future__ import annotations

import numpy as np

from .geometry import TriMesh


def unit_box(center=(0.0, 0.0, 0.0), size=1.0) -> TriMesh:
    """Axis-aligned box as 12 triangles with outward orientation."""
    c = np.asarray(center, dtype=np.float64)
    h = np.broadcast_to(np.asarray(size, dtype=np.float64), (3,)) / 2.0
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    verts = c + signs * h
    # index = 4*ix + 2*iy + iz with i in {0, 1}
    quads = [
        (0, 1, 3, 2, False),  # x = -1, normal -x
        (4, 5, 7, 6, True),   # x = +1, normal +x
        (0, 1, 5, 4, True),   # y = -1, normal -y
        (2, 3, 7, 6, False),  # y = +1, normal +y
        (0, 2, 6, 4, False),  # z = -1, normal -z
        (1, 3, 7, 5, True),   # z = +1, normal +z
    ]
    faces = []
    for a, b, c2, d, flip in quads:
        tri1 = [a, b, c2]
        tri2 = [a, c2, d]
        if flip:
            tri1 = tri1[::-1]
            tri2 = tri2[::-1]
        faces.extend([tri1, tri2])
    mesh = TriMesh(verts, np.asarray(faces, dtype=np.int64)).validate()
    return _oriented_outward(mesh, c)


def icosphere(subdivisions: int = 2, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Subdivided icosahedron projected onto the sphere."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    for _ in range(subdivisions):
        edge_mid: dict[tuple[int, int], int] = {}
        new_faces = []
        vlist = verts.tolist()

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in edge_mid:
                m = (np.asarray(vlist[a]) + np.asarray(vlist[b])) / 2.0
                m /= np.linalg.norm(m)
                edge_mid[key] = len(vlist)
                vlist.append(m.tolist())
            return edge_mid[key]

        for a, b, c in faces:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            new_faces.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]])
        verts = np.asarray(vlist)
        faces = np.asarray(new_faces, dtype=np.int64)
    mesh = TriMesh(verts * radius + np.asarray(center, dtype=np.float64), faces)
    return mesh.validate()


def tube_lattice(rings: np.ndarray, close_loop_axis: bool = True):
    """Faces of an (n_rings, n_around) vertex lattice forming an open tube.

    rings is (R, N, 3); returns flattened vertices and CCW faces so that
    normals point away from the tube axis when rings are ordered bottom-up
    and each ring is counter-clockwise seen from above.
    """
    rings = np.asarray(rings, dtype=np.float64)
    n_r, n_a, _ = rings.shape
    verts = rings.reshape(-1, 3)
    faces = []
    for r in range(n_r - 1):
        for a in range(n_a if close_loop_axis else n_a - 1):
            a2 = (a + 1) % n_a
            v00 = r * n_a + a
            v01 = r * n_a + a2
            v10 = (r + 1) * n_a + a
            v11 = (r + 1) * n_a + a2
            faces.append([v00, v01, v11])
            faces.append([v00, v11, v10])
    return verts, np.asarray(faces, dtype=np.int64)


def _oriented_outward(mesh: TriMesh, interior_point) -> TriMesh:
    """Flip faces whose normal points toward the given interior point."""
    v = mesh.vertices
    f = mesh.faces.copy()
    centers = v[f].mean(axis=1)
    normals = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    inward = np.einsum("ij,ij->i", normals, centers - np.asarray(interior_point)) < 0
    f[inward] = f[inward][:, ::-1]
    return TriMesh(v, f)


def capped(mesh: TriMesh) -> TriMesh:
    """Close every boundary loop with a triangle fan to the loop centroid.

    Used to give open garment shells a well-defined solid for occupancy; cap
    winding opposes the adjacent surface so the result stays consistently
    oriented.
    """
    loops = mesh.boundary_loops()
    if not loops:
        return mesh
    verts = [mesh.vertices]
    faces = [mesh.faces]
    next_idx = mesh.n_vertices
    for loop in loops:
        centroid = mesh.vertices[loop].mean(axis=0)
        verts.append(centroid[None, :])
        n = len(loop)
        # boundary_loops follows the face winding, so (b, a, centroid) closes it
        fan = np.stack([np.roll(loop, -1), loop, np.full(n, next_idx)], axis=1)
        faces.append(fan)
        next_idx += 1
    return TriMesh(np.concatenate(verts, axis=0), np.concatenate(faces, axis=0))
