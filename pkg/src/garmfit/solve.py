"""Constrained bi-Laplacian solve used for boundary-driven mesh deformation."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from .geometry import SparseOperator


class SingularSystemError(RuntimeError):
    """The reduced system has a free component untouched by any constraint."""


def solve_constrained_bilaplacian(
    op: SparseOperator,
    constrained: dict[int, np.ndarray],
    free_init: np.ndarray | None = None,
) -> np.ndarray:
    """Bi-harmonic solve with hard positional constraints.

    Solves min ||L d||^2 over the displacement field d = x - free_init with
    d[i] = constrained[i] - free_init[i] held exactly (L^2 d = 0 on free
    vertices, by Dirichlet elimination into a direct sparse factorization).
    With free_init omitted it reduces to min ||L x||^2 with x[i] pinned.

    The displacement form makes identity constraints reproduce free_init
    exactly and makes a rigid translation of all constraints translate every
    free vertex by the same amount.

    Raises SingularSystemError when a free connected component has no path to
    any constrained vertex (naming one vertex of the offending component).
    """
    if not constrained:
        raise ValueError("constraint set must be non-empty")
    L = op.matrix.tocsr()
    n = L.shape[0]
    cons_idx = np.asarray(sorted(constrained), dtype=np.int64)
    if cons_idx.min() < 0 or cons_idx.max() >= n:
        raise ValueError("constrained index out of range")
    cons_vals = np.asarray([constrained[int(i)] for i in cons_idx], dtype=np.float64)
    if cons_vals.ndim == 1:
        cons_vals = cons_vals[:, None]
    dim = cons_vals.shape[1]

    if free_init is None:
        base = np.zeros((n, dim))
    else:
        base = np.asarray(free_init, dtype=np.float64).reshape(n, dim).copy()
    cons_d = cons_vals - base[cons_idx]

    free_mask = np.ones(n, dtype=bool)
    free_mask[cons_idx] = False
    free_idx = np.nonzero(free_mask)[0]

    out = base.copy()
    out[cons_idx] = cons_vals
    if len(free_idx) == 0:
        return out

    # a free component with no path to a constraint makes the reduced block singular
    adj = L.copy()
    adj.setdiag(0)
    adj.eliminate_zeros()
    _, labels = csgraph.connected_components(adj, directed=False)
    anchored = set(np.unique(labels[cons_idx]).tolist())
    for lab in np.unique(labels[free_idx]):
        if lab not in anchored:
            bad = int(free_idx[labels[free_idx] == lab][0])
            raise SingularSystemError(
                f"free component containing vertex {bad} has no constrained vertex")

    L2 = (L @ L).tocsr()
    K = L2[free_idx][:, free_idx].tocsc()
    rhs = -L2[free_idx][:, cons_idx] @ cons_d

    solver = spla.splu(K)
    d_free = solver.solve(rhs)
    if not np.all(np.isfinite(d_free)):
        raise SingularSystemError("reduced bi-Laplacian system is numerically singular")

    res = np.linalg.norm(K @ d_free - rhs)
    scale = max(np.linalg.norm(rhs), 1e-30)
    if res / scale > 1e-8 and res > 1e-8:
        raise SingularSystemError(f"reduced solve residual too large: {res / scale:.3e}")

    out[free_idx] = base[free_idx] + d_free
    return out
