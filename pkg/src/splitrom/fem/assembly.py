"""Operator assembly for P1/P2 spaces.

All volume integrals use the 6-point degree-4 triangle rule: exact for P2
mass and stiffness, P2xP1 divergence/gradient couplings and P1 operators;
the convection form (degree 5 for P2 data) is integrated inexactly. Edge
integrals use 3-point Gauss (exact to degree 5).
"""

import numpy as np
import scipy.sparse as sp

from ..errors import DimensionMismatch
from .quadrature import GAUSS3_S, GAUSS3_W, TRI6_BARY, TRI6_WEIGHTS, shape_functions
from .spaces import DofMap, FEField, OutletSpace


def barycentric_gradients(mesh):
    """Per-triangle areas (nt,) and constant gradients of the barycentric coordinates (nt, 3, 2)."""
    p = mesh.vertices[mesh.triangles]
    x, y = p[:, :, 0], p[:, :, 1]
    area = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    g = np.empty((len(p), 3, 2))
    for k in range(3):
        i, j = (k + 1) % 3, (k + 2) % 3
        g[:, k, 0] = (y[:, i] - y[:, j]) / (2 * area)
        g[:, k, 1] = (x[:, j] - x[:, i]) / (2 * area)
    return area, g


def _physical_gradients(dN, glam):
    # dN: (nq, nb, 3), glam: (nt, 3, 2) -> (nt, nq, nb, 2)
    return np.einsum("qbk,tkd->tqbd", dN, glam)


def _scatter(row_nodes, col_nodes, local, shape):
    nt, nr, nc = local.shape
    rows = np.broadcast_to(row_nodes[:, :, None], (nt, nr, nc))
    cols = np.broadcast_to(col_nodes[:, None, :], (nt, nr, nc))
    A = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def _values(field, dofmap):
    if isinstance(field, FEField):
        if field.dofmap.mesh is not dofmap.mesh or field.dofmap.space != dofmap.space:
            raise DimensionMismatch("field lives on a different space or mesh")
        return field.values
    vals = np.asarray(field, dtype=float)
    if vals.shape != (dofmap.dof_count,):
        raise DimensionMismatch(f"expected {dofmap.dof_count} values, got {vals.shape}")
    return vals


def _vectorize(A, dofmap):
    return sp.block_diag((A, A), format="csr") if dofmap.n_comp == 2 else A


def _scalar_parts(dofmap):
    N, dN = shape_functions(dofmap.degree, TRI6_BARY)
    area, glam = barycentric_gradients(dofmap.mesh)
    return N, dN, area, glam


def assemble_mass(dofmap: DofMap):
    """L2 Gram matrix of the space (block diagonal for vector spaces)."""
    N, _, area, _ = _scalar_parts(dofmap)
    ref = np.einsum("q,qi,qj->ij", TRI6_WEIGHTS, N, N)
    local = area[:, None, None] * ref[None]
    n = dofmap.n_nodes
    return _vectorize(_scatter(dofmap.cell_nodes, dofmap.cell_nodes, local, (n, n)), dofmap)


def assemble_stiffness(dofmap: DofMap):
    """Gram matrix of (grad u, grad v); symmetric positive semidefinite."""
    _, dN, area, glam = _scalar_parts(dofmap)
    G = _physical_gradients(dN, glam)
    local = np.einsum("t,q,tqid,tqjd->tij", area, TRI6_WEIGHTS, G, G)
    n = dofmap.n_nodes
    return _vectorize(_scatter(dofmap.cell_nodes, dofmap.cell_nodes, local, (n, n)), dofmap)


def h1_gram(dofmap):
    return (assemble_mass(dofmap) + assemble_stiffness(dofmap)).tocsr()


def assemble_convection(dofmap_vel: DofMap, w):
    """Matrix C(w) with C_ij = integral of (w . grad phi_j) phi_i.

    ``w`` is a P2 vector field on the same mesh; the result is block
    diagonal when ``dofmap_vel`` is a vector space.
    """
    if dofmap_vel.degree != 2:
        raise DimensionMismatch("convection is assembled on P2 spaces")
    n = dofmap_vel.n_nodes
    wv = np.asarray(w.values if isinstance(w, FEField) else w, dtype=float)
    if isinstance(w, FEField) and w.dofmap.mesh is not dofmap_vel.mesh:
        raise DimensionMismatch("convecting field lives on another mesh")
    if wv.shape != (2 * n,):
        raise DimensionMismatch(f"convecting field needs {2 * n} values, got {wv.shape}")
    N, dN, area, glam = _scalar_parts(dofmap_vel)
    G = _physical_gradients(dN, glam)
    cn = dofmap_vel.cell_nodes
    wq = np.stack([wv[:n][cn] @ N.T, wv[n:][cn] @ N.T], axis=-1)  # (nt, nq, 2)
    local = np.einsum("t,q,qi,tqd,tqjd->tij", area, TRI6_WEIGHTS, N, wq, G)
    return _vectorize(_scatter(cn, cn, local, (n, n)), dofmap_vel)


def assemble_div_coupling(dofmap_vel: DofMap, dofmap_pres: DofMap):
    """B with B_ij = integral of psi_i div(phi_j); shape (n_pres, n_vel)."""
    if dofmap_vel.mesh is not dofmap_pres.mesh:
        raise DimensionMismatch("velocity and pressure spaces live on different meshes")
    if dofmap_vel.n_comp != 2 or dofmap_pres.n_comp != 1:
        raise DimensionMismatch("need a vector velocity space and a scalar pressure space")
    Nv, dNv = shape_functions(dofmap_vel.degree, TRI6_BARY)
    Np, _ = shape_functions(dofmap_pres.degree, TRI6_BARY)
    area, glam = barycentric_gradients(dofmap_vel.mesh)
    G = _physical_gradients(dNv, glam)
    n, m = dofmap_vel.n_nodes, dofmap_pres.n_nodes
    blocks = []
    for d in range(2):
        local = np.einsum("t,q,qi,tqj->tij", area, TRI6_WEIGHTS, Np, G[..., d])
        blocks.append(_scatter(dofmap_pres.cell_nodes, dofmap_vel.cell_nodes, local, (m, n)))
    return sp.hstack(blocks, format="csr")


def assemble_gradient(dofmap_vel: DofMap, dofmap_pres: DofMap):
    """Matrix with entries integral of phi_i . grad psi_j; shape (n_vel, n_pres)."""
    if dofmap_vel.mesh is not dofmap_pres.mesh:
        raise DimensionMismatch("velocity and pressure spaces live on different meshes")
    Nv, _ = shape_functions(dofmap_vel.degree, TRI6_BARY)
    _, dNp = shape_functions(dofmap_pres.degree, TRI6_BARY)
    area, glam = barycentric_gradients(dofmap_vel.mesh)
    Gp = _physical_gradients(dNp, glam)
    n, m = dofmap_vel.n_nodes, dofmap_pres.n_nodes
    blocks = []
    for d in range(2):
        local = np.einsum("t,q,qi,tqj->tij", area, TRI6_WEIGHTS, Nv, Gp[..., d])
        blocks.append(_scatter(dofmap_vel.cell_nodes, dofmap_pres.cell_nodes, local, (n, m)))
    return sp.vstack(blocks, format="csr")


def assemble_load(dofmap_vel: DofMap, f):
    """Load vector of a vector source ``f(x1, x2) -> (f1, f2)``."""
    N, _, area, _ = _scalar_parts(dofmap_vel)
    mesh = dofmap_vel.mesh
    xq = np.einsum("qk,tkd->tqd", TRI6_BARY, mesh.vertices[mesh.triangles])
    f1, f2 = f(xq[..., 0], xq[..., 1])
    n = dofmap_vel.n_nodes
    out = []
    for fc in (f1, f2):
        fc = np.broadcast_to(np.asarray(fc, dtype=float), xq.shape[:2])
        local = np.einsum("t,q,tq,qi->ti", area, TRI6_WEIGHTS, fc, N)
        out.append(np.bincount(dofmap_vel.cell_nodes.ravel(), local.ravel(), minlength=n))
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# outlet (1D) operators


def assemble_outlet_trace_ops(outlet: OutletSpace):
    """1D P1 mass and x2-stiffness on the outlet; natural (Neumann) segment ends."""
    el = outlet.elements
    h = np.abs(outlet.x2[el[:, 1]] - outlet.x2[el[:, 0]])
    mloc = h[:, None, None] / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])[None]
    sloc = (1.0 / h)[:, None, None] * np.array([[1.0, -1.0], [-1.0, 1.0]])[None]
    n = outlet.dof_count
    return _scatter(el, el, mloc, (n, n)), _scatter(el, el, sloc, (n, n))


def _edge_in_triangle(mesh, edge_ids):
    """Owning triangle and local vertex positions of each boundary edge."""
    owner = {}
    for t, tri in enumerate(mesh.triangles.tolist()):
        for k in range(3):
            owner[(tri[k], tri[(k + 1) % 3])] = (t, k, (k + 1) % 3)
    return [owner[tuple(e)] for e in mesh.boundary_edges[edge_ids].tolist()]


def assemble_outlet_divergence(outlet: OutletSpace, dofmap_vel: DofMap):
    """T with T_kj = integral over the outlet of div(phi_j) times the 1D hat q_k."""
    mesh = outlet.mesh
    _, glam = barycentric_gradients(mesh)
    n = dofmap_vel.n_nodes
    rows, cols, vals = [], [], []
    for (a, b), (t, ka, kb) in zip(outlet.elements.tolist(), _edge_in_triangle(mesh, outlet.edge_ids)):
        length = abs(outlet.x2[b] - outlet.x2[a])
        bary = np.zeros((3, 3))
        bary[:, ka] = 1.0 - GAUSS3_S
        bary[:, kb] = GAUSS3_S
        _, dN = shape_functions(dofmap_vel.degree, bary)
        grad = np.einsum("qbk,kd->qbd", dN, glam[t])  # (3, nb, 2)
        hats = np.column_stack([1.0 - GAUSS3_S, GAUSS3_S])  # values of q_a, q_b
        for d in range(2):
            loc = length * np.einsum("q,qr,qb->rb", GAUSS3_W, hats, grad[..., d])
            for r, k in enumerate((a, b)):
                rows.extend([k] * loc.shape[1])
                cols.extend((d * n + dofmap_vel.cell_nodes[t]).tolist())
                vals.extend(loc[r].tolist())
    T = sp.coo_matrix((vals, (rows, cols)), shape=(outlet.dof_count, dofmap_vel.dof_count)).tocsr()
    T.sum_duplicates()
    T.sort_indices()
    return T


def assemble_outlet_div_rhs(outlet: OutletSpace, dofmap_vel: DofMap, u_pred, nu, T=None):
    """Right-hand side -nu * (div u_pred, q)_outlet of the outlet pressure problem."""
    if T is None:
        T = assemble_outlet_divergence(outlet, dofmap_vel)
    return -nu * (T @ _values(u_pred, dofmap_vel))


def extension_matrix(outlet: OutletSpace, dofmap_pres: DofMap, tol=1e-12):
    """Streamwise-constant extension of an outlet P1 field into the P1 space.

    A pressure node at height x2 inside the x2-range of an outlet segment
    receives the 1D interpolant of that segment at x2; other nodes get zero.
    """
    if dofmap_pres.degree != 1:
        raise DimensionMismatch("the extension targets the P1 pressure space")
    ys = dofmap_pres.node_coords[:, 1]
    rows, cols, vals = [], [], []
    for a, b in outlet.segments:
        y = outlet.x2[a:b]
        inside = np.flatnonzero((ys >= y[0] - tol) & (ys <= y[-1] + tol))
        yy = np.clip(ys[inside], y[0], y[-1])
        k = np.clip(np.searchsorted(y, yy, side="right") - 1, 0, len(y) - 2)
        s = (yy - y[k]) / (y[k + 1] - y[k])
        for off, wgt in ((0, 1.0 - s), (1, s)):
            rows.append(inside)
            cols.append(a + k + off)
            vals.append(wgt)
    E = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(dofmap_pres.dof_count, outlet.dof_count)).tocsr()
    E.eliminate_zeros()
    E.sort_indices()
    return E
