"""Lagrange finite-element spaces on a TriMesh."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import DimensionMismatch, InvalidGeometry
from ..mesh import BoundaryLabel, TriMesh
from .quadrature import EDGE_NODES


class DofMap:
    """Degree-of-freedom numbering for P1 scalar, P2 scalar or P2 vector fields.

    Scalar nodes are the mesh vertices followed (for P2) by edge midpoints.
    Vector fields are stored blocked: all x1-components, then all x2-components.
    """

    def __init__(self, mesh: TriMesh, space: str):
        if space not in ("P1", "P2", "P2vec"):
            raise ValueError(f"unknown space {space!r}")
        self.mesh = mesh
        self.space = space
        self.degree = 1 if space == "P1" else 2
        self.n_comp = 2 if space == "P2vec" else 1
        nv = mesh.n_vertices
        if self.degree == 1:
            self.cell_nodes = mesh.triangles.copy()
            self.node_coords = mesh.vertices
            self.n_nodes = nv
        else:
            edges, tri_edges = _mesh_edges(mesh)
            self.edges = edges
            self.cell_nodes = np.hstack([mesh.triangles, nv + tri_edges])
            mid = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
            self.node_coords = np.vstack([mesh.vertices, mid])
            self.n_nodes = nv + len(edges)
        self.dof_count = self.n_comp * self.n_nodes

    def __repr__(self):
        return f"DofMap({self.space}, dofs={self.dof_count})"

    def compatible(self, other):
        return self.mesh is other.mesh and self.space == other.space

    @cached_property
    def _edge_index(self):
        return {tuple(e): k for k, e in enumerate(self.edges.tolist())}

    def boundary_nodes(self, labels):
        """Scalar node indices lying on boundary edges with any of ``labels``."""
        labels = {int(lab) for lab in labels}
        mask = np.isin(self.mesh.boundary_labels, list(labels))
        be = self.mesh.boundary_edges[mask]
        nodes = set(be.ravel().tolist())
        if self.degree == 2:
            nv = self.mesh.n_vertices
            for a, b in np.sort(be, axis=1).tolist():
                nodes.add(nv + self._edge_index[(a, b)])
        return np.array(sorted(nodes), dtype=np.int64)

    def boundary_edge_nodes(self, edge_ids):
        """For boundary edges (indices into mesh.boundary_edges) return their nodes.

        P1: (n, 2) vertex pairs. P2: (n, 3) with the midpoint last.
        """
        be = self.mesh.boundary_edges[edge_ids]
        if self.degree == 1:
            return be.copy()
        nv = self.mesh.n_vertices
        mids = [nv + self._edge_index[tuple(sorted(e))] for e in be.tolist()]
        return np.column_stack([be, mids])

    def dirichlet_dofs(self, labels=None):
        """Dofs fixed by Dirichlet-type boundary labels (all components)."""
        if labels is None:
            labels = [lab for lab in BoundaryLabel if lab.is_dirichlet]
        nodes = self.boundary_nodes(labels)
        return np.concatenate([c * self.n_nodes + nodes for c in range(self.n_comp)])

    def interpolate(self, func):
        """Nodal interpolant of ``func(x1, x2)``; vector spaces expect a 2-tuple."""
        x, y = self.node_coords[:, 0], self.node_coords[:, 1]
        vals = func(x, y)
        if self.n_comp == 1:
            return np.broadcast_to(np.asarray(vals, dtype=float), (self.n_nodes,)).copy()
        return np.concatenate([np.broadcast_to(np.asarray(v, dtype=float), (self.n_nodes,))
                               for v in vals])


def _mesh_edges(mesh):
    tris = mesh.triangles
    local = np.array(EDGE_NODES)
    pairs = np.sort(tris[:, local], axis=2)  # (nt, 3, 2)
    edges, inv = np.unique(pairs.reshape(-1, 2), axis=0, return_inverse=True)
    return edges, inv.reshape(-1, 3)


@dataclass
class FEField:
    dofmap: DofMap
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.dofmap.dof_count,):
            raise DimensionMismatch(f"field has {self.values.shape} values, "
                                    f"dofmap expects {self.dofmap.dof_count}")

    def components(self):
        n = self.dofmap.n_nodes
        return [self.values[c * n:(c + 1) * n] for c in range(self.dofmap.n_comp)]


class OutletSpace:
    """Continuous P1 space on the outlet boundary, one chain per outlet segment.

    Local dof ``k`` lives at parent vertex ``vertices[k]``. Dofs of one
    segment are contiguous and sorted by x2.
    """

    def __init__(self, mesh: TriMesh):
        segs = mesh.boundary_segments(BoundaryLabel.Outlet)
        if not segs:
            raise InvalidGeometry("mesh has no outlet edges")
        self.mesh = mesh
        verts, seg_ranges, elems, edge_ids = [], [], [], []
        for seg in segs:
            vs = np.unique(mesh.boundary_edges[seg].ravel())
            vs = vs[np.argsort(mesh.vertices[vs, 1], kind="stable")]
            start = len(verts)
            local = {v: start + k for k, v in enumerate(vs.tolist())}
            verts.extend(vs.tolist())
            seg_ranges.append((start, len(verts)))
            for e in seg.tolist():
                a, b = mesh.boundary_edges[e]
                elems.append((local[a], local[b]))
                edge_ids.append(e)
        self.vertices = np.array(verts, dtype=np.int64)
        self.segments = seg_ranges
        self.elements = np.array(elems, dtype=np.int64)
        self.edge_ids = np.array(edge_ids, dtype=np.int64)
        self.x2 = mesh.vertices[self.vertices, 1]
        self.x1 = mesh.vertices[self.vertices, 0]
        self.dof_count = len(self.vertices)

    def segment_bounds(self):
        return [(self.x2[a], self.x2[b - 1]) for a, b in self.segments]
