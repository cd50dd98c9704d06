"""Structured triangular meshes of channel-like domains with labeled boundaries.

Every generated mesh uses the crossed-diagonal pattern: each rectangular cell
of a tensor grid gets an extra vertex at its center and is split into four
triangles. A generated mesh therefore has ``(nx+1)*(ny+1) + nx*ny`` vertices
when no cells are removed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidGeometry, ParseError

GEOM_TOL = 1e-12


class BoundaryLabel(enum.IntEnum):
    InletDirichlet = 0
    WallDirichlet = 1
    Outlet = 2
    # no-slip wall of an immersed body; drag and lift are measured on it
    CylinderWall = 3

    @property
    def is_dirichlet(self):
        return self != BoundaryLabel.Outlet


_LABEL_NAMES = {
    BoundaryLabel.InletDirichlet: "inlet",
    BoundaryLabel.WallDirichlet: "wall",
    BoundaryLabel.Outlet: "outlet",
    BoundaryLabel.CylinderWall: "cylinder",
}
_LABEL_FROM_NAME = {v: k for k, v in _LABEL_NAMES.items()}


class DomainId(enum.Enum):
    Channel = "channel"
    BifurcatedTube = "bifurcated"
    CylinderChannel = "cylinder"
    External = "external"


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray  # (nv, 2)
    triangles: np.ndarray  # (nt, 3), counterclockwise
    boundary_edges: np.ndarray  # (nbe, 2), oriented with the domain on the left
    boundary_labels: np.ndarray  # (nbe,), BoundaryLabel values
    domain_id: DomainId = DomainId.External
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name, dtype in (("vertices", float), ("triangles", np.int64),
                            ("boundary_edges", np.int64), ("boundary_labels", np.int64)):
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def signed_areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def area(self):
        return float(np.sum(self.signed_areas()))

    def edge_lengths(self, mask=None):
        e = self.boundary_edges if mask is None else self.boundary_edges[mask]
        d = self.vertices[e[:, 1]] - self.vertices[e[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def boundary_length(self, label=None):
        mask = None if label is None else self.boundary_labels == int(label)
        return float(np.sum(self.edge_lengths(mask)))

    def edges_with_label(self, label):
        return self.boundary_edges[self.boundary_labels == int(label)]

    def edge_indices(self, label):
        """Indices into ``boundary_edges`` of the edges carrying ``label``."""
        return np.flatnonzero(self.boundary_labels == int(label))

    def has_label(self, label):
        return bool(np.any(self.boundary_labels == int(label)))

    def boundary_segments(self, label):
        """Group the edges carrying ``label`` into connected chains.

        Returns a list of edge-index arrays (indices into ``boundary_edges``),
        ordered by the smallest vertex coordinate of each chain.
        """
        key = ("segments", int(label))
        if key in self._cache:
            return self._cache[key]
        idx = np.flatnonzero(self.boundary_labels == int(label))
        # union-find over vertices of the labeled edges
        parent = {}

        def find(v):
            while parent[v] != v:
                parent[v] = parent[parent[v]]
                v = parent[v]
            return v

        for i in idx:
            a, b = self.boundary_edges[i]
            parent.setdefault(a, a)
            parent.setdefault(b, b)
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        groups = {}
        for i in idx:
            groups.setdefault(find(self.boundary_edges[i][0]), []).append(i)
        segs = [np.array(g, dtype=np.int64) for g in groups.values()]
        segs.sort(key=lambda g: tuple(self.vertices[self.boundary_edges[g].ravel()].min(axis=0)[::-1]))
        self._cache[key] = segs
        return segs

    def validate(self):
        """Check orientation, edge cover and label invariants; raise InvalidGeometry."""
        nv = self.n_vertices
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise InvalidGeometry("vertices must be an (nv, 2) array")
        if self.triangles.size == 0:
            raise InvalidGeometry("mesh has no triangles")
        if self.triangles.min() < 0 or self.triangles.max() >= nv:
            raise InvalidGeometry("triangle references a missing vertex")
        if len(self.boundary_edges) and (self.boundary_edges.min() < 0 or self.boundary_edges.max() >= nv):
            raise InvalidGeometry("boundary edge references a missing vertex")
        if len(self.boundary_edges) != len(self.boundary_labels):
            raise InvalidGeometry("one label per boundary edge is required")
        areas = self.signed_areas()
        if np.any(areas <= 0.0):
            raise InvalidGeometry(f"{int(np.sum(areas <= 0))} triangles have non-positive signed area")
        if not set(np.unique(self.boundary_labels)) <= {int(b) for b in BoundaryLabel}:
            raise InvalidGeometry("unknown boundary label")

        half = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                               self.triangles[:, [2, 0]]])
        keys = np.sort(half, axis=1)
        uniq, counts = np.unique(keys, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise InvalidGeometry("an edge is shared by more than two triangles")
        free = {tuple(e) for e in uniq[counts == 1]}
        listed = [tuple(e) for e in np.sort(self.boundary_edges, axis=1)]
        if len(set(listed)) != len(listed):
            raise InvalidGeometry("duplicate boundary edge")
        listed_set = set(listed)
        if listed_set != free:
            extra = listed_set - free
            if extra:
                raise InvalidGeometry(f"boundary edge {sorted(extra)[0]} is not on the boundary "
                                      "(it is shared by two triangles or by none)")
            raise InvalidGeometry(f"{len(free - listed_set)} boundary edges are missing a label")

        out = self.edges_with_label(BoundaryLabel.Outlet)
        if len(out):
            x = self.vertices[out][:, :, 0]
            if np.any(np.abs(x[:, 0] - x[:, 1]) > GEOM_TOL * max(1.0, np.abs(x).max())):
                raise InvalidGeometry("outlet edges must lie on vertical straight segments")
            for seg in self.boundary_segments(BoundaryLabel.Outlet):
                xs = self.vertices[self.boundary_edges[seg].ravel(), 0]
                if np.ptp(xs) > GEOM_TOL * max(1.0, np.abs(xs).max()):
                    raise InvalidGeometry("an outlet segment is not a single vertical line")
        return self

    def same_as(self, other):
        return (np.array_equal(self.vertices, other.vertices)
                and np.array_equal(self.triangles, other.triangles)
                and np.array_equal(self.boundary_edges, other.boundary_edges)
                and np.array_equal(self.boundary_labels, other.boundary_labels))


def _piecewise_lines(breaks, h):
    """Grid lines through every breakpoint with spacing close to ``h``."""
    pieces = [np.array([breaks[0]], dtype=float)]
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = max(1, int(round((b - a) / h)))
        pieces.append(np.linspace(a, b, n + 1)[1:])
    lines = np.concatenate(pieces)
    for b in breaks:  # pin breakpoints bit-exactly
        lines[np.argmin(np.abs(lines - b))] = b
    return lines


def structured_mesh(xs, ys, is_solid=None, labeler=None, domain_id=DomainId.External):
    """Crossed-diagonal triangulation of a tensor grid with optional removed cells.

    ``is_solid(xc, yc)`` returns True for cells (given by center) that are cut
    out of the domain. ``labeler(xm, ym, nx, ny)`` maps the midpoint and
    outward normal of each boundary edge to a BoundaryLabel.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    nx, ny = len(xs) - 1, len(ys) - 1
    xc = 0.5 * (xs[:-1] + xs[1:])
    yc = 0.5 * (ys[:-1] + ys[1:])
    active = np.ones((nx, ny), dtype=bool)
    if is_solid is not None:
        for i in range(nx):
            for j in range(ny):
                active[i, j] = not is_solid(xc[i], yc[j])
    if not active.any():
        raise InvalidGeometry("every cell was removed")

    used = np.zeros((nx + 1, ny + 1), dtype=bool)
    ai, aj = np.nonzero(active)
    for di in (0, 1):
        for dj in (0, 1):
            used[ai + di, aj + dj] = True
    corner_id = -np.ones((nx + 1, ny + 1), dtype=np.int64)
    # vertices numbered row by row (x fastest) for a banded structure
    uj, ui = np.nonzero(used.T)
    corner_id[ui, uj] = np.arange(len(ui))
    verts = [np.column_stack([xs[ui], ys[uj]])]
    center_id = len(ui) + np.arange(len(ai))
    verts.append(np.column_stack([xc[ai], yc[aj]]))
    vertices = np.concatenate(verts)

    c0 = corner_id[ai, aj]
    c1 = corner_id[ai + 1, aj]
    c2 = corner_id[ai + 1, aj + 1]
    c3 = corner_id[ai, aj + 1]
    tris = np.stack([np.column_stack([c0, c1, center_id]),
                     np.column_stack([c1, c2, center_id]),
                     np.column_stack([c2, c3, center_id]),
                     np.column_stack([c3, c0, center_id])], axis=1).reshape(-1, 3)

    # boundary edges: cell sides whose neighbour is inactive or outside
    bnd = []
    pad = np.zeros((nx + 2, ny + 2), dtype=bool)
    pad[1:-1, 1:-1] = active
    for i, j in zip(ai, aj):
        if not pad[i + 1, j]:  # bottom side, outward normal (0,-1)
            bnd.append((corner_id[i, j], corner_id[i + 1, j]))
        if not pad[i + 2, j + 1]:  # right side
            bnd.append((corner_id[i + 1, j], corner_id[i + 1, j + 1]))
        if not pad[i + 1, j + 2]:  # top side
            bnd.append((corner_id[i + 1, j + 1], corner_id[i, j + 1]))
        if not pad[i, j + 1]:  # left side
            bnd.append((corner_id[i, j + 1], corner_id[i, j]))
    bnd = np.array(bnd, dtype=np.int64)
    a, b = vertices[bnd[:, 0]], vertices[bnd[:, 1]]
    mid = 0.5 * (a + b)
    d = b - a
    normal = np.column_stack([d[:, 1], -d[:, 0]]) / np.hypot(d[:, 0], d[:, 1])[:, None]
    if labeler is None:
        labels = np.full(len(bnd), int(BoundaryLabel.WallDirichlet))
    else:
        labels = np.array([int(labeler(m[0], m[1], n[0], n[1])) for m, n in zip(mid, normal)])
    return TriMesh(vertices, tris, bnd, labels, domain_id)


def generate_channel(length, height, nx, ny):
    """Rectangle [0, length] x [0, height]: inlet left, outlet right, walls top/bottom."""
    if not (length > 0 and height > 0):
        raise InvalidGeometry("channel dimensions must be positive")
    if nx < 2 or ny < 2:
        raise InvalidGeometry("need at least 2 cells per direction")
    xs = np.linspace(0.0, length, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)

    def labeler(x, y, n1, n2):
        if n1 < -0.5:
            return BoundaryLabel.InletDirichlet
        if n1 > 0.5:
            return BoundaryLabel.Outlet
        return BoundaryLabel.WallDirichlet

    return structured_mesh(xs, ys, labeler=labeler, domain_id=DomainId.Channel).validate()


BIFURCATED_OUTLETS = ((-0.5, -0.1), (0.2, 0.5))


def generate_bifurcated_tube(nx):
    """[0,8]x[-0.5,0.5] minus [0,0.5]x[-0.5,0] and [1.5,8]x[-0.1,0.2].

    Streamwise spacing is 8/nx; cross-stream spacing is 1.6/nx so the
    narrowest band (0.1 wide) gets at least one cell.
    """
    if nx < 16:
        raise InvalidGeometry("nx >= 16 is needed to resolve the 0.1-wide band")
    xs = _piecewise_lines([0.0, 0.5, 1.5, 8.0], 8.0 / nx)
    ys = _piecewise_lines([-0.5, -0.1, 0.0, 0.2, 0.5], 1.6 / nx)

    def solid(x, y):
        return (x < 0.5 and y < 0.0) or (x > 1.5 and -0.1 < y < 0.2)

    def labeler(x, y, n1, n2):
        if n1 < -0.5 and x == 0.0:
            return BoundaryLabel.InletDirichlet
        if n1 > 0.5 and x == 8.0:
            return BoundaryLabel.Outlet
        return BoundaryLabel.WallDirichlet

    return structured_mesh(xs, ys, solid, labeler, DomainId.BifurcatedTube).validate()


def generate_obstacle_channel(length, height, box, nx, ny):
    """Channel with a rectangular body ``box = (x0, x1, y0, y1)`` labeled CylinderWall.

    Grid lines are snapped to the box faces. Serves as a structured stand-in
    for the circular-cylinder benchmark, whose meshes come from files.
    """
    x0, x1, y0, y1 = box
    if not (0 < x0 < x1 < length and 0 < y0 < y1 < height):
        raise InvalidGeometry("body must lie strictly inside the channel")
    xs = _piecewise_lines([0.0, x0, x1, length], length / nx)
    ys = _piecewise_lines([0.0, y0, y1, height], height / ny)

    def solid(x, y):
        return x0 < x < x1 and y0 < y < y1

    def labeler(x, y, n1, n2):
        if x == 0.0 and n1 < -0.5:
            return BoundaryLabel.InletDirichlet
        if x == length and n1 > 0.5:
            return BoundaryLabel.Outlet
        if 0.0 < y < height and x0 <= x <= x1 and y0 <= y <= y1:
            return BoundaryLabel.CylinderWall
        return BoundaryLabel.WallDirichlet

    return structured_mesh(xs, ys, solid, labeler, DomainId.CylinderChannel).validate()


MESH_MAGIC = "MESH2D v1"


def save_mesh(mesh, path):
    lines = [MESH_MAGIC, f"{mesh.n_vertices} {mesh.n_triangles} {len(mesh.boundary_edges)}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines += [f"{a} {b} {_LABEL_NAMES[BoundaryLabel(lab)]}"
              for (a, b), lab in zip(mesh.boundary_edges.tolist(), mesh.boundary_labels.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path, domain_id=DomainId.External):
    text = Path(path).read_text().split("\n")
    rows = [ln.split() for ln in text if ln.strip()]
    if not rows or " ".join(rows[0]) != MESH_MAGIC:
        raise ParseError(f"{path}: missing '{MESH_MAGIC}' header")
    try:
        nv, nt, nbe = (int(v) for v in rows[1])
    except (IndexError, ValueError):
        raise ParseError(f"{path}: line 2 must hold '<nv> <nt> <nbe>'") from None
    if min(nv, nt, nbe) < 0 or len(rows) != 2 + nv + nt + nbe:
        raise ParseError(f"{path}: expected {2 + nv + nt + nbe} non-empty lines, found {len(rows)}")
    body = rows[2:]
    for r in body[nv + nt:]:
        if len(r) != 3:
            raise ParseError(f"{path}: boundary records need 'a b label'")
    try:
        verts = np.array([[float(a), float(b)] for a, b in body[:nv]], dtype=float).reshape(nv, 2)
        tris = np.array([[int(a), int(b), int(c)] for a, b, c in body[nv:nv + nt]],
                        dtype=np.int64).reshape(nt, 3)
        bnd = np.array([[int(r[0]), int(r[1])] for r in body[nv + nt:]], dtype=np.int64).reshape(nbe, 2)
        labels = np.array([int(_LABEL_FROM_NAME[r[2]]) for r in body[nv + nt:]], dtype=np.int64)
    except (ValueError, KeyError) as exc:
        raise ParseError(f"{path}: malformed record ({exc})") from None
    return TriMesh(verts, tris, bnd, labels, domain_id).validate()
