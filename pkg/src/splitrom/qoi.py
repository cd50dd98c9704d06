"""Flow outputs (kinetic energy, outflux, charge drop, drag/lift) and error metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .errors import DimensionMismatch, InvalidGeometry
from .fem.assembly import (
    assemble_convection,
    assemble_div_coupling,
    assemble_mass,
    assemble_stiffness,
)
from .fem.quadrature import EDGE_NODES, GAUSS3_S, GAUSS3_W
from .fem.solvers import ConstrainedSystem, SolverOptions
from .fem.spaces import DofMap, FEField
from .mesh import BoundaryLabel


def _vals(x):
    return x.values if isinstance(x, FEField) else np.asarray(x, dtype=float)


class BoundaryTrace:
    """Gauss-point evaluation of P1/P2 traces on a set of boundary edges."""

    def __init__(self, dofmap: DofMap, edge_ids):
        self.dofmap = dofmap
        self.edge_ids = np.asarray(edge_ids, dtype=np.int64)
        if len(self.edge_ids) == 0:
            raise InvalidGeometry("empty boundary edge set")
        mesh = dofmap.mesh
        be = mesh.boundary_edges[self.edge_ids]
        d = mesh.vertices[be[:, 1]] - mesh.vertices[be[:, 0]]
        self.lengths = np.hypot(d[:, 0], d[:, 1])
        # edges run with the domain on their left, so (dy, -dx) points outward
        self.normals = np.column_stack([d[:, 1], -d[:, 0]]) / self.lengths[:, None]
        self.weights = self.lengths[:, None] * GAUSS3_W[None, :]  # (ne, 3)
        s = GAUSS3_S
        if dofmap.degree == 1:
            self.basis = np.column_stack([1 - s, s])
        else:
            self.basis = np.column_stack([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)])
        self.nodes = dofmap.boundary_edge_nodes(self.edge_ids)

    @property
    def length(self):
        return float(self.lengths.sum())

    def scalar(self, values, comp=0):
        v = _vals(values)[comp * self.dofmap.n_nodes:(comp + 1) * self.dofmap.n_nodes]
        return v[self.nodes] @ self.basis.T  # (ne, 3)

    def normal_component(self, u):
        return self.scalar(u, 0) * self.normals[:, :1] + self.scalar(u, 1) * self.normals[:, 1:]

    def integrate(self, samples):
        return float(np.sum(self.weights * samples))


def kinetic_energy(u, mass=None):
    """Half the squared L2 norm of the velocity."""
    v = _vals(u)
    if mass is None:
        mass = assemble_mass(u.dofmap)
    return 0.5 * float(v @ (mass @ v))


def outflux(u: FEField, edge_ids=None, trace: BoundaryTrace | None = None):
    """Flux of ``u`` through the given boundary edges along the outward normal."""
    if trace is None:
        if edge_ids is None:
            edge_ids = u.dofmap.mesh.edge_indices(BoundaryLabel.Outlet)
        trace = BoundaryTrace(u.dofmap, edge_ids)
    return trace.integrate(trace.normal_component(u))


def charge_drop(u, p, inlet: BoundaryTrace, outlet: BoundaryTrace, inlet_p: BoundaryTrace,
                outlet_p: BoundaryTrace):
    """Kinetic-energy flux difference plus pressure integral difference, inlet minus outlet."""
    un_in = inlet.normal_component(u)
    un_out = outlet.normal_component(u)
    kinetic = 0.5 * (inlet.integrate(un_in ** 2) - outlet.integrate(un_out ** 2))
    return kinetic + inlet_p.integrate(inlet_p.scalar(p)) - outlet_p.integrate(outlet_p.scalar(p))


def section_flux(u: FEField, x1):
    """Flux of the x1-velocity across the vertical line at ``x1`` (interior cut).

    The line must coincide with mesh edges; every triangle edge lying on it
    is integrated once with 3-point Gauss.
    """
    dm = u.dofmap
    mesh = dm.mesh
    tol = 1e-10
    total = 0.0
    seen = set()
    vals = _vals(u)[:dm.n_nodes]
    s = GAUSS3_S
    basis = np.column_stack([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)])
    for tri, nodes in zip(mesh.triangles, dm.cell_nodes):
        for k, (i, j) in enumerate(EDGE_NODES):
            a, b = tri[i], tri[j]
            pa, pb = mesh.vertices[a], mesh.vertices[b]
            if abs(pa[0] - x1) > tol or abs(pb[0] - x1) > tol:
                continue
            key = (min(a, b), max(a, b))
            if key in seen:
                continue
            seen.add(key)
            na, nb, nm = nodes[i], nodes[j], nodes[3 + k]
            q = basis @ vals[[na, nb, nm]]
            total += abs(pb[1] - pa[1]) * float(GAUSS3_W @ q)
    if not seen:
        raise InvalidGeometry(f"no mesh edges on the line x1 = {x1}")
    return total


class DragLift:
    """Drag and lift coefficients from the volume (test-function) formulation.

    The test functions equal (1,0) resp. (0,1) on the body, vanish on the rest
    of the boundary and are discrete-harmonic inside.
    """

    def __init__(self, dofmap_vel: DofMap, dofmap_pres: DofMap, nu, diameter=0.1, u_mean=1.0,
                 mass=None, stiffness=None, div=None):
        mesh = dofmap_vel.mesh
        if not mesh.has_label(BoundaryLabel.CylinderWall):
            raise InvalidGeometry("drag/lift need a boundary labeled as cylinder")
        self.V, self.Q = dofmap_vel, dofmap_pres
        self.nu = nu
        self.scale = -2.0 / (diameter * u_mean ** 2)
        scalar = DofMap(mesh, "P2")
        K = assemble_stiffness(scalar)
        body = scalar.boundary_nodes([BoundaryLabel.CylinderWall])
        other = np.setdiff1d(scalar.boundary_nodes(list(BoundaryLabel)), body)
        fixed = np.concatenate([body, other])
        vals = np.concatenate([np.ones(len(body)), np.zeros(len(other))])
        h = ConstrainedSystem(K, fixed, SolverOptions("lu")).solve(np.zeros(scalar.dof_count), vals)
        zero = np.zeros_like(h)
        self.v = (np.concatenate([h, zero]), np.concatenate([zero, h]))
        self.M = mass if mass is not None else assemble_mass(dofmap_vel)
        self.K = stiffness if stiffness is not None else assemble_stiffness(dofmap_vel)
        self.B = div if div is not None else assemble_div_coupling(dofmap_vel, dofmap_pres)
        self._Mv = [self.M @ v for v in self.v]
        self._Kv = [self.K @ v for v in self.v]
        self._Bv = [self.B @ v for v in self.v]

    def __call__(self, u, u_prev, p, dt):
        u, p = _vals(u), _vals(p)
        dudt = (u - _vals(u_prev)) / dt
        conv = assemble_convection(self.V, u) @ u
        out = []
        for v, Mv, Kv, Bv in zip(self.v, self._Mv, self._Kv, self._Bv):
            total = dudt @ Mv + conv @ v + self.nu * (u @ Kv) - p @ Bv
            out.append(self.scale * total)
        return tuple(out)


def l2L2_relative_error(ref, approx, gram):
    """Discrete-time l2 of the spatial ``gram``-norm error over that of ``ref``.

    ``ref`` and ``approx`` hold one field per column.
    """
    ref, approx = np.atleast_2d(ref), np.atleast_2d(approx)
    if ref.shape != approx.shape:
        raise DimensionMismatch(f"series shapes differ: {ref.shape} vs {approx.shape}")
    if gram.shape[0] != ref.shape[0]:
        raise DimensionMismatch("Gram matrix does not match the field size")
    diff = ref - approx
    num = np.einsum("in,in->", diff, gram @ diff)
    den = np.einsum("in,in->", ref, gram @ ref)
    return float(np.sqrt(max(num, 0.0) / den)) if den > 0 else float(np.sqrt(max(num, 0.0)))


def qoi_relative_error_L2time(times, ref, approx):
    """Trapezoidal L2-in-time norm of ``ref - approx`` relative to that of ``ref``."""
    t, a, b = (np.asarray(x, dtype=float) for x in (times, ref, approx))
    if not (t.shape == a.shape == b.shape):
        raise DimensionMismatch("time series lengths differ")
    num = trapezoid((a - b) ** 2, t)
    den = trapezoid(a ** 2, t)
    return float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num))


@dataclass
class QoISeries:
    times: list = field(default_factory=list)
    channels: dict = field(default_factory=dict)

    def append(self, t, values: dict):
        if self.times and t <= self.times[-1]:
            raise DimensionMismatch("QoI times must increase")
        if self.times and set(values) != set(self.channels):
            raise DimensionMismatch("QoI channels changed between records")
        self.times.append(float(t))
        for k, v in values.items():
            self.channels.setdefault(k, []).append(float(v))

    def __len__(self):
        return len(self.times)

    def __getitem__(self, name):
        return np.asarray(self.channels[name])

    @property
    def t(self):
        return np.asarray(self.times)

    def names(self):
        return list(self.channels)

    def to_csv(self, path, extra: dict | None = None):
        extra = extra or {}
        names = self.names()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *names, *extra])
            for n, t in enumerate(self.times):
                w.writerow([repr(t), *(repr(self.channels[k][n]) for k in names), *extra.values()])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        out = cls()
        keep = [i for i, h in enumerate(header) if h not in ("t", "mode")]
        for row in body:
            out.append(float(row[0]), {header[i]: float(row[i]) for i in keep})
        return out


class FlowOutputs:
    """Evaluates the standard output channels of one velocity/pressure state.

    Channels: ``E_kin``; per outlet segment ``Q_outflux`` and ``CD_charge``
    (suffixed ``_1``, ``_2``, ... when the outlet has several segments);
    ``C_D``/``C_L`` when the mesh carries a cylinder boundary.
    """

    def __init__(self, dofmap_vel: DofMap, dofmap_pres: DofMap, nu, mass=None, diameter=0.1,
                 u_mean=1.0, stiffness=None, div=None):
        mesh = dofmap_vel.mesh
        self.V, self.Q = dofmap_vel, dofmap_pres
        self.mass = mass if mass is not None else assemble_mass(dofmap_vel)
        segs = mesh.boundary_segments(BoundaryLabel.Outlet) if mesh.has_label(BoundaryLabel.Outlet) else []
        suffix = (lambda k: "") if len(segs) == 1 else (lambda k: f"_{k + 1}")
        self.outlets = [(suffix(k), BoundaryTrace(dofmap_vel, s), BoundaryTrace(dofmap_pres, s))
                        for k, s in enumerate(segs)]
        self.inlet = None
        if mesh.has_label(BoundaryLabel.InletDirichlet):
            ids = mesh.edge_indices(BoundaryLabel.InletDirichlet)
            self.inlet = (BoundaryTrace(dofmap_vel, ids), BoundaryTrace(dofmap_pres, ids))
        self.drag = None
        if mesh.has_label(BoundaryLabel.CylinderWall):
            self.drag = DragLift(dofmap_vel, dofmap_pres, nu, diameter, u_mean, self.mass, stiffness, div)

    def __call__(self, u, p, u_prev=None, dt=None):
        u, p = _vals(u), _vals(p)
        out = {"E_kin": kinetic_energy(u, self.mass)}
        for sfx, tv, _ in self.outlets:
            out["Q_outflux" + sfx] = outflux(u, trace=tv)
        if self.inlet is not None:
            for sfx, tv, tp in self.outlets:
                out["CD_charge" + sfx] = charge_drop(u, p, self.inlet[0], tv, self.inlet[1], tp)
        if self.drag is not None:
            prev = u if u_prev is None else u_prev
            out["C_D"], out["C_L"] = self.drag(u, prev, p, dt if dt else 1.0)
        return out
