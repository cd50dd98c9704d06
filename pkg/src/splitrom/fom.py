"""Full-order incompressible flow solver: four-step pressure-correction scheme.

Each step advances (u, p) with

1. a linearised convection-diffusion predictor for the velocity,
2. a 1D Helmholtz-type problem on the outlet giving the pressure-correction trace,
3. a Poisson problem for the pressure correction (zero on the outlet),
4. the pressure increment and an L2 projection of the corrected velocity.
"""

from __future__ import annotations

import math
import struct
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, InvalidInput, ParseError, SolverDiverged
from .fem.assembly import (
    assemble_convection,
    assemble_div_coupling,
    assemble_gradient,
    assemble_load,
    assemble_mass,
    assemble_outlet_divergence,
    assemble_outlet_trace_ops,
    assemble_stiffness,
    extension_matrix,
    h1_gram,
)
from .fem.solvers import ConstrainedSystem, SolverOptions
from .fem.spaces import DofMap, FEField, OutletSpace
from .mesh import BoundaryLabel, TriMesh
from .qoi import FlowOutputs, QoISeries

FIELDS = ("u", "ut", "p", "phi", "phihat")
FIELD_IDS = {name: k for k, name in enumerate(FIELDS)}
BASIS_ID_OFFSET = 100


@dataclass(frozen=True)
class FOMConfig:
    nu: float
    dt: float
    t_end: float
    inflow_mean: float = 1.0
    inflow_profile: str = "parabolic"  # "parabolic" or "none"
    ramp_steps: int = 10  # cosine ramp length in steps; 0 disables it
    window: tuple | None = None  # snapshot window (t_a, t_b); defaults to (0, t_end)
    stride: int = 1
    convection: bool = True  # False gives the Stokes variant
    solver: SolverOptions = SolverOptions("lu")
    spd_solver: SolverOptions = SolverOptions("cg", tol=1e-12)
    forcing: object = None  # f(x1, x2) -> (f1, f2), time independent
    reynolds: float = float("nan")  # parameter tag stored with snapshots
    diameter: float = 0.1  # reference length of the drag/lift coefficients

    def __post_init__(self):
        if not self.nu > 0:
            raise InvalidInput("viscosity must be positive")
        if not 0 < self.dt < self.t_end:
            raise InvalidInput("need 0 < dt < t_end")
        ta, tb = self.snapshot_window
        if not ta < tb <= self.t_end + 1e-12 * self.t_end:
            raise InvalidInput("snapshot window must satisfy t_a < t_b <= t_end")
        if self.stride < 1:
            raise InvalidInput("snapshot stride must be >= 1")
        if self.inflow_profile not in ("parabolic", "none"):
            raise InvalidInput(f"unknown inflow profile {self.inflow_profile!r}")

    @property
    def snapshot_window(self):
        return tuple(self.window) if self.window is not None else (0.0, self.t_end)

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))

    def snapshot_steps(self):
        """Step indices (state after step k is at t = k dt) stored as snapshots."""
        ta, tb = self.snapshot_window
        eps = 1e-9
        ka = max(1, math.ceil(ta / self.dt - eps))
        kb = min(self.n_steps, math.floor(tb / self.dt + eps))
        return list(range(ka, kb + 1, self.stride))

    def ramp(self, step):
        """Inflow scaling at time level ``step``."""
        if self.ramp_steps <= 0 or step >= self.ramp_steps:
            return 1.0
        return 0.5 * (1.0 - math.cos(math.pi * step / self.ramp_steps))


@dataclass
class FOMState:
    """Coefficient vectors of all fields at time level ``step``.

    ``u``/``ut`` live on the P2 vector space, ``p``/``phi`` on P1 and
    ``phihat`` on the outlet P1 space.
    """

    u: np.ndarray
    ut: np.ndarray
    p: np.ndarray
    phi: np.ndarray
    phihat: np.ndarray
    step: int = 0
    dt: float = 0.0

    @property
    def t(self):
        return self.step * self.dt

    def copy(self):
        return FOMState(self.u.copy(), self.ut.copy(), self.p.copy(), self.phi.copy(),
                        self.phihat.copy(), self.step, self.dt)


@dataclass
class SnapshotSet:
    """Columns of stored fields for one parameter run."""

    fields: dict
    times: np.ndarray
    param: float = float("nan")

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        counts = {v.shape[1] for v in self.fields.values()}
        if counts and counts != {len(self.times)}:
            raise DimensionMismatch("snapshot counts differ between fields")
        if np.any(np.diff(self.times) <= 0):
            raise InvalidInput("snapshot times must increase strictly")

    @property
    def count(self):
        return len(self.times)

    def __getitem__(self, name):
        return self.fields[name]

    def save(self, directory, prefix="run"):
        import os

        paths = {}
        for name, data in self.fields.items():
            path = os.path.join(directory, f"{prefix}_{name}.snap")
            write_snapshot_file(path, FIELD_IDS[name], data, self.times, self.param)
            paths[name] = path
        return paths

    @classmethod
    def load(cls, directory, prefix="run", names=FIELDS):
        import os

        fields, times, param = {}, None, float("nan")
        for name in names:
            fid, times, param, data, _ = read_snapshot_file(os.path.join(directory, f"{prefix}_{name}.snap"))
            if fid != FIELD_IDS[name]:
                raise ParseError(f"{name}: file holds field id {fid}")
            fields[name] = data
        return cls(fields, times, param)

    @staticmethod
    def concatenate(sets):
        """Stack several runs column-wise (times and parameters kept per column)."""
        names = list(sets[0].fields)
        fields = {n: np.hstack([s.fields[n] for s in sets]) for n in names}
        times = np.concatenate([s.times for s in sets])
        params = np.concatenate([np.full(s.count, s.param) for s in sets])
        return fields, times, params


_SNAP_MAGIC = b"PODSNAP1"


def write_snapshot_file(path, field_id, data, times, param, extra=None):
    """Binary snapshot container; ``extra`` (e.g. eigenvalues) is appended as f64."""
    data = np.asarray(data, dtype="<f8")
    if data.ndim != 2 or data.shape[1] != len(times):
        raise DimensionMismatch("data columns must match the time stamps")
    with open(path, "wb") as fh:
        fh.write(_SNAP_MAGIC)
        fh.write(struct.pack("<III", field_id, data.shape[0], data.shape[1]))
        fh.write(np.asarray(times, dtype="<f8").tobytes())
        fh.write(struct.pack("<d", param))
        fh.write(data.tobytes(order="F"))
        if extra is not None:
            fh.write(np.asarray(extra, dtype="<f8").tobytes())


def read_snapshot_file(path):
    """Returns (field_id, times, param, data, trailing f64 block)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != _SNAP_MAGIC:
        raise ParseError(f"{path}: not a snapshot file")
    try:
        fid, ndof, ns = struct.unpack_from("<III", raw, 8)
        off = 20
        times = np.frombuffer(raw, "<f8", ns, off).copy()
        off += 8 * ns
        (param,) = struct.unpack_from("<d", raw, off)
        off += 8
        data = np.frombuffer(raw, "<f8", ndof * ns, off).reshape((ndof, ns), order="F").copy()
        off += 8 * ndof * ns
    except (struct.error, ValueError) as exc:
        raise ParseError(f"{path}: truncated snapshot file ({exc})") from None
    rest = raw[off:]
    if len(rest) % 8:
        raise ParseError(f"{path}: trailing bytes")
    return fid, times, param, data, np.frombuffer(rest, "<f8").copy()


class FlowProblem:
    """Discrete spaces and the constant operators of the scheme on one mesh."""

    def __init__(self, mesh: TriMesh):
        mesh.validate()
        self.mesh = mesh
        self.V = DofMap(mesh, "P2vec")
        self.Q = DofMap(mesh, "P1")
        self.outlet = OutletSpace(mesh)
        self.M = assemble_mass(self.V)
        self.K = assemble_stiffness(self.V)
        self.B = assemble_div_coupling(self.V, self.Q)  # (p, div v)
        self.G = assemble_gradient(self.V, self.Q)  # (grad q, v)
        self.Kp = assemble_stiffness(self.Q)
        self.H1p = h1_gram(self.Q)
        self.Mh, self.Sh = assemble_outlet_trace_ops(self.outlet)
        self.H1h = (self.Mh + self.Sh).tocsr()
        self.T = assemble_outlet_divergence(self.outlet, self.V)
        self.E = extension_matrix(self.outlet, self.Q)
        self.dirichlet = self.V.dirichlet_dofs()
        self.outlet_p = self.Q.boundary_nodes([BoundaryLabel.Outlet])

    def gram(self, name):
        """Gram matrix of the inner product used for field ``name``."""
        return {"u": self.M, "ut": self.M, "p": self.H1p, "phi": self.H1p, "phihat": self.H1h}[name]

    def sizes(self):
        return {"u": self.V.dof_count, "ut": self.V.dof_count, "p": self.Q.dof_count,
                "phi": self.Q.dof_count, "phihat": self.outlet.dof_count}

    def inflow(self, mean=1.0, profile="parabolic"):
        """Velocity vector carrying the inflow profile on inlet dofs, zero elsewhere.

        Each inlet segment gets a parabola of mean normal velocity ``mean``
        directed into the domain; nodes shared with walls stay zero.
        """
        g = np.zeros(self.V.dof_count)
        if profile == "none" or not self.mesh.has_label(BoundaryLabel.InletDirichlet):
            return g
        n = self.V.n_nodes
        walls = set(self.V.boundary_nodes([lab for lab in BoundaryLabel
                                           if lab.is_dirichlet and lab != BoundaryLabel.InletDirichlet]).tolist())
        xy = self.V.node_coords
        for seg in self.mesh.boundary_segments(BoundaryLabel.InletDirichlet):
            be = self.mesh.boundary_edges[seg]
            pts = self.mesh.vertices[be.ravel()]
            d = self.mesh.vertices[be[0, 1]] - self.mesh.vertices[be[0, 0]]
            tangent = d / np.hypot(*d)
            inward = np.array([-tangent[1], tangent[0]])
            proj = pts @ tangent
            s0, s1 = proj.min(), proj.max()
            nodes = self.V.boundary_edge_nodes(seg).ravel()
            for k in np.unique(nodes):
                if k in walls:
                    continue
                s = (xy[k] @ tangent - s0) / (s1 - s0)
                val = 6.0 * mean * s * (1.0 - s)
                g[k], g[n + k] = val * inward[0], val * inward[1]
        return g

    def zero_state(self, dt=0.0):
        z = self.sizes()
        return FOMState(np.zeros(z["u"]), np.zeros(z["ut"]), np.zeros(z["p"]), np.zeros(z["phi"]),
                        np.zeros(z["phihat"]), 0, dt)


class FOMSolver:
    """The four sub-steps of one time step, with cached factorizations."""

    def __init__(self, problem: FlowProblem, cfg: FOMConfig):
        self.pb = problem
        self.cfg = cfg
        pb = problem
        self.g = pb.inflow(cfg.inflow_mean, cfg.inflow_profile)
        self.g_fixed = self.g[pb.dirichlet]
        self.load = (assemble_load(pb.V, cfg.forcing) if cfg.forcing is not None
                     else np.zeros(pb.V.dof_count))
        self.outlet_sys = ConstrainedSystem(cfg.nu * cfg.dt * pb.Sh + pb.Mh, [], cfg.spd_solver)
        self.poisson_sys = ConstrainedSystem(pb.Kp, pb.outlet_p, cfg.spd_solver)
        self.mass_sys = ConstrainedSystem(pb.M, [], cfg.spd_solver)
        self._stokes_sys = None

    def _predictor_system(self, u):
        pb, cfg = self.pb, self.cfg
        base = pb.M / cfg.dt + cfg.nu * pb.K
        if not cfg.convection:
            if self._stokes_sys is None:
                self._stokes_sys = ConstrainedSystem(base, pb.dirichlet, cfg.solver)
            return self._stokes_sys
        A = base + assemble_convection(pb.V, u)
        return ConstrainedSystem(A, pb.dirichlet, cfg.solver)

    def step1_predict(self, state: FOMState, rho=1.0):
        """Predicted velocity with the inflow (scaled by ``rho``) imposed."""
        pb, cfg = self.pb, self.cfg
        rhs = pb.M @ state.u / cfg.dt + pb.B.T @ state.p + self.load
        return self._predictor_system(state.u).solve(rhs, rho * self.g_fixed)

    def step2_outlet(self, ut):
        """Outlet trace of the pressure correction."""
        rhs = -self.cfg.nu * (self.pb.T @ ut)
        return self.outlet_sys.solve(rhs)

    def step3_correction(self, ut, phihat):
        """Pressure correction vanishing on the outlet."""
        pb = self.pb
        rhs = -(pb.B @ ut) / self.cfg.dt - pb.Kp @ (pb.E @ phihat)
        return self.poisson_sys.solve(rhs, 0.0)

    def step4_update(self, state: FOMState, ut, phi, phihat):
        """New pressure and the L2-projected corrected velocity."""
        pb = self.pb
        phibar = phi + pb.E @ phihat
        p_new = state.p + phibar
        rhs = pb.M @ ut - self.cfg.dt * (pb.G @ phibar)
        u_new = self.mass_sys.solve(rhs)
        return u_new, p_new

    def step(self, state: FOMState):
        k = state.step + 1
        try:
            ut = self.step1_predict(state, self.cfg.ramp(k))
            phihat = self.step2_outlet(ut)
            phi = self.step3_correction(ut, phihat)
            u, p = self.step4_update(state, ut, phi, phihat)
        except SolverDiverged as exc:
            raise SolverDiverged(f"step {k}: {exc}", residual=exc.residual, step=k) from None
        if not np.all(np.isfinite(u)):
            raise SolverDiverged(f"step {k}: non-finite velocity", residual=np.inf, step=k)
        return FOMState(u, ut, p, phi, phihat, k, self.cfg.dt)


@dataclass
class FOMResult:
    state: FOMState
    snapshots: SnapshotSet
    qoi: QoISeries
    step_times: list = field(default_factory=list)

    @property
    def wall_time(self):
        return float(sum(self.step_times))


def run_fom(cfg: FOMConfig, mesh: TriMesh | None = None, problem: FlowProblem | None = None,
            record_qoi=True, initial: FOMState | None = None):
    """March the scheme from rest (or ``initial``) to ``t_end``.

    Snapshots of all five fields are stored at the configured steps and
    outputs are recorded after every step. ``step_times`` holds the
    wall-clock of the solver work only.
    """
    pb = problem if problem is not None else FlowProblem(mesh)
    solver = FOMSolver(pb, cfg)
    state = initial.copy() if initial is not None else pb.zero_state(cfg.dt)
    state = replace(state, dt=cfg.dt)
    outputs = FlowOutputs(pb.V, pb.Q, cfg.nu, pb.M, cfg.diameter, cfg.inflow_mean, pb.K, pb.B) \
        if record_qoi else None
    keep = set(cfg.snapshot_steps())
    cols = {name: [] for name in FIELDS}
    times = []
    qoi = QoISeries()
    step_times = []
    while state.step < cfg.n_steps:
        tic = time.perf_counter()
        new = solver.step(state)
        step_times.append(time.perf_counter() - tic)
        if outputs is not None:
            qoi.append(new.t, outputs(new.u, new.p, state.u, cfg.dt))
        if new.step in keep:
            for name in FIELDS:
                cols[name].append(getattr(new, name))
            times.append(new.t)
        state = new
    sizes = pb.sizes()
    fields = {n: (np.column_stack(c) if c else np.zeros((sizes[n], 0))) for n, c in cols.items()}
    snaps = SnapshotSet(fields, np.array(times), cfg.reynolds)
    return FOMResult(state, snaps, qoi, step_times)


def field_of(problem: FlowProblem, name, values):
    """Wrap a coefficient vector of field ``name`` as an FEField (not for the outlet field)."""
    dm = {"u": problem.V, "ut": problem.V, "p": problem.Q, "phi": problem.Q}[name]
    return FEField(dm, values)
