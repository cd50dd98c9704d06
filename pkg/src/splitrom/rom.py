"""Intrusive Galerkin reduced model of the four-step pressure-correction scheme.

The predicted-velocity basis is built from snapshots with the inflow lifting
``rho(t) g`` removed, so its modes vanish on Dirichlet boundaries and are
admissible test functions. Online, every sub-step is a dense solve whose size
is the number of retained modes.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, IncompatibleArtifacts, InvalidInput, ParseError, SingularReducedSystem
from .fem.assembly import assemble_convection, assemble_load
from .fom import FIELDS, FlowProblem, FOMConfig, SnapshotSet
from .pod import InnerProduct, PODBasis, pod, project_field

PAIRINGS = ("h1", "grad")


def lifting(problem: FlowProblem, cfg: FOMConfig):
    return problem.inflow(cfg.inflow_mean, cfg.inflow_profile)


def homogenize(ut_snapshots, times, dt, cfg: FOMConfig, g):
    """Subtract the inflow lifting from predicted-velocity snapshots."""
    rho = np.array([cfg.ramp(int(round(t / dt))) for t in times])
    return ut_snapshots - np.outer(g, rho)


def build_bases(problem: FlowProblem, fields: dict, times, cfg: FOMConfig, r: dict | None = None,
                method="auto"):
    """POD bases of the five fields; ``r[name]=None`` (default) keeps the numerical rank."""
    r = r or {}
    g = lifting(problem, cfg)
    out = {}
    for name in FIELDS:
        data = fields[name]
        if name == "ut":
            data = homogenize(data, times, cfg.dt, cfg, g)
        kind = "L2" if name in ("u", "ut") else "H1"
        out[name] = pod(data, InnerProduct(kind, problem.gram(name)), r.get(name), name, method)
    return out


# ---------------------------------------------------------------------------
# offline projection

BLOCK_ORDER = (
    "Mt", "St", "Dt", "Bt", "Mtu", "gt_mass", "gt_stiff", "gt_conv", "f_t",
    "Mh", "Sh", "Rh", "rh_g",
    "Sphi", "Rphi", "rphi_g", "Pext",
    "Pp", "Qp", "Qtp",
    "Mu", "Mhat_u", "mu_g", "Y", "Yt",
)


@dataclass
class ReducedOperators:
    """Projected blocks of every sub-step plus the data needed to run them.

    ``Dt[k]`` is the predicted-velocity convection matrix for velocity mode k.
    Viscosity is not folded into any block so it can change online.
    """

    blocks: dict
    dt: float
    ramp_steps: int
    pairing: str = "h1"
    convection: bool = True
    tag: str = ""  # content hash of the producing configuration

    def __getattr__(self, name):
        blocks = self.__dict__.get("blocks", {})
        if name in blocks:
            return blocks[name]
        raise AttributeError(name)

    @property
    def dims(self):
        b = self.blocks
        return {"u": b["Mu"].shape[0], "ut": b["Mt"].shape[0], "p": b["Pp"].shape[0],
                "phi": b["Sphi"].shape[0], "phihat": b["Mh"].shape[0]}

    def ramp(self, step):
        if self.ramp_steps <= 0 or step >= self.ramp_steps:
            return 1.0
        return 0.5 * (1.0 - np.cos(np.pi * step / self.ramp_steps))

    def validate(self):
        d = self.dims
        ru, rt, rp, rf, rh = d["u"], d["ut"], d["p"], d["phi"], d["phihat"]
        expect = {
            "Mt": (rt, rt), "St": (rt, rt), "Dt": (ru, rt, rt), "Bt": (rt, rp), "Mtu": (rt, ru),
            "gt_mass": (rt,), "gt_stiff": (rt,), "gt_conv": (rt, ru), "f_t": (rt,),
            "Mh": (rh, rh), "Sh": (rh, rh), "Rh": (rh, rt), "rh_g": (rh,),
            "Sphi": (rf, rf), "Rphi": (rf, rt), "rphi_g": (rf,), "Pext": (rf, rh),
            "Pp": (rp, rp), "Qp": (rp, rf), "Qtp": (rp, rh),
            "Mu": (ru, ru), "Mhat_u": (ru, rt), "mu_g": (ru,), "Y": (ru, rf), "Yt": (ru, rh),
        }
        for name, shape in expect.items():
            if self.blocks[name].shape != shape:
                raise DimensionMismatch(f"block {name} has shape {self.blocks[name].shape}, expected {shape}")


def assemble_reduced(problem: FlowProblem, bases: dict, cfg: FOMConfig, pairing="h1", tag=""):
    """Galerkin projection of all operators of the scheme onto the bases."""
    if pairing not in PAIRINGS:
        raise InvalidInput(f"pressure pairing must be one of {PAIRINGS}")
    pb = problem
    sizes = pb.sizes()
    for name in FIELDS:
        if bases[name].modes.shape[0] != sizes[name]:
            raise DimensionMismatch(f"{name} basis does not match the mesh")
    Phi, Pt = bases["u"].modes, bases["ut"].modes
    Psi, Gam, Gh = bases["p"].modes, bases["phi"].modes, bases["phihat"].modes
    g = lifting(pb, cfg)
    F = assemble_load(pb.V, cfg.forcing) if cfg.forcing is not None else np.zeros(pb.V.dof_count)
    H = pb.H1p if pairing == "h1" else pb.Kp
    EGh = pb.E @ Gh

    blocks = {}
    MPt = pb.M @ Pt
    blocks["Mt"] = Pt.T @ MPt
    blocks["St"] = Pt.T @ (pb.K @ Pt)
    ru, rt = Phi.shape[1], Pt.shape[1]
    Dt = np.zeros((ru, rt, rt))
    gconv = np.zeros((rt, ru))
    if cfg.convection:
        for k in range(ru):
            C = assemble_convection(pb.V, Phi[:, k])
            Dt[k] = Pt.T @ (C @ Pt)
            gconv[:, k] = Pt.T @ (C @ g)
    blocks["Dt"] = Dt
    blocks["Bt"] = Pt.T @ (pb.B.T @ Psi)
    blocks["Mtu"] = MPt.T @ Phi
    blocks["gt_mass"] = MPt.T @ g
    blocks["gt_stiff"] = Pt.T @ (pb.K @ g)
    blocks["gt_conv"] = gconv
    blocks["f_t"] = Pt.T @ F

    blocks["Mh"] = Gh.T @ (pb.Mh @ Gh)
    blocks["Sh"] = Gh.T @ (pb.Sh @ Gh)
    blocks["Rh"] = Gh.T @ (pb.T @ Pt)
    blocks["rh_g"] = Gh.T @ (pb.T @ g)

    KGam = pb.Kp @ Gam
    blocks["Sphi"] = Gam.T @ KGam
    blocks["Rphi"] = Gam.T @ (pb.B @ Pt)
    blocks["rphi_g"] = Gam.T @ (pb.B @ g)
    blocks["Pext"] = KGam.T @ EGh

    HPsi = H @ Psi
    blocks["Pp"] = Psi.T @ HPsi
    blocks["Qp"] = HPsi.T @ Gam
    blocks["Qtp"] = HPsi.T @ EGh

    MPhi = pb.M @ Phi
    blocks["Mu"] = Phi.T @ MPhi
    blocks["Mhat_u"] = MPhi.T @ Pt
    blocks["mu_g"] = MPhi.T @ g
    blocks["Y"] = Phi.T @ (pb.G @ Gam)
    blocks["Yt"] = Phi.T @ (pb.G @ EGh)
    ops = ReducedOperators(blocks, cfg.dt, cfg.ramp_steps, pairing, cfg.convection, tag)
    ops.validate()
    return ops


_OPS_MAGIC = b"ROMOPS01"


def save_operators(path, ops: ReducedOperators):
    """Binary container: header scalars, then each block as (name, ndim, dims, f64 data)."""
    with open(path, "wb") as fh:
        fh.write(_OPS_MAGIC)
        tag = ops.tag.encode()
        fh.write(struct.pack("<dIBBH", ops.dt, ops.ramp_steps, PAIRINGS.index(ops.pairing),
                             int(ops.convection), len(tag)))
        fh.write(tag)
        fh.write(struct.pack("<I", len(BLOCK_ORDER)))
        for name in BLOCK_ORDER:
            arr = np.ascontiguousarray(ops.blocks[name], dtype="<f8")
            key = name.encode()
            fh.write(struct.pack("<B", len(key)) + key)
            fh.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_operators(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != _OPS_MAGIC:
        raise ParseError(f"{path}: not a reduced-operator file")
    try:
        dt, ramp, pairing, conv, ntag = struct.unpack_from("<dIBBH", raw, 8)
        off = 8 + struct.calcsize("<dIBBH")
        tag = raw[off:off + ntag].decode()
        off += ntag
        (nblocks,) = struct.unpack_from("<I", raw, off)
        off += 4
        blocks = {}
        for _ in range(nblocks):
            (klen,) = struct.unpack_from("<B", raw, off)
            name = raw[off + 1:off + 1 + klen].decode()
            off += 1 + klen
            (ndim,) = struct.unpack_from("<B", raw, off)
            shape = struct.unpack_from(f"<{ndim}I", raw, off + 1)
            off += 1 + 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            if off + 8 * count > len(raw):
                raise ParseError(f"{path}: truncated block {name}")
            blocks[name] = np.frombuffer(raw, "<f8", count, off).reshape(shape).copy()
            off += 8 * count
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise ParseError(f"{path}: corrupt reduced-operator file ({exc})") from None
    missing = set(BLOCK_ORDER) - set(blocks)
    if missing:
        raise ParseError(f"{path}: missing blocks {sorted(missing)}")
    ops = ReducedOperators(blocks, dt, ramp, PAIRINGS[pairing], bool(conv), tag)
    ops.validate()
    return ops


# ---------------------------------------------------------------------------
# online phase


@dataclass
class ReducedState:
    a: np.ndarray  # velocity
    at: np.ndarray  # predicted velocity (homogeneous part)
    b: np.ndarray  # pressure
    c: np.ndarray  # pressure correction
    ch: np.ndarray  # outlet trace of the correction
    step: int = 0
    dt: float = 0.0

    @property
    def t(self):
        return self.step * self.dt

    def copy(self):
        return ReducedState(self.a.copy(), self.at.copy(), self.b.copy(), self.c.copy(),
                            self.ch.copy(), self.step, self.dt)


def rom_initialize(u, p, bases: dict, step=0, dt=0.0, pairing="h1", problem: FlowProblem | None = None):
    """Velocity and pressure coefficients by projection; the other coefficients start at zero.

    With ``pairing="grad"`` the pressure coefficients solve the gradient
    (seminorm) normal equations, which needs ``problem`` for the stiffness.
    """
    a = project_field(u, bases["u"])
    if pairing == "h1":
        b = project_field(p, bases["p"])
    elif pairing == "grad":
        if problem is None:
            raise InvalidInput("gradient pairing needs the flow problem")
        Psi = bases["p"].modes
        KPsi = problem.Kp @ Psi
        b = np.linalg.solve(Psi.T @ KPsi, KPsi.T @ np.asarray(p, dtype=float))
    else:
        raise InvalidInput(f"unknown pairing {pairing!r}")
    z = lambda name: np.zeros(bases[name].r)  # noqa: E731
    return ReducedState(a, z("ut"), b, z("phi"), z("phihat"), step, dt)


class _Dense:
    """LU of a small dense matrix; singular pivots raise."""

    def __init__(self, A, what, step=None):
        self.what = what
        if A.shape[0] == 0:
            self.lu = None
            return
        with np.errstate(all="ignore"):
            lu, piv = sla.lu_factor(A, check_finite=False)
        d = np.abs(np.diag(lu))
        if not np.all(np.isfinite(lu)) or d.min() <= 1e-14 * max(d.max(), 1e-300):
            raise SingularReducedSystem(f"{what}: singular reduced matrix", step=step)
        self.lu = (lu, piv)

    def solve(self, rhs, step=None):
        if self.lu is None:
            return np.zeros(0)
        x = sla.lu_solve(self.lu, rhs, check_finite=False)
        if not np.all(np.isfinite(x)):
            raise SingularReducedSystem(f"{self.what}: non-finite solution", step=step)
        return x


class ROMStepper:
    """Reduced sub-steps. ``predict`` and ``update`` are shared with the hybrid model."""

    def __init__(self, ops: ReducedOperators, nu):
        self.ops = ops
        self.nu = float(nu)
        dt = ops.dt
        self.dt = dt
        self._outlet = _Dense(nu * dt * ops.Sh + ops.Mh, "outlet trace")
        self._corr = _Dense(ops.Sphi, "pressure correction")
        self._press = _Dense(ops.Pp, "pressure update")
        self._mass = _Dense(ops.Mu, "velocity update")
        self._base = ops.Mt / dt + self.nu * ops.St
        self._Dflat = ops.Dt.reshape(ops.Dt.shape[0], -1).T  # (rt*rt, ru)
        self.max_residual = 0.0

    def _check(self, A, x, rhs):
        scale = np.linalg.norm(rhs)
        if scale > 0:
            self.max_residual = max(self.max_residual, np.linalg.norm(A @ x - rhs) / scale)

    def predict(self, state: ReducedState, rho):
        o = self.ops
        rt = o.Mt.shape[0]
        A = self._base + (self._Dflat @ state.a).reshape(rt, rt) if o.convection else self._base
        rhs = (o.Mtu @ state.a - rho * o.gt_mass) / self.dt + o.Bt @ state.b \
            - self.nu * rho * o.gt_stiff + o.f_t
        if o.convection:
            rhs = rhs - rho * (o.gt_conv @ state.a)
        x = _Dense(A, "predictor", state.step + 1).solve(rhs, state.step + 1)
        self._check(A, x, rhs)
        return x

    def outlet(self, at, rho):
        o = self.ops
        return self._outlet.solve(-self.nu * (o.Rh @ at + rho * o.rh_g))

    def correct(self, at, ch, rho):
        o = self.ops
        return self._corr.solve(-(o.Rphi @ at + rho * o.rphi_g) / self.dt - o.Pext @ ch)

    def update(self, state: ReducedState, at, c, ch, rho):
        o = self.ops
        b = state.b + self._press.solve(o.Qp @ c + o.Qtp @ ch)
        a = self._mass.solve(o.Mhat_u @ at + rho * o.mu_g - self.dt * (o.Y @ c + o.Yt @ ch))
        return a, b

    def step(self, state: ReducedState):
        k = state.step + 1
        rho = self.ops.ramp(k)
        at = self.predict(state, rho)
        ch = self.outlet(at, rho)
        c = self.correct(at, ch, rho)
        a, b = self.update(state, at, c, ch, rho)
        return ReducedState(a, at, b, c, ch, k, self.dt)


@dataclass
class Trajectory:
    """Coefficient history; row n is the state after n online steps."""

    steps: np.ndarray
    dt: float
    coefs: dict  # name -> (n+1, r)
    step_times: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def times(self):
        return self.steps * self.dt

    @property
    def wall_time(self):
        return float(sum(self.step_times))

    def state(self, n):
        c = self.coefs
        return ReducedState(c["a"][n].copy(), c["at"][n].copy(), c["b"][n].copy(), c["c"][n].copy(),
                            c["ch"][n].copy(), int(self.steps[n]), self.dt)

    def reconstruct(self, name, bases, problem=None, cfg=None):
        """FE fields (columns) of ``name`` in {u, ut, p, phi, phihat}."""
        key = {"u": "a", "ut": "at", "p": "b", "phi": "c", "phihat": "ch"}[name]
        out = bases[name].modes @ self.coefs[key].T
        if name == "ut" and problem is not None:
            g = lifting(problem, cfg)
            out = out + np.outer(g, [cfg.ramp(int(s)) for s in self.steps])
        return out


def _run(state, n_steps, advance):
    if n_steps < 0:
        raise InvalidInput("n_steps must be >= 0")
    rows = {k: [v] for k, v in zip(("a", "at", "b", "c", "ch"),
                                   (state.a, state.at, state.b, state.c, state.ch))}
    steps = [state.step]
    times = []
    for _ in range(n_steps):
        tic = time.perf_counter()
        state = advance(state)
        times.append(time.perf_counter() - tic)
        for k in rows:
            rows[k].append(getattr(state, k))
        steps.append(state.step)
    coefs = {k: np.array(v) for k, v in rows.items()}
    return Trajectory(np.array(steps), state.dt, coefs, times)


def run_rom(initial: ReducedState, ops: ReducedOperators, n_steps, nu):
    """Advance ``n_steps`` intrusive reduced steps; timing covers the loop only."""
    if initial.dt and abs(initial.dt - ops.dt) > 1e-14 * ops.dt:
        raise IncompatibleArtifacts("initial state and operators use different time steps")
    state = initial.copy()
    state.dt = ops.dt
    stepper = ROMStepper(ops, nu)
    traj = _run(state, n_steps, stepper.step)
    traj.extra["max_residual"] = stepper.max_residual
    return traj


def snapshot_coefficients(snaps: SnapshotSet, bases, problem, cfg):
    """Projections of stored FOM fields; ``ut`` uses its homogenized part."""
    g = lifting(problem, cfg)
    out = {}
    for name, key in (("u", "a"), ("ut", "at"), ("p", "b"), ("phi", "c"), ("phihat", "ch")):
        data = snaps[name]
        if name == "ut":
            data = homogenize(data, snaps.times, cfg.dt, cfg, g)
        out[key] = project_field(data, bases[name]).T
    return out
